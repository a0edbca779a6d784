use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::config::EligibilityRules;

/// Column order of the metadata file.
pub const METADATA_HEADER: [&str; 9] = [
    "leaid",
    "name",
    "state",
    "agency_type",
    "operating_status",
    "county_fips",
    "urban_rural",
    "enrollment",
    "school_count",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistrictRecord {
    pub leaid: String,
    pub name: String,
    pub state: String,
    pub agency_type: i64,
    pub operating_status: i64,
    pub county_fips: String,
    /// 1 = large central metro ... 6 = non-core.
    pub urban_rural: Option<u8>,
    pub enrollment: Option<u64>,
    pub school_count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ExclusionReason {
    AgencyType(i64),
    OperatingStatus(i64),
    Keyword(String),
    Duplicate,
    Unparseable(String),
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExclusionReason::AgencyType(t) => write!(f, "agency_type {t} not eligible"),
            ExclusionReason::OperatingStatus(s) => write!(f, "operating_status {s} not eligible"),
            ExclusionReason::Keyword(k) => write!(f, "name contains keyword `{k}`"),
            ExclusionReason::Duplicate => f.write_str("duplicate leaid"),
            ExclusionReason::Unparseable(m) => write!(f, "unparseable: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exclusion {
    pub leaid: String,
    /// Line in the metadata file, when the exclusion happened while reading it.
    pub line: Option<u64>,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Default)]
pub struct Eligibility {
    pub eligible: Vec<DistrictRecord>,
    pub excluded: Vec<Exclusion>,
}

fn name_keyword<'a>(name: &str, keywords: &'a [String]) -> Option<&'a str> {
    let words: Vec<String> = name
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    keywords
        .iter()
        .find(|k| words.iter().any(|w| *w == k.to_lowercase()))
        .map(String::as_str)
}

/// Why `d` is ineligible, checking agency type, then status, then name.
pub fn exclusion_reason(d: &DistrictRecord, rules: &EligibilityRules) -> Option<ExclusionReason> {
    if !rules.agency_types.contains(&d.agency_type) {
        return Some(ExclusionReason::AgencyType(d.agency_type));
    }
    if !rules.operating_statuses.contains(&d.operating_status) {
        return Some(ExclusionReason::OperatingStatus(d.operating_status));
    }
    name_keyword(&d.name, &rules.exclusion_keywords).map(|k| ExclusionReason::Keyword(k.to_string()))
}

/// Split districts into eligible and excluded. Keywords match whole words,
/// case-insensitively.
pub fn filter_eligible(districts: &[DistrictRecord], rules: &EligibilityRules) -> Eligibility {
    let mut out = Eligibility::default();
    for d in districts {
        match exclusion_reason(d, rules) {
            None => out.eligible.push(d.clone()),
            Some(reason) => out.excluded.push(Exclusion {
                leaid: d.leaid.clone(),
                line: None,
                reason,
            }),
        }
    }
    out
}

/// Parsed metadata plus rows that could not be used.
#[derive(Debug, Clone, Default)]
pub struct MetadataLoad {
    pub records: Vec<DistrictRecord>,
    pub rejected: Vec<Exclusion>,
}

fn opt_field<T: std::str::FromStr>(raw: &str, what: &str) -> std::result::Result<Option<T>, String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse().map(Some).map_err(|_| format!("{what} `{raw}` is not a valid value"))
}

fn parse_record(row: &csv::StringRecord) -> std::result::Result<DistrictRecord, String> {
    if row.len() != METADATA_HEADER.len() {
        return Err(format!("expected {} fields, found {}", METADATA_HEADER.len(), row.len()));
    }
    let leaid = row[0].trim().to_string();
    if leaid.is_empty() {
        return Err("empty leaid".into());
    }
    let agency_type = opt_field(&row[3], "agency_type")?.ok_or("agency_type is required")?;
    let operating_status = opt_field(&row[4], "operating_status")?.ok_or("operating_status is required")?;
    let urban_rural: Option<u8> = opt_field(&row[6], "urban_rural")?;
    if let Some(u) = urban_rural {
        if !(1..=6).contains(&u) {
            return Err(format!("urban_rural {u} outside 1..=6"));
        }
    }
    Ok(DistrictRecord {
        leaid,
        name: row[1].trim().to_string(),
        state: row[2].trim().to_uppercase(),
        agency_type,
        operating_status,
        county_fips: row[5].trim().to_string(),
        urban_rural,
        enrollment: opt_field(&row[7], "enrollment")?,
        school_count: opt_field(&row[8], "school_count")?,
    })
}

/// Read a metadata file. Malformed and duplicate rows are reported, not fatal;
/// a wrong header is.
pub fn read_metadata<R: Read>(reader: R, path: &Path) -> Result<MetadataLoad> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != METADATA_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`", METADATA_HEADER.join(",")),
        });
    }
    let mut out = MetadataLoad::default();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        match parse_record(&row) {
            Ok(rec) => {
                if seen.insert(rec.leaid.clone()) {
                    out.records.push(rec);
                } else {
                    out.rejected.push(Exclusion {
                        leaid: rec.leaid,
                        line: Some(line),
                        reason: ExclusionReason::Duplicate,
                    });
                }
            }
            Err(message) => out.rejected.push(Exclusion {
                leaid: row.get(0).unwrap_or("").trim().to_string(),
                line: Some(line),
                reason: ExclusionReason::Unparseable(message),
            }),
        }
    }
    Ok(out)
}

pub fn load_metadata(path: &Path) -> Result<MetadataLoad> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_metadata(std::io::BufReader::new(file), path)
}

fn opt_to_string<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

pub fn write_metadata<W: std::io::Write>(writer: W, districts: &[DistrictRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METADATA_HEADER)?;
    for d in districts {
        w.write_record([
            d.leaid.clone(),
            d.name.clone(),
            d.state.clone(),
            d.agency_type.to_string(),
            d.operating_status.to_string(),
            d.county_fips.clone(),
            opt_to_string(&d.urban_rural),
            opt_to_string(&d.enrollment),
            opt_to_string(&d.school_count),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<metadata>", e))?;
    Ok(())
}
