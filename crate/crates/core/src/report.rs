//! Weekly modality shares, nationally or by state or urban-rural class.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::decode::DecodeRow;
use crate::error::{Error, Result};
use crate::model::NUM_STATES;
use crate::pipeline::districts::DistrictRecord;

pub const NATIONAL: &str = "national";
pub const UNKNOWN_STRATUM: &str = "unknown";

/// Urban-rural classes 1..=6.
pub const URBAN_RURAL_LABELS: [&str; 6] = [
    "large central metro",
    "large fringe metro",
    "medium metro",
    "small metro",
    "micropolitan",
    "non-core",
];

/// Postal codes of states, DC and territories.
pub(crate) const STATE_CODES: [&str; 56] = [
    "AK", "AL", "AR", "AS", "AZ", "CA", "CO", "CT", "DC", "DE", "FL", "GA", "GU", "HI", "IA", "ID", "IL", "IN", "KS",
    "KY", "LA", "MA", "MD", "ME", "MI", "MN", "MO", "MP", "MS", "MT", "NC", "ND", "NE", "NH", "NJ", "NM", "NV", "NY",
    "OH", "OK", "OR", "PA", "PR", "RI", "SC", "SD", "TN", "TX", "UT", "VA", "VI", "VT", "WA", "WI", "WV", "WY",
];

pub const TREND_HEADER: [&str; 5] = ["week_start", "stratum", "pct_remote", "pct_hybrid", "pct_inperson"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratifier {
    #[default]
    None,
    State,
    UrbanRural,
}

impl std::str::FromStr for Stratifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Stratifier::None),
            "state" => Ok(Stratifier::State),
            "urban_rural" | "urban-rural" => Ok(Stratifier::UrbanRural),
            other => Err(Error::invalid(format!("unknown stratifier `{other}` (expected none, state or urban_rural)"))),
        }
    }
}

fn state_stratum(d: Option<&DistrictRecord>) -> String {
    match d {
        Some(d) if STATE_CODES.contains(&d.state.as_str()) => d.state.clone(),
        _ => UNKNOWN_STRATUM.to_string(),
    }
}

fn stratum_of(d: Option<&DistrictRecord>, by: Stratifier) -> String {
    match by {
        Stratifier::None => NATIONAL.to_string(),
        Stratifier::State => state_stratum(d),
        Stratifier::UrbanRural => match d.and_then(|d| d.urban_rural) {
            Some(u @ 1..=6) => URBAN_RURAL_LABELS[u as usize - 1].to_string(),
            _ => UNKNOWN_STRATUM.to_string(),
        },
    }
}

/// Decoded districts that would land in the unknown stratum.
pub fn districts_missing_stratum(decodes: &[DecodeRow], districts: &[DistrictRecord], by: Stratifier) -> Vec<String> {
    let meta: HashMap<&str, &DistrictRecord> = districts.iter().map(|d| (d.leaid.as_str(), d)).collect();
    let ids: BTreeSet<&str> = decodes.iter().map(|r| r.leaid.as_str()).collect();
    ids.into_iter()
        .filter(|id| stratum_of(meta.get(id).copied(), by) == UNKNOWN_STRATUM && by != Stratifier::None)
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendRow {
    pub week_start: NaiveDate,
    pub stratum: String,
    pub n_districts: usize,
    /// Percent remote, hybrid, in-person; `None` when no district was decoded.
    pub percentages: Option<[f64; NUM_STATES]>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrendReport {
    pub rows: Vec<TrendRow>,
}

impl TrendReport {
    pub fn get(&self, week_start: NaiveDate, stratum: &str) -> Option<&TrendRow> {
        self.rows.iter().find(|r| r.week_start == week_start && r.stratum == stratum)
    }

    pub fn write<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TREND_HEADER)?;
        for r in &self.rows {
            let mut rec = vec![r.week_start.format("%Y-%m-%d").to_string(), r.stratum.clone()];
            match r.percentages {
                Some(p) => rec.extend(p.iter().map(|v| format!("{v:.4}"))),
                None => rec.extend([String::new(), String::new(), String::new()]),
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<trend>", e))?;
        Ok(())
    }
}

/// Every stratum that should appear on the axis, in output order.
fn axis(by: Stratifier, districts: &[DistrictRecord], used: &BTreeSet<String>) -> Vec<String> {
    let mut strata: Vec<String> = match by {
        Stratifier::None => vec![NATIONAL.to_string()],
        Stratifier::State => districts
            .iter()
            .map(|d| state_stratum(Some(d)))
            .chain(used.iter().cloned())
            .filter(|s| s != UNKNOWN_STRATUM)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        Stratifier::UrbanRural => URBAN_RURAL_LABELS.iter().map(|s| s.to_string()).collect(),
    };
    if used.contains(UNKNOWN_STRATUM) {
        strata.push(UNKNOWN_STRATUM.to_string());
    }
    strata
}

/// Percentage of decoded districts in each modality, per week and stratum.
/// Strata without decoded districts in a week get `None`.
pub fn trend_report(decodes: &[DecodeRow], districts: &[DistrictRecord], by: Stratifier) -> TrendReport {
    let meta: HashMap<&str, &DistrictRecord> = districts.iter().map(|d| (d.leaid.as_str(), d)).collect();
    let mut counts: BTreeMap<(NaiveDate, String), [usize; NUM_STATES]> = BTreeMap::new();
    let mut weeks = BTreeSet::new();
    let mut used = BTreeSet::new();
    for r in decodes {
        let stratum = stratum_of(meta.get(r.leaid.as_str()).copied(), by);
        weeks.insert(r.week_start);
        counts.entry((r.week_start, stratum.clone())).or_default()[r.modality.index()] += 1;
        used.insert(stratum);
    }
    let strata = axis(by, districts, &used);
    let mut rows = Vec::with_capacity(weeks.len() * strata.len());
    for week in weeks {
        for s in &strata {
            let c = counts.get(&(week, s.clone())).copied().unwrap_or_default();
            let n: usize = c.iter().sum();
            let percentages = (n > 0).then(|| c.map(|k| 100.0 * k as f64 / n as f64));
            rows.push(TrendRow {
                week_start: week,
                stratum: s.clone(),
                n_districts: n,
                percentages,
            });
        }
    }
    TrendReport { rows }
}

/// State shares at the decoded weeks containing each requested date.
pub fn state_snapshot(decodes: &[DecodeRow], districts: &[DistrictRecord], dates: &[NaiveDate]) -> Result<TrendReport> {
    let weeks: BTreeSet<NaiveDate> = decodes.iter().map(|r| r.week_start).collect();
    let mut wanted = BTreeSet::new();
    for &date in dates {
        let week = weeks
            .range(..=date)
            .next_back()
            .filter(|w| date < **w + chrono::Duration::days(7))
            .ok_or_else(|| Error::invalid(format!("snapshot date {date} is outside the decoded weeks")))?;
        wanted.insert(*week);
    }
    let full = trend_report(decodes, districts, Stratifier::State);
    Ok(TrendReport {
        rows: full.rows.into_iter().filter(|r| wanted.contains(&r.week_start)).collect(),
    })
}
