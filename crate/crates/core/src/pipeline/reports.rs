use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::model::{Modality, NUM_STATES};
use crate::pipeline::config::{PipelineConfig, StudyWindow};

pub const REPORTS_HEADER: [&str; 4] = ["source", "leaid", "report_date", "modality"];

/// One dated modality report from one source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawReport {
    /// Index into the configured source order.
    pub source: usize,
    pub leaid: String,
    pub report_date: NaiveDate,
    pub modality: Modality,
}

/// Parse a reports file. Unknown sources, dates or modality strings are
/// errors that name the offending line.
pub fn read_reports<R: Read>(reader: R, path: &Path, config: &PipelineConfig) -> Result<Vec<RawReport>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != REPORTS_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`", REPORTS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let fail = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if row.len() != REPORTS_HEADER.len() {
            return Err(fail(format!("expected 4 fields, found {}", row.len())));
        }
        let source_name = row[0].trim();
        let source = config
            .source_index(source_name)
            .ok_or_else(|| fail(format!("source `{source_name}` is not in the configured source list")))?;
        let leaid = row[1].trim();
        if leaid.is_empty() {
            return Err(fail("empty leaid".into()));
        }
        let report_date = NaiveDate::parse_from_str(row[2].trim(), "%Y-%m-%d")
            .map_err(|e| fail(format!("report_date `{}`: {e}", row[2].trim())))?;
        let modality = config
            .normalize_modality(&row[3])
            .ok_or_else(|| fail(format!("modality `{}` has no entry in the normalization table", row[3].trim())))?;
        out.push(RawReport {
            source,
            leaid: leaid.to_string(),
            report_date,
            modality,
        });
    }
    Ok(out)
}

pub fn load_reports(path: &Path, config: &PipelineConfig) -> Result<Vec<RawReport>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_reports(std::io::BufReader::new(file), path, config)
}

pub fn write_reports<W: std::io::Write>(writer: W, reports: &[RawReport], sources: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORTS_HEADER)?;
    for r in reports {
        w.write_record([
            sources[r.source].as_str(),
            r.leaid.as_str(),
            &r.report_date.format("%Y-%m-%d").to_string(),
            r.modality.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<reports>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub source: usize,
    pub leaid: String,
    /// Week ordinal within the study window.
    pub week: usize,
}

/// At most one modality per (source, district, week).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeeklyCells {
    pub cells: BTreeMap<CellKey, Modality>,
    /// Reports dated outside the window, dropped during aggregation.
    pub out_of_window: usize,
}

impl WeeklyCells {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Collapse same-date reports: majority, or hybrid when the top count is shared.
fn resolve_same_day(modalities: &[Modality]) -> Modality {
    let mut counts = [0usize; NUM_STATES];
    for m in modalities {
        counts[m.index()] += 1;
    }
    let top = *counts.iter().max().expect("non-empty");
    let winners: Vec<usize> = (0..NUM_STATES).filter(|&k| counts[k] == top).collect();
    if winners.len() == 1 {
        Modality::from_index(winners[0]).expect("valid index")
    } else {
        Modality::Hybrid
    }
}

/// Reduce dated reports to one modality per (source, district, week).
///
/// Within a cell the report with the latest date wins; several reports on that
/// date are resolved by majority, and a tied majority yields hybrid. The
/// result does not depend on input order.
pub fn aggregate_to_weeks(reports: &[RawReport], window: &StudyWindow) -> WeeklyCells {
    let mut latest: BTreeMap<CellKey, (NaiveDate, Vec<Modality>)> = BTreeMap::new();
    let mut out_of_window = 0;
    for r in reports {
        let Some(week) = window.week_index(r.report_date) else {
            out_of_window += 1;
            continue;
        };
        let key = CellKey {
            source: r.source,
            leaid: r.leaid.clone(),
            week,
        };
        let entry = latest.entry(key).or_insert_with(|| (r.report_date, Vec::new()));
        if r.report_date > entry.0 {
            *entry = (r.report_date, vec![r.modality]);
        } else if r.report_date == entry.0 {
            entry.1.push(r.modality);
        }
    }
    WeeklyCells {
        cells: latest
            .into_iter()
            .map(|(k, (_, ms))| (k, resolve_same_day(&ms)))
            .collect(),
        out_of_window,
    }
}
