use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;

use crate::error::Result;
use crate::observation::ObservationSequence;
use crate::pipeline::config::StudyWindow;
use crate::pipeline::districts::Eligibility;
use crate::pipeline::reports::WeeklyCells;

#[derive(Debug, Clone)]
pub struct SequenceBuild {
    /// One per eligible district with at least one report, ordered by leaid.
    pub sequences: Vec<ObservationSequence>,
    /// Districts that report but are absent from the metadata.
    pub unknown_districts: Vec<String>,
    /// Cells dropped because their district is known but ineligible.
    pub ineligible_cells: usize,
}

/// Lay weekly cells out as one full-window grid per eligible district.
pub fn build_sequences(
    cells: &WeeklyCells,
    eligibility: &Eligibility,
    n_sources: usize,
    window: &StudyWindow,
) -> Result<SequenceBuild> {
    let eligible: HashSet<&str> = eligibility.eligible.iter().map(|d| d.leaid.as_str()).collect();
    let excluded: HashSet<&str> = eligibility.excluded.iter().map(|e| e.leaid.as_str()).collect();
    let n_weeks = window.n_weeks();
    let start = window.first_week();

    let mut grids: BTreeMap<&str, ObservationSequence> = BTreeMap::new();
    let mut unknown = BTreeSet::new();
    let mut ineligible_cells = 0;
    for (key, modality) in &cells.cells {
        let id = key.leaid.as_str();
        if !eligible.contains(id) {
            if excluded.contains(id) {
                ineligible_cells += 1;
            } else {
                unknown.insert(id.to_string());
            }
            continue;
        }
        if key.source >= n_sources || key.week >= n_weeks {
            return Err(crate::Error::invalid(format!(
                "cell {key:?} outside {n_sources} sources x {n_weeks} weeks"
            )));
        }
        let seq = match grids.get_mut(id) {
            Some(s) => s,
            None => grids
                .entry(id)
                .or_insert(ObservationSequence::empty(id, start, n_weeks, n_sources)?),
        };
        seq.set(key.week, key.source, Some(*modality));
    }
    Ok(SequenceBuild {
        sequences: grids.into_values().collect(),
        unknown_districts: unknown.into_iter().collect(),
        ineligible_cells,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceCoverage {
    pub source: String,
    pub districts: usize,
    pub district_weeks: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoverageSummary {
    pub per_source: Vec<SourceCoverage>,
    /// Districts with at least one report from any source.
    pub union_districts: usize,
    /// District-weeks with at least one report from any source.
    pub union_district_weeks: usize,
    /// District-weeks the model decodes: every week of every sequence.
    pub decodable_district_weeks: usize,
}

pub fn coverage_summary(sequences: &[ObservationSequence], sources: &[String]) -> CoverageSummary {
    let mut per_source: Vec<SourceCoverage> = sources
        .iter()
        .map(|s| SourceCoverage {
            source: s.clone(),
            districts: 0,
            district_weeks: 0,
        })
        .collect();
    let mut union_districts = 0;
    let mut union_weeks = 0;
    let mut decodable = 0;
    for seq in sequences {
        decodable += seq.len();
        let mut any = false;
        for (c, cov) in per_source.iter_mut().enumerate().take(seq.n_channels()) {
            let n = seq.channel_observed_count(c);
            if n > 0 {
                cov.districts += 1;
                cov.district_weeks += n;
                any = true;
            }
        }
        if any {
            union_districts += 1;
        }
        union_weeks += seq.rows().filter(|r| r.iter().any(Option::is_some)).count();
    }
    CoverageSummary {
        per_source,
        union_districts,
        union_district_weeks: union_weeks,
        decodable_district_weeks: decodable,
    }
}
