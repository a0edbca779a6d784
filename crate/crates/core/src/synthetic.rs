//! Seeded corpora sampled from known parameters, for recovery and
//! end-to-end checks.

use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{LabelAssignment, PosteriorDecode};
use crate::error::{Error, Result};
use crate::model::{reference_parameters, Matrix, Modality, ModelParameters, REFERENCE_SOURCES};
use crate::observation::ObservationSequence;
use crate::pipeline::districts::DistrictRecord;
use crate::pipeline::reports::RawReport;
use crate::report::STATE_CODES;

/// District-weeks covered by each reference source over the 2020-21 year.
pub const REFERENCE_COVERAGE: [u64; 4] = [37_589, 58_137, 343_596, 24_732];
/// District-weeks decoded over the 2020-21 year (districts x weeks).
pub const REFERENCE_DISTRICT_WEEKS: u64 = 616_896;

/// Per-channel missingness implied by the reference coverage counts.
pub fn reference_missingness() -> Vec<Missingness> {
    REFERENCE_COVERAGE
        .iter()
        .map(|&c| Missingness::Constant(1.0 - c as f64 / REFERENCE_DISTRICT_WEEKS as f64))
        .collect()
}

/// Monday of the week holding 2020-09-01.
pub fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 8, 31).expect("valid date")
}

/// Weeks `[from_week, to_week)` with their own missingness rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingPeriod {
    pub from_week: usize,
    pub to_week: usize,
    pub rate: f64,
}

/// Probability that a channel's cell is missing in a given week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Missingness {
    Constant(f64),
    /// `base` outside the listed periods; the first matching period wins.
    Piecewise { base: f64, periods: Vec<MissingPeriod> },
}

impl Missingness {
    pub fn rate(&self, week: usize) -> f64 {
        match self {
            Missingness::Constant(p) => *p,
            Missingness::Piecewise { base, periods } => periods
                .iter()
                .find(|p| (p.from_week..p.to_week).contains(&week))
                .map_or(*base, |p| p.rate),
        }
    }

    fn rates(&self) -> Vec<f64> {
        match self {
            Missingness::Constant(p) => vec![*p],
            Missingness::Piecewise { base, periods } => std::iter::once(*base).chain(periods.iter().map(|p| p.rate)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub parameters: ModelParameters,
    pub sources: Vec<String>,
    pub n_districts: usize,
    pub n_weeks: usize,
    /// First day of week 0.
    pub start: NaiveDate,
    /// One schedule per channel.
    pub missingness: Vec<Missingness>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            parameters: reference_parameters(),
            sources: REFERENCE_SOURCES.iter().map(|s| s.to_string()).collect(),
            n_districts: 1000,
            n_weeks: 42,
            start: default_start(),
            missingness: reference_missingness(),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_districts == 0 {
            return Err(Error::config("n_districts", "must be positive"));
        }
        if self.n_weeks == 0 {
            return Err(Error::config("n_weeks", "must be positive"));
        }
        if self.sources.len() != self.parameters.n_channels() {
            return Err(Error::config(
                "sources",
                format!("{} names for {} emission channels", self.sources.len(), self.parameters.n_channels()),
            ));
        }
        if self.missingness.len() != self.parameters.n_channels() {
            return Err(Error::config(
                "missingness",
                format!("{} schedules for {} channels", self.missingness.len(), self.parameters.n_channels()),
            ));
        }
        for (c, m) in self.missingness.iter().enumerate() {
            if let Some(bad) = m.rates().into_iter().find(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::config(format!("missingness[{c}]"), format!("rate {bad} outside [0, 1]")));
            }
            if let Missingness::Piecewise { periods, .. } = m {
                if let Some(p) = periods.iter().find(|p| p.from_week > p.to_week) {
                    return Err(Error::config(
                        format!("missingness[{c}]"),
                        format!("period {}..{} is reversed", p.from_week, p.to_week),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A sampled corpus. `truth[i]` is the hidden path behind `sequences[i]`,
/// whose district is `districts[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub truth: Vec<Vec<usize>>,
    pub sequences: Vec<ObservationSequence>,
    pub districts: Vec<DistrictRecord>,
}

struct Samplers {
    initial: WeightedIndex<f64>,
    transition: Vec<WeightedIndex<f64>>,
    emissions: Vec<Vec<WeightedIndex<f64>>>,
}

fn row_sampler(row: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(row).expect("stochastic row has positive mass")
}

impl Samplers {
    fn new(p: &ModelParameters) -> Self {
        let matrix = |m: &Matrix| m.iter().map(|r| row_sampler(r)).collect::<Vec<_>>();
        Samplers {
            initial: row_sampler(p.initial()),
            transition: matrix(p.transition()),
            emissions: p.emissions().iter().map(matrix).collect(),
        }
    }
}

fn leaid(index: usize) -> String {
    format!("{:07}", index + 1)
}

fn sample_district(cfg: &GeneratorConfig, s: &Samplers, index: usize) -> Result<(Vec<usize>, ObservationSequence, DistrictRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let id = leaid(index);
    let district = DistrictRecord {
        leaid: id.clone(),
        name: format!("Synthetic District {}", index + 1),
        state: STATE_CODES[rng.gen_range(0..STATE_CODES.len())].to_string(),
        agency_type: 1,
        operating_status: 1,
        county_fips: String::new(),
        urban_rural: Some(rng.gen_range(1..=6)),
        enrollment: None,
        school_count: None,
    };
    let n_channels = cfg.parameters.n_channels();
    let mut seq = ObservationSequence::empty(id, cfg.start, cfg.n_weeks, n_channels)?;
    let mut path = Vec::with_capacity(cfg.n_weeks);
    let mut state = s.initial.sample(&mut rng);
    for t in 0..cfg.n_weeks {
        if t > 0 {
            state = s.transition[state].sample(&mut rng);
        }
        path.push(state);
        for c in 0..n_channels {
            let report = s.emissions[c][state].sample(&mut rng);
            let missing = rng.gen::<f64>() < cfg.missingness[c].rate(t);
            if !missing {
                seq.set(t, c, Modality::from_index(report));
            }
        }
    }
    Ok((path, seq, district))
}

/// Sample a corpus. Each district draws from its own stream of a ChaCha8
/// generator seeded with `cfg.seed`, so the result does not depend on how
/// districts are spread over threads.
pub fn generate(cfg: &GeneratorConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let samplers = Samplers::new(&cfg.parameters);
    let drawn = (0..cfg.n_districts)
        .into_par_iter()
        .map(|i| sample_district(cfg, &samplers, i))
        .collect::<Result<Vec<_>>>()?;
    let mut corpus = SyntheticCorpus {
        truth: Vec::with_capacity(drawn.len()),
        sequences: Vec::with_capacity(drawn.len()),
        districts: Vec::with_capacity(drawn.len()),
    };
    for (path, seq, district) in drawn {
        corpus.truth.push(path);
        corpus.sequences.push(seq);
        corpus.districts.push(district);
    }
    Ok(corpus)
}

/// Day of the week on which synthetic reports are dated (0 = first day).
pub const REPORT_DAY_OFFSET: i64 = 2;

impl SyntheticCorpus {
    /// One report per observed cell, dated mid-week.
    pub fn reports(&self) -> Vec<RawReport> {
        let mut out = Vec::new();
        for seq in &self.sequences {
            for t in 0..seq.len() {
                let date = seq.week_start(t) + chrono::Duration::days(REPORT_DAY_OFFSET);
                for (c, cell) in seq.row(t).iter().enumerate() {
                    if let Some(m) = cell {
                        out.push(RawReport {
                            source: c,
                            leaid: seq.entity_id().to_string(),
                            report_date: date,
                            modality: *m,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn write_truth<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRUTH_HEADER)?;
        for (seq, path) in self.sequences.iter().zip(&self.truth) {
            for (t, &s) in path.iter().enumerate() {
                w.write_record([
                    seq.entity_id(),
                    &seq.week_start(t).format("%Y-%m-%d").to_string(),
                    Modality::ALL[s].as_str(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<truth>", e))?;
        Ok(())
    }
}

pub const TRUTH_HEADER: [&str; 3] = ["leaid", "week_start", "true_modality"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthRow {
    pub leaid: String,
    pub week_start: NaiveDate,
    pub modality: Modality,
}

pub fn read_truth<R: Read>(reader: R, path: &Path) -> Result<Vec<TruthRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>() != TRUTH_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`", TRUTH_HEADER.join(",")),
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
        out.push(TruthRow {
            leaid: row[0].to_string(),
            week_start: NaiveDate::parse_from_str(&row[1], "%Y-%m-%d").map_err(|e| fail(format!("week_start: {e}")))?,
            modality: row[2].parse().map_err(|e: Error| fail(e.to_string()))?,
        });
    }
    Ok(out)
}

/// Largest absolute entrywise errors of aligned fitted parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryScore {
    pub initial: f64,
    pub transition: f64,
    pub emissions: Vec<f64>,
}

impl RecoveryScore {
    pub fn max_emission(&self) -> f64 {
        self.emissions.iter().copied().fold(0.0, f64::max)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn matrix_error(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b).map(|(x, y)| max_abs_diff(x, y)).fold(0.0, f64::max)
}

/// Compare `fitted`, relabeled by `assignment`, against `truth`.
pub fn score_recovery(truth: &ModelParameters, fitted: &ModelParameters, assignment: &LabelAssignment) -> Result<RecoveryScore> {
    if truth.n_channels() != fitted.n_channels() {
        return Err(Error::invalid(format!(
            "truth has {} channels, fitted parameters have {}",
            truth.n_channels(),
            fitted.n_channels()
        )));
    }
    let aligned = assignment.apply(fitted);
    Ok(RecoveryScore {
        initial: max_abs_diff(truth.initial(), aligned.initial()),
        transition: matrix_error(truth.transition(), aligned.transition()),
        emissions: truth
            .emissions()
            .iter()
            .zip(aligned.emissions())
            .map(|(a, b)| matrix_error(a, b))
            .collect(),
    })
}

/// Decode accuracy against the generating paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecodeAccuracy {
    pub weeks: usize,
    pub correct: usize,
    pub high_confidence_weeks: usize,
    pub high_confidence_correct: usize,
}

impl DecodeAccuracy {
    pub fn overall(&self) -> f64 {
        self.correct as f64 / self.weeks as f64
    }

    pub fn high_confidence(&self) -> f64 {
        self.high_confidence_correct as f64 / self.high_confidence_weeks as f64
    }
}

/// Score labeled decodes against truth paths given in the same order.
pub fn decode_accuracy(decodes: &[PosteriorDecode], truth: &[Vec<usize>]) -> Result<DecodeAccuracy> {
    if decodes.len() != truth.len() {
        return Err(Error::invalid(format!("{} decodes for {} truth paths", decodes.len(), truth.len())));
    }
    let mut acc = DecodeAccuracy {
        weeks: 0,
        correct: 0,
        high_confidence_weeks: 0,
        high_confidence_correct: 0,
    };
    for (d, path) in decodes.iter().zip(truth) {
        if d.per_week.len() != path.len() {
            return Err(Error::invalid(format!("decode of `{}` has the wrong length", d.entity_id)));
        }
        for (w, &s) in d.per_week.iter().zip(path) {
            let ok = (w.state == s) as usize;
            acc.weeks += 1;
            acc.correct += ok;
            if w.high_confidence {
                acc.high_confidence_weeks += 1;
                acc.high_confidence_correct += ok;
            }
        }
    }
    Ok(acc)
}
