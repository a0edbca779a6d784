//! Cluster-to-label alignment and per-week decoding.

use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{argmax, forward_backward_log, viterbi_log, LogParams};
use crate::model::{Modality, ModelParameters, Row, NUM_STATES};
use crate::observation::ObservationSequence;

/// Default minimum posterior mass for a high-confidence decode.
pub const DEFAULT_THRESHOLD: f64 = 0.75;

/// All bijections of three labels in lexicographic order.
const PERMUTATIONS: [[usize; NUM_STATES]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Mapping from hidden-state (cluster) index to modality label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelAssignment {
    /// `mapping[cluster]` is the modality index assigned to that cluster.
    pub mapping: [usize; NUM_STATES],
    /// `histograms[cluster][k]`: reports of category `k` in weeks decoded as `cluster`.
    pub histograms: [[u64; NUM_STATES]; NUM_STATES],
}

impl LabelAssignment {
    pub fn identity() -> Self {
        LabelAssignment {
            mapping: [0, 1, 2],
            histograms: [[0; NUM_STATES]; NUM_STATES],
        }
    }

    pub fn label(&self, cluster: usize) -> Modality {
        Modality::from_index(self.mapping[cluster]).expect("mapping is a bijection")
    }

    /// Reorder fitted parameters so that state `k` is `Modality::ALL[k]`.
    pub fn apply(&self, params: &ModelParameters) -> ModelParameters {
        params.permute_states(&self.mapping)
    }

    /// Total number of reports that agree with their week's assigned label.
    pub fn matches(&self) -> u64 {
        (0..NUM_STATES).map(|c| self.histograms[c][self.mapping[c]]).sum()
    }
}

/// Choose the cluster-to-label bijection that maximizes the number of reports
/// agreeing with the label of their week's decoded cluster.
///
/// `states[i]` holds one decoded cluster per week of `sequences[i]`. Ties
/// between bijections go to the lexicographically smallest mapping.
pub fn assign_labels(states: &[Vec<usize>], sequences: &[ObservationSequence]) -> Result<LabelAssignment> {
    if states.len() != sequences.len() {
        return Err(Error::invalid(format!(
            "{} decoded paths for {} sequences",
            states.len(),
            sequences.len()
        )));
    }
    let mut histograms = [[0u64; NUM_STATES]; NUM_STATES];
    let mut total = 0u64;
    for (path, seq) in states.iter().zip(sequences) {
        if path.len() != seq.len() {
            return Err(Error::invalid(format!(
                "decoded path for `{}` has {} weeks, sequence has {}",
                seq.entity_id(),
                path.len(),
                seq.len()
            )));
        }
        for (t, row) in seq.rows().enumerate() {
            let cluster = path[t];
            if cluster >= NUM_STATES {
                return Err(Error::invalid(format!("cluster index {cluster} out of range")));
            }
            for m in row.iter().flatten() {
                histograms[cluster][m.index()] += 1;
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::invalid("cannot assign labels: no reports in any sequence"));
    }
    let mut best = LabelAssignment {
        mapping: PERMUTATIONS[0],
        histograms,
    };
    let mut best_score = best.matches();
    for perm in &PERMUTATIONS[1..] {
        let candidate = LabelAssignment {
            mapping: *perm,
            histograms,
        };
        let score = candidate.matches();
        if score > best_score {
            best = candidate;
            best_score = score;
        }
    }
    Ok(best)
}

/// Decode with unlabeled fitted parameters, choose labels, and return the
/// parameters reordered so that state `k` is `Modality::ALL[k]`.
pub fn label_model(
    params: &ModelParameters,
    sequences: &[ObservationSequence],
    mode: DecodeMode,
) -> Result<(LabelAssignment, ModelParameters)> {
    let decodes = decode_all(params, sequences, mode, DEFAULT_THRESHOLD)?;
    let states: Vec<Vec<usize>> = decodes.iter().map(PosteriorDecode::states).collect();
    let assignment = assign_labels(&states, sequences)?;
    let labeled = assignment.apply(params);
    Ok((assignment, labeled))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Per-week argmax of the smoothed marginals.
    #[default]
    Posterior,
    /// Jointly most probable path.
    Viterbi,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "posterior" => Ok(DecodeMode::Posterior),
            "viterbi" => Ok(DecodeMode::Viterbi),
            other => Err(Error::invalid(format!("unknown decode mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeekDecode {
    pub week: usize,
    pub posterior: Row,
    pub state: usize,
    /// Posterior mass of `state`.
    pub confidence: f64,
    pub high_confidence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDecode {
    pub entity_id: String,
    pub start: NaiveDate,
    pub per_week: Vec<WeekDecode>,
}

impl PosteriorDecode {
    pub fn states(&self) -> Vec<usize> {
        self.per_week.iter().map(|w| w.state).collect()
    }

    pub fn week_start(&self, week: usize) -> NaiveDate {
        self.start + chrono::Duration::weeks(week as i64)
    }

    /// Flat rows, reading state indices as modality labels.
    pub fn rows(&self) -> impl Iterator<Item = DecodeRow> + '_ {
        self.per_week.iter().map(move |w| DecodeRow {
            leaid: self.entity_id.clone(),
            week_start: self.week_start(w.week),
            modality: Modality::from_index(w.state).expect("valid state"),
            posterior: w.posterior,
            high_confidence: w.high_confidence,
        })
    }
}

fn decode_one(lp: &LogParams, seq: &ObservationSequence, mode: DecodeMode, threshold: f64) -> Result<PosteriorDecode> {
    let post = forward_backward_log(lp, seq).map_err(|e| e.with_entity(seq.entity_id()))?;
    let path = match mode {
        DecodeMode::Posterior => post.state.iter().map(argmax).collect(),
        DecodeMode::Viterbi => viterbi_log(lp, seq).map_err(|e| e.with_entity(seq.entity_id()))?.0,
    };
    let per_week = post
        .state
        .iter()
        .zip(path)
        .enumerate()
        .map(|(week, (g, state))| WeekDecode {
            week,
            posterior: *g,
            state,
            confidence: g[state],
            high_confidence: g[state] >= threshold,
        })
        .collect();
    Ok(PosteriorDecode {
        entity_id: seq.entity_id().to_string(),
        start: seq.start(),
        per_week,
    })
}

/// Decode every sequence. Output order follows input order.
pub fn decode_all(
    params: &ModelParameters,
    sequences: &[ObservationSequence],
    mode: DecodeMode,
    threshold: f64,
) -> Result<Vec<PosteriorDecode>> {
    if let Some(s) = sequences.iter().find(|s| s.n_channels() != params.n_channels()) {
        return Err(Error::invalid(format!(
            "sequence `{}` has {} channels but the model has {}",
            s.entity_id(),
            s.n_channels(),
            params.n_channels()
        )));
    }
    let lp = LogParams::new(params);
    sequences
        .par_iter()
        .map(|s| decode_one(&lp, s, mode, threshold))
        .collect()
}

/// One line of the decode file.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRow {
    pub leaid: String,
    pub week_start: NaiveDate,
    pub modality: Modality,
    pub posterior: Row,
    pub high_confidence: bool,
}

pub const DECODE_HEADER: [&str; 7] = [
    "leaid",
    "week_start",
    "modality",
    "p_remote",
    "p_hybrid",
    "p_inperson",
    "high_confidence",
];

pub fn write_decodes<W: std::io::Write>(writer: W, decodes: &[PosteriorDecode]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DECODE_HEADER)?;
    for d in decodes {
        for r in d.rows() {
            w.write_record([
                r.leaid,
                r.week_start.format("%Y-%m-%d").to_string(),
                r.modality.to_string(),
                format!("{:.6}", r.posterior[0]),
                format!("{:.6}", r.posterior[1]),
                format!("{:.6}", r.posterior[2]),
                r.high_confidence.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<decodes>", e))?;
    Ok(())
}

pub fn read_decodes<R: Read>(reader: R, path: &Path) -> Result<Vec<DecodeRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != DECODE_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`", DECODE_HEADER.join(",")),
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
        let week_start = NaiveDate::parse_from_str(&row[1], "%Y-%m-%d").map_err(|e| fail(format!("week_start: {e}")))?;
        let modality: Modality = row[2].parse().map_err(|e: Error| fail(e.to_string()))?;
        let mut posterior = [0.0; NUM_STATES];
        for k in 0..NUM_STATES {
            posterior[k] = row[3 + k].parse().map_err(|_| fail(format!("probability `{}`", &row[3 + k])))?;
        }
        let high_confidence = row[6].parse().map_err(|_| fail(format!("high_confidence `{}`", &row[6])))?;
        out.push(DecodeRow {
            leaid: row[0].to_string(),
            week_start,
            modality,
            posterior,
            high_confidence,
        });
    }
    Ok(out)
}

pub fn load_decodes(path: &Path) -> Result<Vec<DecodeRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_decodes(std::io::BufReader::new(file), path)
}
