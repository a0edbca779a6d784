//! Multi-sequence Baum-Welch.
//!
//! The E-step is computed per sequence and merged in input order, so serial
//! and parallel runs produce bit-identical parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::{forward_backward_log, LogParams};
use crate::model::{Matrix, ModelParameters, Row, NUM_STATES};
use crate::observation::ObservationSequence;

const N: usize = NUM_STATES;

/// Expected counts from the E-step. Adding two of these gives the statistics
/// of the union of their sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStatistics {
    pub start: Row,
    pub transitions: Matrix,
    /// `emissions[c][i][k]`: expected number of weeks in state `i` where channel `c` reported `k`.
    pub emissions: Vec<Matrix>,
    pub log_likelihood: f64,
}

impl SufficientStatistics {
    pub fn zeros(n_channels: usize) -> Self {
        SufficientStatistics {
            start: [0.0; N],
            transitions: [[0.0; N]; N],
            emissions: vec![[[0.0; N]; N]; n_channels],
            log_likelihood: 0.0,
        }
    }

    pub fn merge(&mut self, other: &SufficientStatistics) {
        assert_eq!(self.emissions.len(), other.emissions.len(), "channel count mismatch");
        for i in 0..N {
            self.start[i] += other.start[i];
            for j in 0..N {
                self.transitions[i][j] += other.transitions[i][j];
            }
        }
        for (a, b) in self.emissions.iter_mut().zip(&other.emissions) {
            for i in 0..N {
                for k in 0..N {
                    a[i][k] += b[i][k];
                }
            }
        }
        self.log_likelihood += other.log_likelihood;
    }
}

pub(crate) fn accumulate_log(lp: &LogParams, seq: &ObservationSequence) -> Result<SufficientStatistics> {
    let post = forward_backward_log(lp, seq).map_err(|e| e.with_entity(seq.entity_id()))?;
    let mut stats = SufficientStatistics::zeros(seq.n_channels());
    stats.start = post.state[0];
    for x in &post.pairwise {
        for i in 0..N {
            for j in 0..N {
                stats.transitions[i][j] += x[i][j];
            }
        }
    }
    for (t, row) in seq.rows().enumerate() {
        let g = &post.state[t];
        for (c, cell) in row.iter().enumerate() {
            if let Some(k) = cell {
                for i in 0..N {
                    stats.emissions[c][i][k.index()] += g[i];
                }
            }
        }
    }
    stats.log_likelihood = post.log_likelihood;
    Ok(stats)
}

/// E-step for one sequence.
pub fn accumulate_statistics(params: &ModelParameters, seq: &ObservationSequence) -> Result<SufficientStatistics> {
    if seq.n_channels() != params.n_channels() {
        return Err(Error::invalid(format!(
            "sequence `{}` has {} channels but the model has {}",
            seq.entity_id(),
            seq.n_channels(),
            params.n_channels()
        )));
    }
    accumulate_log(&LogParams::new(params), seq)
}

/// E-step over a corpus. Per-sequence statistics are computed in parallel and
/// summed in input order.
pub fn accumulate_corpus(params: &ModelParameters, sequences: &[ObservationSequence]) -> Result<SufficientStatistics> {
    for s in sequences {
        if s.n_channels() != params.n_channels() {
            return Err(Error::invalid(format!(
                "sequence `{}` has {} channels but the model has {}",
                s.entity_id(),
                s.n_channels(),
                params.n_channels()
            )));
        }
    }
    let lp = LogParams::new(params);
    let parts: Vec<SufficientStatistics> = sequences
        .par_iter()
        .map(|s| accumulate_log(&lp, s))
        .collect::<Result<_>>()?;
    let mut total = SufficientStatistics::zeros(params.n_channels());
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once an iteration improves the log-likelihood by less than this.
    pub tolerance: f64,
    /// Added to every expected-count cell before normalizing.
    pub pseudocount: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 200,
            tolerance: 1e-4,
            pseudocount: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub params: ModelParameters,
    /// `trace[k]` is the log-likelihood after `k` M-steps; the last entry
    /// belongs to `params`.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl EmResult {
    pub fn log_likelihood(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }

    pub fn iterations(&self) -> usize {
        self.trace.len() - 1
    }
}

fn normalize_row(counts: &Row, previous: &Row, pseudocount: f64) -> Row {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return *previous;
    }
    let denom = total + pseudocount * N as f64;
    let mut out = [0.0; N];
    for k in 0..N {
        out[k] = (counts[k] + pseudocount) / denom;
    }
    out
}

/// M-step: normalize expected counts row by row. Rows that received no
/// expected mass keep their previous values.
pub fn maximize(stats: &SufficientStatistics, previous: &ModelParameters, pseudocount: f64) -> ModelParameters {
    let initial = normalize_row(&stats.start, previous.initial(), pseudocount);
    let mut transition = [[0.0; N]; N];
    for i in 0..N {
        transition[i] = normalize_row(&stats.transitions[i], &previous.transition()[i], pseudocount);
    }
    let emissions = stats
        .emissions
        .iter()
        .zip(previous.emissions())
        .map(|(counts, prev)| {
            let mut m = [[0.0; N]; N];
            for i in 0..N {
                m[i] = normalize_row(&counts[i], &prev[i], pseudocount);
            }
            m
        })
        .collect();
    ModelParameters::new_unchecked(initial, transition, emissions)
}

/// Fit one shared parameter set to all sequences by expectation maximization.
pub fn baum_welch(sequences: &[ObservationSequence], init: &ModelParameters, config: &EmConfig) -> Result<EmResult> {
    if sequences.is_empty() {
        return Err(Error::invalid("baum_welch needs at least one sequence"));
    }
    if !(config.pseudocount >= 0.0) || !config.pseudocount.is_finite() {
        return Err(Error::invalid(format!("pseudocount must be >= 0, got {}", config.pseudocount)));
    }
    let mut params = init.clone();
    let mut stats = accumulate_corpus(&params, sequences).map_err(|e| match e {
        Error::ImpossibleObservation { entity, week } => Error::ImpossibleInitialization {
            entity: entity.unwrap_or_default(),
            week,
        },
        other => other,
    })?;
    let mut trace = vec![stats.log_likelihood];
    let mut converged = false;
    for _ in 0..config.max_iters {
        let next = maximize(&stats, &params, config.pseudocount);
        let next_stats = accumulate_corpus(&next, sequences)?;
        let gain = next_stats.log_likelihood - stats.log_likelihood;
        params = next;
        stats = next_stats;
        trace.push(stats.log_likelihood);
        if gain < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(EmResult {
        params,
        trace,
        converged,
    })
}

/// `count` random starting points drawn from a ChaCha8 stream seeded with `seed`.
pub fn random_initializations(seed: u64, count: usize, n_channels: usize) -> Vec<ModelParameters> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| ModelParameters::random(&mut rng, n_channels)).collect()
}

/// Best of several EM runs.
#[derive(Debug, Clone)]
pub struct RestartFit {
    pub best: EmResult,
    /// Index of `best` among the initializations.
    pub best_index: usize,
    /// Final log-likelihood of every run, in initialization order.
    pub log_likelihoods: Vec<f64>,
}

/// Run EM from each initialization and keep the highest final likelihood.
/// Equal likelihoods go to the earliest run.
pub fn baum_welch_restarts(sequences: &[ObservationSequence], inits: &[ModelParameters], config: &EmConfig) -> Result<RestartFit> {
    if inits.is_empty() {
        return Err(Error::invalid("need at least one initialization"));
    }
    let mut best: Option<(usize, EmResult)> = None;
    let mut log_likelihoods = Vec::with_capacity(inits.len());
    for (i, init) in inits.iter().enumerate() {
        let fit = baum_welch(sequences, init, config)?;
        log_likelihoods.push(fit.log_likelihood());
        if best.as_ref().map_or(true, |(_, b)| fit.log_likelihood() > b.log_likelihood()) {
            best = Some((i, fit));
        }
    }
    let (best_index, best) = best.expect("at least one run");
    Ok(RestartFit {
        best,
        best_index,
        log_likelihoods,
    })
}
