//! Log-space forward-backward and Viterbi for a single hidden chain observed
//! through several independent channels.
//!
//! A missing cell contributes a factor of one, so silent sources are
//! marginalized out exactly rather than imputed.

use crate::error::{Error, Result};
use crate::model::{Matrix, ModelParameters, Row, NUM_STATES};
use crate::observation::{Cell, ObservationSequence};

const N: usize = NUM_STATES;

/// Numerically stable `log(sum(exp(xs)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn ln_row(row: &Row) -> Row {
    row.map(f64::ln)
}

fn ln_matrix(m: &Matrix) -> Matrix {
    m.map(|r| ln_row(&r))
}

/// Parameters with every probability replaced by its logarithm.
#[derive(Debug, Clone)]
pub(crate) struct LogParams {
    pub initial: Row,
    pub transition: Matrix,
    pub emissions: Vec<Matrix>,
}

impl LogParams {
    pub fn new(p: &ModelParameters) -> Self {
        LogParams {
            initial: ln_row(p.initial()),
            transition: ln_matrix(p.transition()),
            emissions: p.emissions().iter().map(ln_matrix).collect(),
        }
    }

    fn emission_row(&self, row: &[Cell]) -> Row {
        let mut out = [0.0; N];
        for (c, cell) in row.iter().enumerate() {
            if let Some(k) = cell {
                for (s, v) in out.iter_mut().enumerate() {
                    *v += self.emissions[c][s][k.index()];
                }
            }
        }
        out
    }
}

/// Log-probability of one week's reports given the hidden state.
pub fn emission_log_factor(params: &ModelParameters, row: &[Cell], state: usize) -> Result<f64> {
    if row.len() != params.n_channels() {
        return Err(Error::invalid(format!(
            "row has {} cells but the model has {} channels",
            row.len(),
            params.n_channels()
        )));
    }
    if state >= N {
        return Err(Error::invalid(format!("state {state} outside 0..{N}")));
    }
    Ok(row
        .iter()
        .zip(params.emissions())
        .filter_map(|(cell, m)| cell.map(|k| m[state][k.index()].ln()))
        .sum())
}

fn check_channels(params: &ModelParameters, seq: &ObservationSequence) -> Result<()> {
    if seq.n_channels() != params.n_channels() {
        return Err(Error::invalid(format!(
            "sequence `{}` has {} channels but the model has {}",
            seq.entity_id(),
            seq.n_channels(),
            params.n_channels()
        )));
    }
    Ok(())
}

/// Smoothed marginals for one sequence.
#[derive(Debug, Clone)]
pub struct Posteriors {
    /// `state[t][i]` = P(state at week t is i | all reports).
    pub state: Vec<Row>,
    /// `pairwise[t][i][j]` = P(state t is i and state t+1 is j | all reports).
    pub pairwise: Vec<Matrix>,
    pub log_likelihood: f64,
}

struct Lattice {
    emission: Vec<Row>,
    alpha: Vec<Row>,
    log_likelihood: f64,
}

fn forward(lp: &LogParams, seq: &ObservationSequence) -> Result<Lattice> {
    let t_len = seq.len();
    let emission: Vec<Row> = seq.rows().map(|r| lp.emission_row(r)).collect();
    let mut alpha = vec![[f64::NEG_INFINITY; N]; t_len];
    for i in 0..N {
        alpha[0][i] = lp.initial[i] + emission[0][i];
    }
    if alpha[0].iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::ImpossibleObservation { entity: None, week: 0 });
    }
    let mut terms = [0.0; N];
    for t in 1..t_len {
        for j in 0..N {
            for i in 0..N {
                terms[i] = alpha[t - 1][i] + lp.transition[i][j];
            }
            alpha[t][j] = log_sum_exp(&terms) + emission[t][j];
        }
        if alpha[t].iter().all(|v| *v == f64::NEG_INFINITY) {
            return Err(Error::ImpossibleObservation { entity: None, week: t });
        }
    }
    let log_likelihood = log_sum_exp(&alpha[t_len - 1]);
    Ok(Lattice {
        emission,
        alpha,
        log_likelihood,
    })
}

pub(crate) fn forward_backward_log(lp: &LogParams, seq: &ObservationSequence) -> Result<Posteriors> {
    let Lattice {
        emission,
        alpha,
        log_likelihood: ll,
    } = forward(lp, seq)?;
    let t_len = seq.len();
    let mut beta = vec![[0.0; N]; t_len];
    let mut terms = [0.0; N];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for i in 0..N {
            for j in 0..N {
                terms[j] = lp.transition[i][j] + emission[t + 1][j] + beta[t + 1][j];
            }
            beta[t][i] = log_sum_exp(&terms);
        }
    }

    let mut state = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut g = [0.0; N];
        for i in 0..N {
            g[i] = (alpha[t][i] + beta[t][i] - ll).exp();
        }
        let s: f64 = g.iter().sum();
        for v in g.iter_mut() {
            *v /= s;
        }
        state.push(g);
    }

    let mut pairwise = Vec::with_capacity(t_len.saturating_sub(1));
    for t in 0..t_len.saturating_sub(1) {
        let mut x = [[0.0; N]; N];
        let mut s = 0.0;
        for i in 0..N {
            for j in 0..N {
                let v = (alpha[t][i] + lp.transition[i][j] + emission[t + 1][j] + beta[t + 1][j] - ll).exp();
                x[i][j] = v;
                s += v;
            }
        }
        for row in x.iter_mut() {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        pairwise.push(x);
    }

    Ok(Posteriors {
        state,
        pairwise,
        log_likelihood: ll,
    })
}

/// Smoothed state and transition posteriors plus the sequence log-likelihood.
pub fn forward_backward(params: &ModelParameters, seq: &ObservationSequence) -> Result<Posteriors> {
    check_channels(params, seq)?;
    forward_backward_log(&LogParams::new(params), seq).map_err(|e| e.with_entity(seq.entity_id()))
}

/// `log P(reports)` under the model.
pub fn sequence_log_likelihood(params: &ModelParameters, seq: &ObservationSequence) -> Result<f64> {
    check_channels(params, seq)?;
    forward(&LogParams::new(params), seq)
        .map(|l| l.log_likelihood)
        .map_err(|e| e.with_entity(seq.entity_id()))
}

/// Most probable joint state path and its log-probability.
///
/// Ties go to the lower state index, both when choosing the final state and
/// at every backtracking step.
pub fn viterbi(params: &ModelParameters, seq: &ObservationSequence) -> Result<(Vec<usize>, f64)> {
    check_channels(params, seq)?;
    viterbi_log(&LogParams::new(params), seq).map_err(|e| e.with_entity(seq.entity_id()))
}

pub(crate) fn viterbi_log(lp: &LogParams, seq: &ObservationSequence) -> Result<(Vec<usize>, f64)> {
    let t_len = seq.len();
    let mut delta = [f64::NEG_INFINITY; N];
    let mut back: Vec<[usize; N]> = Vec::with_capacity(t_len);
    let e0 = lp.emission_row(seq.row(0));
    for i in 0..N {
        delta[i] = lp.initial[i] + e0[i];
    }
    back.push([0; N]);
    for t in 1..t_len {
        let e = lp.emission_row(seq.row(t));
        let mut next = [f64::NEG_INFINITY; N];
        let mut ptr = [0usize; N];
        for j in 0..N {
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
            for i in 0..N {
                let v = delta[i] + lp.transition[i][j];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + e[j];
            ptr[j] = arg;
        }
        delta = next;
        back.push(ptr);
    }
    let (mut best, mut last) = (f64::NEG_INFINITY, 0);
    for (i, &v) in delta.iter().enumerate() {
        if v > best {
            best = v;
            last = i;
        }
    }
    if best == f64::NEG_INFINITY {
        // Report the first week at which the forward pass dies.
        let week = match forward(lp, seq) {
            Err(Error::ImpossibleObservation { week, .. }) => week,
            _ => t_len - 1,
        };
        return Err(Error::ImpossibleObservation { entity: None, week });
    }
    let mut path = vec![0; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok((path, best))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &Row) -> usize {
    let mut best = 0;
    for i in 1..N {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}
