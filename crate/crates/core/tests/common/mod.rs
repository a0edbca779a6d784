//! Exhaustive path enumeration and small random instances.
#![allow(dead_code)]

use chrono::NaiveDate;
use modfuse::{ModelParameters, ObservationSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Enumerated {
    pub likelihood: f64,
    pub state: Vec<[f64; 3]>,
    pub pairwise: Vec<[[f64; 3]; 3]>,
    pub best_path: Vec<usize>,
    pub best_joint: f64,
    pub start: [f64; 3],
    pub transitions: [[f64; 3]; 3],
    pub emissions: Vec<[[f64; 3]; 3]>,
}

fn joint(p: &ModelParameters, seq: &ObservationSequence, path: &[usize]) -> f64 {
    let mut prob = p.initial()[path[0]];
    for t in 0..path.len() {
        if t > 0 {
            prob *= p.transition()[path[t - 1]][path[t]];
        }
        for (c, cell) in seq.row(t).iter().enumerate() {
            if let Some(m) = cell {
                prob *= p.emissions()[c][path[t]][m.index()];
            }
        }
    }
    prob
}

/// Sum over all 3^T hidden paths in probability space.
pub fn enumerate(p: &ModelParameters, seq: &ObservationSequence) -> Enumerated {
    let t_len = seq.len();
    let n_paths = 3usize.pow(t_len as u32);
    let mut e = Enumerated {
        likelihood: 0.0,
        state: vec![[0.0; 3]; t_len],
        pairwise: vec![[[0.0; 3]; 3]; t_len.saturating_sub(1)],
        best_path: vec![0; t_len],
        best_joint: -1.0,
        start: [0.0; 3],
        transitions: [[0.0; 3]; 3],
        emissions: vec![[[0.0; 3]; 3]; seq.n_channels()],
    };
    let mut path = vec![0usize; t_len];
    for code in 0..n_paths {
        let mut rest = code;
        for t in (0..t_len).rev() {
            path[t] = rest % 3;
            rest /= 3;
        }
        let j = joint(p, seq, &path);
        e.likelihood += j;
        if j > e.best_joint {
            e.best_joint = j;
            e.best_path.clone_from(&path);
        }
        for t in 0..t_len {
            e.state[t][path[t]] += j;
            if t > 0 {
                e.pairwise[t - 1][path[t - 1]][path[t]] += j;
            }
        }
    }
    let z = e.likelihood;
    for row in e.state.iter_mut() {
        row.iter_mut().for_each(|v| *v /= z);
    }
    for m in e.pairwise.iter_mut() {
        m.iter_mut().flatten().for_each(|v| *v /= z);
    }
    e.start = e.state[0];
    for m in &e.pairwise {
        for i in 0..3 {
            for j in 0..3 {
                e.transitions[i][j] += m[i][j];
            }
        }
    }
    for t in 0..t_len {
        for (c, cell) in seq.row(t).iter().enumerate() {
            if let Some(m) = cell {
                for s in 0..3 {
                    e.emissions[c][s][m.index()] += e.state[t][s];
                }
            }
        }
    }
    e
}

pub fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 8, 31).unwrap()
}

/// Random strictly positive stochastic row.
pub fn random_row<R: Rng>(rng: &mut R) -> [f64; 3] {
    let raw: [f64; 3] = [rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0)];
    let s: f64 = raw.iter().sum();
    raw.map(|v| v / s)
}

pub fn random_params<R: Rng>(rng: &mut R, n_channels: usize) -> ModelParameters {
    let mut m = || [random_row(rng), random_row(rng), random_row(rng)];
    let transition = m();
    let emissions = (0..n_channels).map(|_| m()).collect();
    let initial = random_row(rng);
    ModelParameters::new(initial, transition, emissions).unwrap()
}

pub fn random_sequence<R: Rng>(rng: &mut R, id: &str, t_len: usize, n_channels: usize, p_missing: f64) -> ObservationSequence {
    let rows: Vec<Vec<Option<u8>>> = (0..t_len)
        .map(|_| {
            (0..n_channels)
                .map(|_| (rng.gen::<f64>() >= p_missing).then(|| rng.gen_range(0..3u8)))
                .collect()
        })
        .collect();
    ObservationSequence::from_codes(id, start(), &rows).unwrap()
}

/// Largest absolute difference across two equally shaped slices of rows.
pub fn max_diff<const N: usize>(a: &[[f64; N]], b: &[[f64; N]]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `P(T >= t)` for integer degrees of freedom from the finite trigonometric
/// series for `P(|T| <= t)`.
pub fn t_upper_tail(t: f64, df: u32) -> f64 {
    let theta = (t.abs() / (df as f64).sqrt()).atan();
    let (s, c) = theta.sin_cos();
    let a = if df % 2 == 1 {
        let mut sum = 0.0;
        if df > 1 {
            let mut term = c;
            sum = term;
            let mut k = 3;
            while k <= df - 2 {
                term *= c * c * (k - 1) as f64 / k as f64;
                sum += term;
                k += 2;
            }
        }
        2.0 / std::f64::consts::PI * (theta + s * sum)
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 2;
        while k <= df - 2 {
            term *= c * c * (k - 1) as f64 / k as f64;
            sum += term;
            k += 2;
        }
        s * sum
    };
    let tail = (1.0 - a) / 2.0;
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

pub fn hand_t(a: &[f64], b: &[f64]) -> (f64, u32) {
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let var = |x: &[f64]| {
        let m = mean(x);
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
    };
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let sp2 = ((n1 - 1.0) * var(a) + (n2 - 1.0) * var(b)) / (n1 + n2 - 2.0);
    ((mean(a) - mean(b)) / (sp2 * (1.0 / n1 + 1.0 / n2)).sqrt(), (a.len() + b.len() - 2) as u32)
}

pub fn t_test_fixtures() -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = vec![(vec![1.0, 1.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]), (vec![0.9, 0.8], vec![0.7, 0.75])];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    while out.len() < 20 {
        let n1 = rng.gen_range(2..40);
        let n2 = rng.gen_range(2..40);
        let shift = rng.gen_range(-0.2..0.3);
        let a = (0..n1).map(|_| (rng.gen_range(0.4..1.0f64) + shift).clamp(0.0, 1.0)).collect();
        let b = (0..n2).map(|_| rng.gen_range(0.3..1.0)).collect();
        out.push((a, b));
    }
    out
}
