//! Hidden-state labels and the shared parameter set.
//!
//! The model has exactly three hidden states. Internally state `0` is remote,
//! `1` is hybrid and `2` is in-person; label files use the 1-based numbering
//! remote = 1, hybrid = 2, in-person = 3 only in prose, never on disk.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of hidden states (and of reported categories).
pub const NUM_STATES: usize = 3;

/// Row-sum tolerance for stochastic vectors.
pub const STOCHASTIC_TOL: f64 = 1e-9;

pub type Row = [f64; NUM_STATES];
pub type Matrix = [Row; NUM_STATES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "remote")]
    Remote,
    #[serde(rename = "hybrid")]
    Hybrid,
    #[serde(rename = "in-person")]
    InPerson,
}

impl Modality {
    pub const ALL: [Modality; NUM_STATES] = [Modality::Remote, Modality::Hybrid, Modality::InPerson];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Modality> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Remote => "remote",
            Modality::Hybrid => "hybrid",
            Modality::InPerson => "in-person",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remote" => Ok(Modality::Remote),
            "hybrid" => Ok(Modality::Hybrid),
            "in-person" => Ok(Modality::InPerson),
            other => Err(Error::invalid(format!("unknown modality label `{other}`"))),
        }
    }
}

/// Initial distribution, transition matrix and one emission matrix per source.
///
/// Rows of `transition` are indexed by the current state, columns by the next.
/// Rows of each emission matrix are indexed by the true state, columns by the
/// reported category.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    initial: Row,
    transition: Matrix,
    emissions: Vec<Matrix>,
}

impl ModelParameters {
    pub fn new(initial: Row, transition: Matrix, emissions: Vec<Matrix>) -> Result<Self> {
        let params = ModelParameters {
            initial,
            transition,
            emissions,
        };
        params.validate()?;
        Ok(params)
    }

    pub(crate) fn new_unchecked(initial: Row, transition: Matrix, emissions: Vec<Matrix>) -> Self {
        ModelParameters {
            initial,
            transition,
            emissions,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.emissions.is_empty() {
            return Err(Error::InvalidParameters("at least one emission channel is required".into()));
        }
        check_row(&self.initial, "initial")?;
        for (i, row) in self.transition.iter().enumerate() {
            check_row(row, &format!("transition row {i}"))?;
        }
        for (c, m) in self.emissions.iter().enumerate() {
            for (i, row) in m.iter().enumerate() {
                check_row(row, &format!("emission channel {c} row {i}"))?;
            }
        }
        Ok(())
    }

    pub fn initial(&self) -> &Row {
        &self.initial
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    pub fn emissions(&self) -> &[Matrix] {
        &self.emissions
    }

    pub fn n_channels(&self) -> usize {
        self.emissions.len()
    }

    /// Relabel hidden states: old state `s` becomes state `perm[s]`.
    ///
    /// Emission columns are reported categories and are not permuted.
    pub fn permute_states(&self, perm: &[usize; NUM_STATES]) -> ModelParameters {
        let mut initial = [0.0; NUM_STATES];
        let mut transition = [[0.0; NUM_STATES]; NUM_STATES];
        for a in 0..NUM_STATES {
            initial[perm[a]] = self.initial[a];
            for b in 0..NUM_STATES {
                transition[perm[a]][perm[b]] = self.transition[a][b];
            }
        }
        let emissions = self
            .emissions
            .iter()
            .map(|m| {
                let mut out = [[0.0; NUM_STATES]; NUM_STATES];
                for a in 0..NUM_STATES {
                    out[perm[a]] = m[a];
                }
                out
            })
            .collect();
        ModelParameters::new_unchecked(initial, transition, emissions)
    }

    /// Draws every row uniformly from the probability simplex.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_channels: usize) -> ModelParameters {
        let initial = random_row(rng);
        let transition = [random_row(rng), random_row(rng), random_row(rng)];
        let emissions = (0..n_channels)
            .map(|_| [random_row(rng), random_row(rng), random_row(rng)])
            .collect();
        ModelParameters::new_unchecked(initial, transition, emissions)
    }

    /// Mix every row with the uniform distribution: `(1 - w) * row + w / 3`.
    pub fn blend_uniform(&self, weight: f64) -> ModelParameters {
        let mix = |row: &Row| -> Row {
            let mut out = [0.0; NUM_STATES];
            for k in 0..NUM_STATES {
                out[k] = (1.0 - weight) * row[k] + weight / NUM_STATES as f64;
            }
            out
        };
        ModelParameters::new_unchecked(
            mix(&self.initial),
            [mix(&self.transition[0]), mix(&self.transition[1]), mix(&self.transition[2])],
            self.emissions
                .iter()
                .map(|m| [mix(&m[0]), mix(&m[1]), mix(&m[2])])
                .collect(),
        )
    }

    /// Same parameters with emission channels listed in the order of `to`,
    /// given that they are currently in the order of `from`.
    pub fn reorder_channels(&self, from: &[String], to: &[String]) -> Result<ModelParameters> {
        if from.len() != self.emissions.len() {
            return Err(Error::invalid(format!("{} names for {} channels", from.len(), self.emissions.len())));
        }
        let mut emissions = Vec::with_capacity(to.len());
        for name in to {
            let k = from
                .iter()
                .position(|f| f == name)
                .ok_or_else(|| Error::invalid(format!("source `{name}` has no emission matrix (have {})", from.join(", "))))?;
            emissions.push(self.emissions[k]);
        }
        if to.len() != from.len() {
            return Err(Error::invalid(format!(
                "parameters cover sources {} but {} were requested",
                from.join(", "),
                to.join(", ")
            )));
        }
        Ok(ModelParameters::new_unchecked(self.initial, self.transition, emissions))
    }

    /// Stationary distribution of the transition matrix (power iteration).
    pub fn stationary(&self) -> Row {
        let mut p = [1.0 / NUM_STATES as f64; NUM_STATES];
        for _ in 0..10_000 {
            let mut next = [0.0; NUM_STATES];
            for i in 0..NUM_STATES {
                for j in 0..NUM_STATES {
                    next[j] += p[i] * self.transition[i][j];
                }
            }
            let delta: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
            p = next;
            if delta < 1e-15 {
                break;
            }
        }
        p
    }
}

fn random_row<R: Rng + ?Sized>(rng: &mut R) -> Row {
    // Exponential spacings give a uniform draw on the simplex.
    let mut row = [0.0; NUM_STATES];
    for v in row.iter_mut() {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        *v = -u.ln();
    }
    normalize(&mut row);
    row
}

pub(crate) fn normalize(row: &mut Row) {
    let s: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= s;
    }
}

fn check_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidParameters(format!(
            "{what} has a negative or non-finite entry: {row:?}"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidParameters(format!(
            "{what} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Source names of the reference configuration, in channel order.
pub const REFERENCE_SOURCES: [&str; 4] = ["Burbio", "MCH", "R2LT", "SD"];

/// Week-to-week transition probabilities estimated on the 2020-21 data.
pub const REFERENCE_TRANSITION: Matrix = [
    [0.903, 0.079, 0.018],
    [0.014, 0.961, 0.025],
    [0.004, 0.013, 0.983],
];

/// Published per-source emission probabilities, as printed (three decimals).
///
/// A few rows do not sum to exactly one after rounding; [`reference_parameters`]
/// renormalizes them.
pub const REFERENCE_EMISSIONS: [Matrix; 4] = [
    // Burbio
    [[0.805, 0.145, 0.050], [0.067, 0.617, 0.317], [0.016, 0.161, 0.823]],
    // MCH
    [[0.795, 0.178, 0.027], [0.090, 0.775, 0.135], [0.055, 0.347, 0.598]],
    // R2LT
    [[0.992, 0.008, 0.001], [0.002, 0.997, 0.001], [0.001, 0.001, 0.997]],
    // SD
    [[0.642, 0.330, 0.028], [0.003, 0.863, 0.134], [0.001, 0.042, 0.956]],
];

/// The published parameters with a uniform initial distribution, every row
/// renormalized to sum to one.
pub fn reference_parameters() -> ModelParameters {
    let renorm = |m: &Matrix| -> Matrix {
        let mut out = *m;
        for row in out.iter_mut() {
            normalize(row);
        }
        out
    };
    ModelParameters::new(
        [1.0 / 3.0; NUM_STATES],
        renorm(&REFERENCE_TRANSITION),
        REFERENCE_EMISSIONS.iter().map(renorm).collect(),
    )
    .expect("reference parameters are stochastic")
}

#[derive(Serialize, Deserialize)]
struct ParameterDocument {
    states: Vec<Modality>,
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
    sources: Vec<String>,
    emissions: serde_json::Map<String, serde_json::Value>,
}

/// Serialize parameters as a JSON document. Numbers are written in shortest
/// round-trip form, so loading restores every value bit for bit.
pub fn parameters_to_json(params: &ModelParameters, sources: &[String]) -> Result<String> {
    if sources.len() != params.n_channels() {
        return Err(Error::invalid(format!(
            "{} source names for {} emission channels",
            sources.len(),
            params.n_channels()
        )));
    }
    let mut emissions = serde_json::Map::new();
    for (name, m) in sources.iter().zip(params.emissions()) {
        emissions.insert(name.clone(), serde_json::to_value(m)?);
    }
    let doc = ParameterDocument {
        states: Modality::ALL.to_vec(),
        initial: params.initial.to_vec(),
        transition: params.transition.iter().map(|r| r.to_vec()).collect(),
        sources: sources.to_vec(),
        emissions,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Parse a parameter document. States listed in a non-canonical order are
/// reordered so that index `k` is `Modality::ALL[k]`.
pub fn parameters_from_json(text: &str) -> Result<(ModelParameters, Vec<String>)> {
    let doc: ParameterDocument = serde_json::from_str(text)?;
    let mut seen = [false; NUM_STATES];
    if doc.states.len() != NUM_STATES {
        return Err(Error::config("states", "expected exactly three state labels"));
    }
    let mut perm = [0usize; NUM_STATES];
    for (k, m) in doc.states.iter().enumerate() {
        if std::mem::replace(&mut seen[m.index()], true) {
            return Err(Error::config("states", format!("duplicate label `{m}`")));
        }
        perm[k] = m.index();
    }
    let initial = to_row(&doc.initial, "initial")?;
    if doc.transition.len() != NUM_STATES {
        return Err(Error::config("transition", "expected 3 rows"));
    }
    let mut transition = [[0.0; NUM_STATES]; NUM_STATES];
    for (i, r) in doc.transition.iter().enumerate() {
        transition[i] = to_row(r, "transition")?;
    }
    let mut emissions = Vec::with_capacity(doc.sources.len());
    for name in &doc.sources {
        let value = doc
            .emissions
            .get(name)
            .ok_or_else(|| Error::config(format!("emissions.{name}"), "missing matrix for source"))?;
        let rows: Vec<Vec<f64>> = serde_json::from_value(value.clone())
            .map_err(|e| Error::config(format!("emissions.{name}"), e.to_string()))?;
        if rows.len() != NUM_STATES {
            return Err(Error::config(format!("emissions.{name}"), "expected 3 rows"));
        }
        let mut m = [[0.0; NUM_STATES]; NUM_STATES];
        for (i, r) in rows.iter().enumerate() {
            m[i] = to_row(r, &format!("emissions.{name}"))?;
        }
        emissions.push(m);
    }
    if doc.emissions.len() != doc.sources.len() {
        return Err(Error::config("emissions", "entries do not match `sources`"));
    }
    let params = ModelParameters::new(initial, transition, emissions)?;
    Ok((params.permute_states(&perm), doc.sources))
}

fn to_row(v: &[f64], key: &str) -> Result<Row> {
    <Row>::try_from(v).map_err(|_| Error::config(key, format!("expected 3 entries, found {}", v.len())))
}

pub fn save_parameters(path: &Path, params: &ModelParameters, sources: &[String]) -> Result<()> {
    let text = parameters_to_json(params, sources)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_parameters(path: &Path) -> Result<(ModelParameters, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parameters_from_json(&text)
}
