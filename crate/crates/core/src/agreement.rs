//! Pairwise agreement between sources and the model, and the one-sided
//! two-sample t-test used to compare agreement levels.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::decode::DecodeRow;
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::pipeline::config::StudyWindow;
use crate::pipeline::reports::WeeklyCells;

/// Participant name used for the fused model.
pub const MODEL_NAME: &str = "HMM";

type Key<'a> = (&'a str, NaiveDate);

/// Which district-weeks each participant reports, and what it reports.
pub struct ProviderCoverage<'a> {
    names: Vec<String>,
    maps: Vec<HashMap<Key<'a>, Modality>>,
}

impl<'a> ProviderCoverage<'a> {
    /// Participants are the sources in order followed by the model.
    pub fn new(decodes: &'a [DecodeRow], cells: &'a WeeklyCells, sources: &[String], window: &StudyWindow) -> Self {
        let mut maps: Vec<HashMap<Key<'a>, Modality>> = vec![HashMap::new(); sources.len() + 1];
        for (key, m) in &cells.cells {
            if key.source < sources.len() {
                maps[key.source].insert((key.leaid.as_str(), window.week_start_date(key.week)), *m);
            }
        }
        let model = sources.len();
        for r in decodes {
            maps[model].insert((r.leaid.as_str(), r.week_start), r.modality);
        }
        let mut names = sources.to_vec();
        names.push(MODEL_NAME.to_string());
        ProviderCoverage { names, maps }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn model_index(&self) -> usize {
        self.names.len() - 1
    }

    /// Visit every district-week both participants report.
    fn for_overlap(&self, a: usize, b: usize, mut f: impl FnMut(&Key<'a>, bool)) {
        let (small, large) = if self.maps[a].len() <= self.maps[b].len() { (a, b) } else { (b, a) };
        for (key, m) in &self.maps[small] {
            if let Some(other) = self.maps[large].get(key) {
                f(key, m == other);
            }
        }
    }

    pub fn matrix(&self) -> AgreementMatrix {
        let n = self.names.len();
        let mut overlap = vec![vec![0u64; n]; n];
        let mut matches = vec![vec![0u64; n]; n];
        for a in 0..n {
            for b in a..n {
                let (mut o, mut m) = (0u64, 0u64);
                self.for_overlap(a, b, |_, agree| {
                    o += 1;
                    m += agree as u64;
                });
                overlap[a][b] = o;
                overlap[b][a] = o;
                matches[a][b] = m;
                matches[b][a] = m;
            }
        }
        AgreementMatrix {
            participants: self.names.clone(),
            overlap,
            matches,
        }
    }

    /// Per-unit agreement proportions between participants `a` and `b`,
    /// over units where they overlap, ordered by unit.
    pub fn samples(&self, a: usize, b: usize, unit: SampleUnit) -> Vec<f64> {
        match unit {
            SampleUnit::District => {
                let mut per: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
                self.for_overlap(a, b, |key, agree| {
                    let e = per.entry(key.0).or_default();
                    e.0 += agree as u64;
                    e.1 += 1;
                });
                per.values().map(|(m, o)| *m as f64 / *o as f64).collect()
            }
            SampleUnit::Week => {
                let mut per: BTreeMap<NaiveDate, (u64, u64)> = BTreeMap::new();
                self.for_overlap(a, b, |key, agree| {
                    let e = per.entry(key.1).or_default();
                    e.0 += agree as u64;
                    e.1 += 1;
                });
                per.values().map(|(m, o)| *m as f64 / *o as f64).collect()
            }
        }
    }
}

/// Symmetric table of overlap counts and matches for every participant pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgreementMatrix {
    pub participants: Vec<String>,
    pub overlap: Vec<Vec<u64>>,
    pub matches: Vec<Vec<u64>>,
}

impl AgreementMatrix {
    /// Share of overlapping district-weeks with identical labels; `None`
    /// without overlap.
    pub fn proportion(&self, a: usize, b: usize) -> Option<f64> {
        let o = self.overlap[a][b];
        (o > 0).then(|| self.matches[a][b] as f64 / o as f64)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.participants.iter().position(|p| p == name)
    }

    pub fn write_square<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![String::new()];
        header.extend(self.participants.iter().cloned());
        w.write_record(&header)?;
        for (a, name) in self.participants.iter().enumerate() {
            let mut row = vec![name.clone()];
            for b in 0..self.participants.len() {
                row.push(self.proportion(a, b).map(|p| format!("{p:.6}")).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<agreement>", e))?;
        Ok(())
    }

    /// Long form `pair,overlap,agreement`, one line per unordered pair.
    pub fn write_pairs<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["pair", "overlap", "agreement"])?;
        let n = self.participants.len();
        for a in 0..n {
            for b in a + 1..n {
                w.write_record([
                    format!("{}|{}", self.participants[a], self.participants[b]),
                    self.overlap[a][b].to_string(),
                    self.proportion(a, b).map(|p| format!("{p:.6}")).unwrap_or_default(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<agreement>", e))?;
        Ok(())
    }
}

pub fn agreement_matrix(decodes: &[DecodeRow], cells: &WeeklyCells, sources: &[String], window: &StudyWindow) -> AgreementMatrix {
    ProviderCoverage::new(decodes, cells, sources, window).matrix()
}

/// Sample unit for the agreement t-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SampleUnit {
    /// One agreement proportion per district.
    #[default]
    District,
    /// One agreement proportion per week, pooled over districts.
    Week,
}

impl std::str::FromStr for SampleUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "district" => Ok(SampleUnit::District),
            "week" => Ok(SampleUnit::Week),
            other => Err(Error::invalid(format!("unknown sample unit `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// `P(T >= t)` under the null of equal means.
    pub p_value: f64,
    /// Both samples have zero variance.
    pub degenerate: bool,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
}

/// Constant samples get their exact value and zero spread, so rounding in the
/// sum cannot turn identical samples into a spurious difference.
fn mean_and_ss(xs: &[f64]) -> (f64, f64) {
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss)
}

/// Upper tail `P(T >= t)` of Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Pooled-variance two-sample t-test of `mean(a) > mean(b)`.
pub fn agreement_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(format!(
            "t-test needs at least two values per sample (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("t-test samples must be finite"));
    }
    let (n_a, n_b) = (a.len(), b.len());
    let (mean_a, ss_a) = mean_and_ss(a);
    let (mean_b, ss_b) = mean_and_ss(b);
    let df = (n_a + n_b - 2) as f64;
    let pooled = (ss_a + ss_b) / df;
    let se = (pooled * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    let diff = mean_a - mean_b;
    let degenerate = pooled == 0.0;
    let t = if degenerate {
        if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    } else {
        diff / se
    };
    let p_value = if degenerate && diff == 0.0 { 0.5 } else { student_t_sf(t, df) };
    Ok(TTest {
        t,
        df,
        p_value,
        degenerate,
        n_a,
        n_b,
        mean_a,
        mean_b,
    })
}

/// One line of the comparison table: does `source` agree more with the model
/// than with `comparator`?
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementComparison {
    pub source: String,
    pub comparator: String,
    pub unit: SampleUnit,
    pub test: Option<TTest>,
    pub note: String,
}

/// Test, for each source and each other source, whether the source's
/// agreement with the model exceeds its agreement with the other source.
pub fn compare_agreement(coverage: &ProviderCoverage<'_>, unit: SampleUnit) -> Vec<AgreementComparison> {
    let model = coverage.model_index();
    let mut out = Vec::new();
    for s in 0..model {
        let with_model = coverage.samples(s, model, unit);
        for o in (0..model).filter(|&o| o != s) {
            let with_other = coverage.samples(s, o, unit);
            let (test, note) = match agreement_ttest(&with_model, &with_other) {
                Ok(t) => (Some(t), if t.degenerate { "degenerate: zero variance".to_string() } else { String::new() }),
                Err(e) => (None, e.to_string()),
            };
            out.push(AgreementComparison {
                source: coverage.names()[s].clone(),
                comparator: coverage.names()[o].clone(),
                unit,
                test,
                note,
            });
        }
    }
    out
}

pub fn write_comparisons<W: std::io::Write>(writer: W, rows: &[AgreementComparison]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "source",
        "comparator",
        "unit",
        "n_model",
        "mean_model",
        "n_comparator",
        "mean_comparator",
        "t",
        "df",
        "p_one_sided",
        "note",
    ])?;
    for r in rows {
        let unit = match r.unit {
            SampleUnit::District => "district",
            SampleUnit::Week => "week",
        };
        let mut rec = vec![r.source.clone(), r.comparator.clone(), unit.to_string()];
        match &r.test {
            Some(t) => rec.extend([
                t.n_a.to_string(),
                format!("{:.6}", t.mean_a),
                t.n_b.to_string(),
                format!("{:.6}", t.mean_b),
                format!("{:.6}", t.t),
                format!("{}", t.df),
                format!("{:.6e}", t.p_value),
            ]),
            None => rec.extend(std::iter::repeat(String::new()).take(7)),
        }
        rec.push(r.note.clone());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<ttest>", e))?;
    Ok(())
}
