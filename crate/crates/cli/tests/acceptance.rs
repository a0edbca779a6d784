//! Acceptance suite. Prints one line per criterion, then fails if any did.
//! Run with `cargo test -p modfuse-cli --test acceptance`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::{enumerate, hand_t, max_diff, random_params, random_sequence, t_test_fixtures, t_upper_tail};
use modfuse::agreement::{agreement_matrix, agreement_ttest};
use modfuse::decode::{DecodeRow, DEFAULT_THRESHOLD};
use modfuse::em::{accumulate_statistics, baum_welch, baum_welch_restarts, random_initializations};
use modfuse::model::{reference_parameters, REFERENCE_SOURCES};
use modfuse::pipeline::{
    aggregate_to_weeks, build_sequences, coverage_summary, filter_eligible, read_metadata, read_reports, write_metadata,
    write_reports, EligibilityRules, PipelineConfig, StudyWindow, WeekStart,
};
use modfuse::report::{state_snapshot, trend_report, Stratifier};
use modfuse::synthetic::{decode_accuracy, default_start, reference_missingness};
use modfuse::{
    decode_all, forward_backward, generate, label_model, score_recovery, sequence_log_likelihood, viterbi, DecodeMode,
    EmConfig, GeneratorConfig, ObservationSequence, PosteriorDecode, SyntheticCorpus,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORACLE_TOL: f64 = 1e-9;
const MONOTONE_TOL: f64 = 1e-8;
const TRANSITION_TOL: f64 = 0.05;
const EMISSION_TOL: f64 = 0.07;
const INPERSON_SELF_LOOP: f64 = 0.983;
const SELF_LOOP_TOL: f64 = 0.03;
const MIN_DECODE_ACCURACY: f64 = 0.90;
const FIXTURE_DISTRICTS: usize = 14_688;
const FIXTURE_WEEKS: usize = 42;
const FIXTURE_DISTRICT_WEEKS: usize = 616_896;
const TTEST_TOL: f64 = 1e-10;
const PERCENT_TOL: f64 = 0.01;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn sources() -> Vec<String> {
    REFERENCE_SOURCES.iter().map(|s| s.to_string()).collect()
}

fn reference_corpus(n_districts: usize, n_weeks: usize, seed: u64) -> SyntheticCorpus {
    generate(&GeneratorConfig {
        parameters: reference_parameters(),
        sources: sources(),
        n_districts,
        n_weeks,
        start: default_start(),
        missingness: reference_missingness(),
        seed,
    })
    .unwrap()
}

/// Sequences with at least one report, with their truth paths.
fn observed(corpus: &SyntheticCorpus) -> (Vec<ObservationSequence>, Vec<Vec<usize>>) {
    corpus
        .sequences
        .iter()
        .zip(&corpus.truth)
        .filter(|(s, _)| s.observed_count() > 0)
        .map(|(s, t)| (s.clone(), t.clone()))
        .unzip()
}

fn rows(decodes: &[PosteriorDecode]) -> Vec<DecodeRow> {
    decodes.iter().flat_map(PosteriorDecode::rows).collect()
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn inference_oracle() -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut path_mismatches = 0;
    for i in 0..200 {
        let t_len = rng.gen_range(1..=6);
        let n_channels = rng.gen_range(1..=4);
        let p = random_params(&mut rng, n_channels);
        let seq = random_sequence(&mut rng, &format!("i{i}"), t_len, n_channels, 0.35);
        let e = enumerate(&p, &seq);

        let post = forward_backward(&p, &seq).unwrap();
        worst = worst.max(max_diff(&post.state, &e.state));
        for (a, b) in post.pairwise.iter().zip(&e.pairwise) {
            worst = worst.max(max_diff(a, b));
        }
        worst = worst.max((post.log_likelihood - e.likelihood.ln()).abs());
        worst = worst.max((sequence_log_likelihood(&p, &seq).unwrap() - e.likelihood.ln()).abs());

        let (path, logp) = viterbi(&p, &seq).unwrap();
        if path != e.best_path {
            path_mismatches += 1;
        }
        worst = worst.max((logp - e.best_joint.ln()).abs());

        let st = accumulate_statistics(&p, &seq).unwrap();
        worst = worst.max(max_diff(&[st.start], &[e.start]));
        worst = worst.max(max_diff(&st.transitions, &e.transitions));
        for c in 0..n_channels {
            worst = worst.max(max_diff(&st.emissions[c], &e.emissions[c]));
        }
    }
    let elapsed = clock.elapsed();
    verdict(
        worst <= ORACLE_TOL && path_mismatches == 0 && elapsed < Duration::from_secs(10),
        format!("200 instances, max deviation {worst:.2e}, {path_mismatches} Viterbi mismatches, {}", secs(elapsed)),
    )
}

fn em_monotonicity() -> Verdict {
    let clock = Instant::now();
    let (seqs, _) = observed(&reference_corpus(200, 40, 5));
    let inits = random_initializations(6, 50, REFERENCE_SOURCES.len());
    let cfg = EmConfig::default();
    let mut worst_drop = 0.0f64;
    let mut steps = 0;
    for init in &inits {
        let fit = baum_welch(&seqs, init, &cfg).unwrap();
        for w in fit.trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
            steps += 1;
        }
    }
    let elapsed = clock.elapsed();
    verdict(
        worst_drop <= MONOTONE_TOL && elapsed < Duration::from_secs(60),
        format!("{} sequences, 50 runs, {steps} steps, largest decrease {worst_drop:.2e}, {}", seqs.len(), secs(elapsed)),
    )
}

struct Recovery {
    corpus: SyntheticCorpus,
    sequences: Vec<ObservationSequence>,
    truth: Vec<Vec<usize>>,
    decodes: Vec<PosteriorDecode>,
}

fn parameter_recovery() -> (Verdict, Recovery) {
    let clock = Instant::now();
    let corpus = reference_corpus(2000, 40, 2021);
    let (sequences, truth) = observed(&corpus);
    let inits = random_initializations(1, 3, REFERENCE_SOURCES.len());
    let fit = baum_welch_restarts(&sequences, &inits, &EmConfig::default()).unwrap();
    let (assignment, labeled) = label_model(&fit.best.params, &sequences, DecodeMode::Posterior).unwrap();
    let score = score_recovery(&reference_parameters(), &fit.best.params, &assignment).unwrap();
    let self_loop = labeled.transition()[2][2];
    let elapsed = clock.elapsed();
    let pass = score.transition <= TRANSITION_TOL
        && score.max_emission() <= EMISSION_TOL
        && (self_loop - INPERSON_SELF_LOOP).abs() <= SELF_LOOP_TOL
        && elapsed < Duration::from_secs(300);
    let detail = format!(
        "transition error {:.4}, emission error {:.4}, in-person self-loop {self_loop:.4}, {}",
        score.transition,
        score.max_emission(),
        secs(elapsed)
    );
    let decodes = decode_all(&labeled, &sequences, DecodeMode::Posterior, DEFAULT_THRESHOLD).unwrap();
    (
        verdict(pass, detail),
        Recovery {
            corpus,
            sequences,
            truth,
            decodes,
        },
    )
}

fn decode_quality(r: &Recovery) -> Verdict {
    let acc = decode_accuracy(&r.decodes, &r.truth).unwrap();
    verdict(
        acc.overall() >= MIN_DECODE_ACCURACY && acc.high_confidence() > acc.overall(),
        format!(
            "accuracy {:.4}, high-confidence accuracy {:.4} on {} of {} weeks",
            acc.overall(),
            acc.high_confidence(),
            acc.high_confidence_weeks,
            acc.weeks
        ),
    )
}

fn agreement_ordering(r: &Recovery) -> Verdict {
    let window = StudyWindow::from_weeks(default_start(), r.sequences[0].len(), WeekStart::Monday).unwrap();
    let cells = aggregate_to_weeks(&r.corpus.reports(), &window);
    let names = sources();
    let matrix = agreement_matrix(&rows(&r.decodes), &cells, &names, &window);
    let model = matrix.index_of("HMM").unwrap();
    let with_model: Vec<(String, f64)> = names
        .iter()
        .map(|s| (s.clone(), matrix.proportion(matrix.index_of(s).unwrap(), model).unwrap()))
        .collect();
    let best = with_model.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let worst = with_model.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let listed: Vec<String> = with_model.iter().map(|(s, v)| format!("{s} {v:.3}")).collect();
    verdict(best.0 == "R2LT" && worst.0 == "MCH", format!("model agreement {}", listed.join(", ")))
}

fn pipeline_arithmetic() -> (Verdict, Vec<PosteriorDecode>, Vec<modfuse::pipeline::DistrictRecord>) {
    let clock = Instant::now();
    let corpus = reference_corpus(FIXTURE_DISTRICTS, FIXTURE_WEEKS, 616);
    let names = sources();
    let config = PipelineConfig {
        window: StudyWindow::from_weeks(default_start(), FIXTURE_WEEKS, WeekStart::Monday).unwrap(),
        sources: names.clone(),
        ..PipelineConfig::default()
    };
    let mut report_bytes = Vec::new();
    write_reports(&mut report_bytes, &corpus.reports(), &names).unwrap();
    let mut meta_bytes = Vec::new();
    write_metadata(&mut meta_bytes, &corpus.districts).unwrap();

    let reports = read_reports(report_bytes.as_slice(), Path::new("reports.csv"), &config).unwrap();
    let meta = read_metadata(meta_bytes.as_slice(), Path::new("districts.csv")).unwrap();
    let cells = aggregate_to_weeks(&reports, &config.window);
    let eligibility = filter_eligible(&meta.records, &EligibilityRules::default());
    let build = build_sequences(&cells, &eligibility, names.len(), &config.window).unwrap();
    let summary = coverage_summary(&build.sequences, &names);
    let elapsed = clock.elapsed();
    let pass = summary.decodable_district_weeks == FIXTURE_DISTRICT_WEEKS;
    let detail = format!(
        "{} districts with reports, {} district-weeks, {}",
        build.sequences.len(),
        summary.decodable_district_weeks,
        secs(elapsed)
    );
    let decodes = decode_all(&reference_parameters(), &build.sequences, DecodeMode::Posterior, DEFAULT_THRESHOLD).unwrap();
    (verdict(pass, detail), decodes, corpus.districts)
}

fn ttest_oracle() -> Verdict {
    let mut worst = 0.0f64;
    let mut df_mismatches = 0;
    for (a, b) in t_test_fixtures() {
        let r = agreement_ttest(&a, &b).unwrap();
        let (t, df) = hand_t(&a, &b);
        worst = worst.max((r.t - t).abs());
        worst = worst.max((r.p_value - t_upper_tail(t, df)).abs());
        if r.df != df as f64 {
            df_mismatches += 1;
        }
    }
    let same = agreement_ttest(&[0.8, 0.8, 0.8], &[0.8, 0.8]).unwrap();
    verdict(
        worst <= TTEST_TOL && df_mismatches == 0 && same.p_value == 0.5 && same.degenerate,
        format!("20 fixtures, max deviation {worst:.2e}, identical samples p = {}", same.p_value),
    )
}

fn cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_modfuse"))
        .env("SOURCE_DATE_EPOCH", "1600000000")
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Full simulate, train, decode, agree and report run under `root`.
fn cli_run(root: &Path) {
    let cfg = root.join("run.json");
    std::fs::write(&cfg, r#"{"simulation": {"n_districts": 400, "n_weeks": 42}}"#).unwrap();
    let sim = root.join("simulate");
    cli(&["--quiet", "--config", s(&cfg), "--out", s(&sim), "--seed", "11", "simulate"]);
    let config = sim.join("config.json");
    let reports = sim.join("reports.csv");
    let meta = sim.join("districts.csv");
    let train = root.join("train");
    cli(&[
        "--quiet", "--config", s(&config), "--out", s(&train), "--seed", "12", "train", "--reports", s(&reports),
        "--metadata", s(&meta),
    ]);
    let decode = root.join("decode");
    cli(&[
        "--quiet", "--config", s(&config), "--out", s(&decode), "decode", "--params", s(&train.join("parameters.json")),
        "--reports", s(&reports), "--metadata", s(&meta),
    ]);
    let decodes = decode.join("decodes.csv");
    cli(&[
        "--quiet", "--config", s(&config), "--out", s(&root.join("agree")), "agree", "--decodes", s(&decodes),
        "--reports", s(&reports),
    ]);
    for stratify in ["none", "state", "urban_rural"] {
        cli(&[
            "--quiet", "--out", s(&root.join(format!("report_{stratify}"))), "report", "--decodes", s(&decodes),
            "--metadata", s(&meta), "--stratify", stratify, "--snapshot-weeks", "2020-10-14,2021-03-03",
        ]);
    }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism(first: &Path, second: &Path) -> Verdict {
    let clock = Instant::now();
    cli_run(first);
    cli_run(second);
    let a = tree(first);
    let b = tree(second);
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    verdict(
        differing.is_empty() && a.len() > 20,
        format!("{} files per tree, {} differ {:?}, {}", a.len(), differing.len(), differing, secs(clock.elapsed())),
    )
}

/// Largest distance of any emitted row's percentage sum from 100.
fn worst_row(percentages: impl Iterator<Item = [f64; 3]>) -> (usize, f64) {
    percentages.fold((0, 0.0f64), |(n, worst), p| (n + 1, worst.max((p.iter().sum::<f64>() - 100.0).abs())))
}

fn csv_percentages(path: &Path) -> Vec<[f64; 3]> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .filter_map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f[2].is_empty() {
                return None;
            }
            Some([f[2].parse().unwrap(), f[3].parse().unwrap(), f[4].parse().unwrap()])
        })
        .collect()
}

fn trend_normalization(corpora: &[(Vec<DecodeRow>, Vec<modfuse::pipeline::DistrictRecord>)], cli_root: &Path) -> Verdict {
    let mut rows = 0;
    let mut worst = 0.0f64;
    for (decodes, districts) in corpora {
        for by in [Stratifier::None, Stratifier::State, Stratifier::UrbanRural] {
            let report = trend_report(decodes, districts, by);
            let (n, w) = worst_row(report.rows.iter().filter_map(|r| r.percentages));
            rows += n;
            worst = worst.max(w);
        }
        let dates = [default_start() + chrono::Duration::days(9), default_start() + chrono::Duration::days(150)];
        let snap = state_snapshot(decodes, districts, &dates).unwrap();
        let (n, w) = worst_row(snap.rows.iter().filter_map(|r| r.percentages));
        rows += n;
        worst = worst.max(w);
    }
    for stratify in ["none", "state", "urban_rural"] {
        for file in ["trend.csv", "snapshots.csv"] {
            let (n, w) = worst_row(csv_percentages(&cli_root.join(format!("report_{stratify}")).join(file)).into_iter());
            rows += n;
            worst = worst.max(w);
        }
    }
    verdict(worst <= PERCENT_TOL && rows > 0, format!("{rows} rows, largest deviation from 100 {worst:.2e}"))
}

fn guarded<T>(f: impl FnOnce() -> T) -> Option<T> {
    catch_unwind(AssertUnwindSafe(f)).ok()
}

fn panicked() -> Verdict {
    verdict(false, "panicked".into())
}

fn announce(results: &mut Vec<bool>, number: usize, name: &str, v: Verdict) {
    let status = if v.pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {number} [{status}] {name}: {}\n", v.detail);
    // Written straight to the handle so the line shows even when output is captured.
    let _ = std::io::stderr().write_all(line.as_bytes());
    results.push(v.pass);
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    let r = &mut results;

    announce(r, 1, "inference matches path enumeration", guarded(inference_oracle).unwrap_or_else(panicked));
    announce(r, 2, "EM log-likelihood never decreases", guarded(em_monotonicity).unwrap_or_else(panicked));

    let recovery = guarded(parameter_recovery);
    let mut corpora = Vec::new();
    match recovery {
        Some((v, rec)) => {
            announce(r, 3, "parameter recovery", v);
            announce(r, 4, "decode accuracy", guarded(|| decode_quality(&rec)).unwrap_or_else(panicked));
            announce(r, 5, "agreement ordering", guarded(|| agreement_ordering(&rec)).unwrap_or_else(panicked));
            corpora.push((rows(&rec.decodes), rec.corpus.districts.clone()));
        }
        None => {
            for (n, name) in [(3, "parameter recovery"), (4, "decode accuracy"), (5, "agreement ordering")] {
                announce(r, n, name, panicked());
            }
        }
    }

    match guarded(pipeline_arithmetic) {
        Some((v, decodes, districts)) => {
            announce(r, 6, "pipeline district-week count", v);
            corpora.push((rows(&decodes), districts));
        }
        None => announce(r, 6, "pipeline district-week count", panicked()),
    }

    announce(r, 7, "t-test oracle", guarded(ttest_oracle).unwrap_or_else(panicked));

    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    announce(
        r,
        8,
        "byte-identical reruns",
        guarded(|| determinism(first.path(), second.path())).unwrap_or_else(panicked),
    );
    announce(
        r,
        9,
        "trend rows sum to 100",
        guarded(|| trend_normalization(&corpora, first.path())).unwrap_or_else(panicked),
    );

    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
