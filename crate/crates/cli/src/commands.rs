use std::collections::BTreeSet;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use modfuse::agreement::{compare_agreement, write_comparisons, ProviderCoverage, SampleUnit};
use modfuse::decode::{load_decodes, write_decodes, DecodeRow};
use modfuse::em::random_initializations;
use modfuse::model::{load_parameters, parameters_to_json, reference_parameters, REFERENCE_SOURCES};
use modfuse::pipeline::{
    aggregate_to_weeks, build_sequences, coverage_summary, filter_eligible, load_metadata, load_reports, write_metadata,
    write_reports, Eligibility, MetadataLoad, PipelineConfig, SequenceBuild, StudyWindow, WeeklyCells,
};
use modfuse::report::districts_missing_stratum;
use modfuse::{
    baum_welch_restarts, decode_all, generate, label_model, state_snapshot, trend_report, DecodeMode, EmConfig,
    ModelParameters, Stratifier,
};
use serde_json::{json, Value};

use crate::config::{RunConfig, SimulationConfig};
use crate::manifest::{basename, manifest, OutDir};
use crate::{AgreeArgs, Cli, Command, DecodeArgs, InitKind, LabelPolicy, ReportArgs, TrainArgs};

/// Weight of the uniform distribution in the smoothed-table initialization.
const SMOOTHING_WEIGHT: f64 = 0.1;

struct Log {
    quiet: bool,
}

impl Log {
    fn info(&self, msg: impl Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn warn(&self, msg: impl Display) {
        if !self.quiet {
            eprintln!("warning: {msg}");
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let out = cli.out.as_deref().context("missing --out DIR")?;
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let log = Log { quiet: cli.quiet };
    match &cli.command {
        Command::Simulate => simulate(cli, &cfg, out, &log),
        Command::Train(args) => train(cli, &cfg, args, out, &log),
        Command::Decode(args) => decode(&cfg, args, out, &log),
        Command::Agree(args) => agree(&cfg, args, out, &log),
        Command::Report(args) => report(args, out, &log),
    }
}

fn simulate(cli: &Cli, cfg: &RunConfig, out: &Path, log: &Log) -> Result<()> {
    let base = cli
        .config
        .as_deref()
        .and_then(Path::parent)
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let gen = cfg.generator(cli.seed, &base)?;
    let corpus = generate(&gen)?;
    log.info(format_args!(
        "sampled {} districts x {} weeks (seed {})",
        gen.n_districts, gen.n_weeks, gen.seed
    ));

    let mut dir = OutDir::create(out)?;
    let reports = corpus.reports();
    dir.write("reports.csv", |w| Ok(write_reports(w, &reports, &gen.sources)?))?;
    dir.write("districts.csv", |w| Ok(write_metadata(w, &corpus.districts)?))?;
    dir.write("truth.csv", |w| Ok(corpus.write_truth(w)?))?;
    let params_json = parameters_to_json(&gen.parameters, &gen.sources)?;
    dir.write("parameters.json", |w| Ok(writeln!(w, "{params_json}")?))?;

    let downstream = RunConfig {
        pipeline: PipelineConfig {
            window: StudyWindow::from_weeks(gen.start, gen.n_weeks, cfg.pipeline.window.week_start)?,
            sources: gen.sources.clone(),
            ..cfg.pipeline.clone()
        },
        simulation: SimulationConfig {
            n_districts: gen.n_districts,
            n_weeks: gen.n_weeks,
            start: gen.start,
            seed: gen.seed,
            parameters: Some(PathBuf::from("parameters.json")),
            missingness: Some(gen.missingness.clone()),
        },
    };
    dir.write_json("config.json", &downstream)?;

    let cells = (gen.n_districts * gen.n_weeks) as f64;
    let coverage: Vec<Value> = gen
        .sources
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let observed: usize = corpus.sequences.iter().map(|s| s.channel_observed_count(c)).sum();
            let configured = 1.0 - (0..gen.n_weeks).map(|t| gen.missingness[c].rate(t)).sum::<f64>() / gen.n_weeks as f64;
            json!({
                "source": name,
                "district_weeks": observed,
                "coverage_rate": observed as f64 / cells,
                "configured_coverage_rate": configured,
            })
        })
        .collect();

    let mut m = manifest("simulate", Some(gen.seed), serde_json::to_value(cfg)?, json!({}));
    if let Some(path) = &cli.config {
        m.input("config", path)?;
    }
    m.summary = json!({
        "districts": gen.n_districts,
        "weeks": gen.n_weeks,
        "reports": reports.len(),
        "coverage": coverage,
    });
    dir.finish(m)
}

struct Ingested {
    build: SequenceBuild,
    cells: WeeklyCells,
    metadata: MetadataLoad,
    eligibility: Eligibility,
    n_reports: usize,
}

fn ingest(pipeline: &PipelineConfig, window: &StudyWindow, reports: &Path, metadata: &Path, log: &Log) -> Result<Ingested> {
    let raw = load_reports(reports, pipeline)?;
    let meta = load_metadata(metadata)?;
    for r in &meta.rejected {
        log.warn(format_args!(
            "{}:{}: district `{}` skipped: {}",
            metadata.display(),
            r.line.unwrap_or(0),
            r.leaid,
            r.reason
        ));
    }
    let cells = aggregate_to_weeks(&raw, window);
    if cells.out_of_window > 0 {
        log.info(format_args!("{} reports fall outside the study window", cells.out_of_window));
    }
    let eligibility = filter_eligible(&meta.records, &pipeline.eligibility);
    let build = build_sequences(&cells, &eligibility, pipeline.sources.len(), window)?;
    if !build.unknown_districts.is_empty() {
        log.warn(format_args!(
            "{} reporting districts are missing from {} and were excluded",
            build.unknown_districts.len(),
            metadata.display()
        ));
    }
    log.info(format_args!(
        "{} reports, {} eligible districts with reports, {} weeks",
        raw.len(),
        build.sequences.len(),
        window.n_weeks()
    ));
    Ok(Ingested {
        build,
        cells,
        metadata: meta,
        eligibility,
        n_reports: raw.len(),
    })
}

fn write_exclusions(dir: &mut OutDir, data: &Ingested) -> Result<()> {
    dir.write("exclusions.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["leaid", "line", "reason"])?;
        for e in data.metadata.rejected.iter().chain(&data.eligibility.excluded) {
            csv.write_record([e.leaid.clone(), e.line.map(|l| l.to_string()).unwrap_or_default(), e.reason.to_string()])?;
        }
        for id in &data.build.unknown_districts {
            csv.write_record([id.as_str(), "", "not in metadata"])?;
        }
        csv.flush()?;
        Ok(())
    })
}

fn check_sources(file: &Path, found: &[String], expected: &[String]) -> Result<()> {
    if found != expected {
        bail!(
            "{}: channel order mismatch: parameters list sources [{}] but the configuration lists [{}]",
            file.display(),
            found.join(", "),
            expected.join(", ")
        );
    }
    Ok(())
}

fn initializations(cli: &Cli, pipeline: &PipelineConfig, args: &TrainArgs) -> Result<Vec<ModelParameters>> {
    let n = pipeline.sources.len();
    match args.init {
        InitKind::Random => {
            if args.restarts == 0 {
                bail!("--restarts must be at least 1");
            }
            Ok(random_initializations(cli.seed.unwrap_or(0), args.restarts, n))
        }
        InitKind::SmoothedTable => {
            let names: Vec<String> = REFERENCE_SOURCES.iter().map(|s| s.to_string()).collect();
            let table = reference_parameters()
                .reorder_channels(&names, &pipeline.sources)
                .context("--init smoothed-table needs the configured sources to be the reference sources")?;
            Ok(vec![table.blend_uniform(SMOOTHING_WEIGHT)])
        }
        InitKind::File => {
            let path = args.init_file.as_deref().context("--init file needs --init-file PATH")?;
            let (p, names) = load_parameters(path)?;
            check_sources(path, &names, &pipeline.sources)?;
            Ok(vec![p])
        }
    }
}

fn train(cli: &Cli, cfg: &RunConfig, args: &TrainArgs, out: &Path, log: &Log) -> Result<()> {
    let pipeline = &cfg.pipeline;
    let window = match args.cutoff_date {
        Some(c) => pipeline.window.truncated(c)?,
        None => pipeline.window,
    };
    let data = ingest(pipeline, &window, &args.inputs.reports, &args.inputs.metadata, log)?;
    let seqs = &data.build.sequences;
    if seqs.is_empty() {
        bail!("{}: no eligible district has any report in the window", args.inputs.reports.display());
    }
    let inits = initializations(cli, pipeline, args)?;
    let em = EmConfig {
        max_iters: args.max_iters,
        tolerance: args.tol,
        pseudocount: args.pseudocount,
    };
    let fit = baum_welch_restarts(seqs, &inits, &em)?;
    log.info(format_args!(
        "best of {} runs: log-likelihood {:.4} after {} iterations",
        inits.len(),
        fit.best.log_likelihood(),
        fit.best.iterations()
    ));
    let (mapping, params) = match args.labels {
        LabelPolicy::Auto => {
            let (a, p) = label_model(&fit.best.params, seqs, DecodeMode::Posterior)?;
            (Some(a), p)
        }
        LabelPolicy::Keep => (None, fit.best.params.clone()),
    };

    let mut dir = OutDir::create(out)?;
    let params_json = parameters_to_json(&params, &pipeline.sources)?;
    dir.write("parameters.json", |w| Ok(writeln!(w, "{params_json}")?))?;
    dir.write("trace.csv", |w| {
        writeln!(w, "iteration,log_likelihood")?;
        for (k, ll) in fit.best.trace.iter().enumerate() {
            writeln!(w, "{k},{ll}")?;
        }
        Ok(())
    })?;
    let coverage = coverage_summary(seqs, &pipeline.sources);
    dir.write_json(
        "coverage.json",
        &json!({
            "window_start": window.start,
            "window_end": window.end,
            "weeks": window.n_weeks(),
            "reports_out_of_window": data.cells.out_of_window,
            "coverage": coverage,
        }),
    )?;
    write_exclusions(&mut dir, &data)?;

    let mut m = manifest(
        "train",
        (args.init == InitKind::Random).then(|| cli.seed.unwrap_or(0)),
        serde_json::to_value(pipeline)?,
        json!({
            "cutoff_date": args.cutoff_date,
            "init": format!("{:?}", args.init),
            "init_file": args.init_file.as_deref().map(basename),
            "restarts": inits.len(),
            "max_iters": args.max_iters,
            "tol": args.tol,
            "pseudocount": args.pseudocount,
            "labels": format!("{:?}", args.labels),
        }),
    );
    m.input("reports", &args.inputs.reports)?;
    m.input("metadata", &args.inputs.metadata)?;
    if let Some(p) = &args.init_file {
        m.input("init_file", p)?;
    }
    if let Some(p) = &cli.config {
        m.input("config", p)?;
    }
    m.summary = json!({
        "reports": data.n_reports,
        "sequences": seqs.len(),
        "restart_log_likelihoods": fit.log_likelihoods,
        "best_restart": fit.best_index,
        "iterations": fit.best.iterations(),
        "converged": fit.best.converged,
        "log_likelihood": fit.best.log_likelihood(),
        "label_mapping": mapping.as_ref().map(|a| a.mapping),
        "label_histograms": mapping.as_ref().map(|a| a.histograms),
        "coverage": coverage,
    });
    dir.finish(m)
}

fn decode(cfg: &RunConfig, args: &DecodeArgs, out: &Path, log: &Log) -> Result<()> {
    let pipeline = &cfg.pipeline;
    let mode: DecodeMode = args.mode.parse()?;
    if !args.threshold.is_finite() {
        bail!("--threshold must be a finite number");
    }
    let (params, names) = load_parameters(&args.params)?;
    check_sources(&args.params, &names, &pipeline.sources)?;
    let data = ingest(pipeline, &pipeline.window, &args.inputs.reports, &args.inputs.metadata, log)?;
    let decodes = decode_all(&params, &data.build.sequences, mode, args.threshold)?;
    let weeks: usize = decodes.iter().map(|d| d.per_week.len()).sum();
    let high: usize = decodes.iter().flat_map(|d| &d.per_week).filter(|w| w.high_confidence).count();
    log.info(format_args!("decoded {weeks} district-weeks, {high} high-confidence"));

    let mut dir = OutDir::create(out)?;
    dir.write("decodes.csv", |w| Ok(write_decodes(w, &decodes)?))?;
    let mut m = manifest(
        "decode",
        None,
        serde_json::to_value(pipeline)?,
        json!({ "mode": args.mode, "threshold": args.threshold }),
    );
    m.input("params", &args.params)?;
    m.input("reports", &args.inputs.reports)?;
    m.input("metadata", &args.inputs.metadata)?;
    m.summary = json!({
        "districts": decodes.len(),
        "district_weeks": weeks,
        "high_confidence_district_weeks": high,
        "high_confidence_fraction": if weeks > 0 { high as f64 / weeks as f64 } else { 0.0 },
    });
    dir.finish(m)
}

fn agree(cfg: &RunConfig, args: &AgreeArgs, out: &Path, log: &Log) -> Result<()> {
    let pipeline = &cfg.pipeline;
    let unit: SampleUnit = args.unit.parse()?;
    let decodes = load_decodes(&args.decodes)?;
    let week_starts: BTreeSet<_> = (0..pipeline.window.n_weeks()).map(|i| pipeline.window.week_start_date(i)).collect();
    if let Some(r) = decodes.iter().find(|r| !week_starts.contains(&r.week_start)) {
        bail!(
            "{}: week {} of `{}` is not a week of the configured window",
            args.decodes.display(),
            r.week_start,
            r.leaid
        );
    }
    let raw = load_reports(&args.reports, pipeline)?;
    let mut cells = aggregate_to_weeks(&raw, &pipeline.window);
    let decoded: BTreeSet<&str> = decodes.iter().map(|r| r.leaid.as_str()).collect();
    let before = cells.len();
    cells.cells.retain(|k, _| decoded.contains(k.leaid.as_str()));
    if cells.len() < before {
        log.info(format_args!("{} source cells belong to undecoded districts and are ignored", before - cells.len()));
    }
    let coverage = ProviderCoverage::new(&decodes, &cells, &pipeline.sources, &pipeline.window);
    let matrix = coverage.matrix();
    let tests = compare_agreement(&coverage, unit);

    let mut dir = OutDir::create(out)?;
    dir.write("agreement_matrix.csv", |w| Ok(matrix.write_square(w)?))?;
    dir.write("agreement_pairs.csv", |w| Ok(matrix.write_pairs(w)?))?;
    dir.write("agreement_ttest.csv", |w| Ok(write_comparisons(w, &tests)?))?;

    let model = coverage.model_index();
    let with_model: Vec<Value> = (0..model)
        .map(|s| {
            json!({
                "source": pipeline.sources[s],
                "overlap": matrix.overlap[s][model],
                "agreement": matrix.proportion(s, model),
            })
        })
        .collect();
    for v in &with_model {
        log.info(format_args!("{} vs model: {}", v["source"], v["agreement"]));
    }
    let mut m = manifest("agree", None, serde_json::to_value(pipeline)?, json!({ "unit": args.unit }));
    m.input("decodes", &args.decodes)?;
    m.input("reports", &args.reports)?;
    m.summary = json!({ "model_agreement": with_model });
    dir.finish(m)
}

fn describe_missing(ids: &[String]) -> String {
    const SHOWN: usize = 20;
    let mut s = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(" and {} more", ids.len() - SHOWN));
    }
    s
}

fn report(args: &ReportArgs, out: &Path, log: &Log) -> Result<()> {
    let stratifier: Stratifier = args.stratify.parse()?;
    let decodes: Vec<DecodeRow> = load_decodes(&args.decodes)?;
    let meta = load_metadata(&args.metadata)?;
    for r in &meta.rejected {
        log.warn(format_args!("{}:{}: {}", args.metadata.display(), r.line.unwrap_or(0), r.reason));
    }
    if stratifier == Stratifier::UrbanRural && !args.allow_unknown_stratum {
        let missing = districts_missing_stratum(&decodes, &meta.records, stratifier);
        if !missing.is_empty() {
            bail!(
                "{}: {} decoded districts have no urban_rural value: {} (pass --allow-unknown-stratum to report them as `unknown`)",
                args.metadata.display(),
                missing.len(),
                describe_missing(&missing)
            );
        }
    }
    let trend = trend_report(&decodes, &meta.records, stratifier);
    let mut dir = OutDir::create(out)?;
    dir.write("trend.csv", |w| Ok(trend.write(w)?))?;
    let mut summary = json!({ "trend_rows": trend.rows.len() });
    if !args.snapshot_weeks.is_empty() {
        let snap = state_snapshot(&decodes, &meta.records, &args.snapshot_weeks)?;
        dir.write("snapshots.csv", |w| Ok(snap.write(w)?))?;
        summary["snapshot_rows"] = json!(snap.rows.len());
    }
    let mut m = manifest(
        "report",
        None,
        Value::Null,
        json!({
            "stratify": args.stratify,
            "snapshot_weeks": args.snapshot_weeks,
            "allow_unknown_stratum": args.allow_unknown_stratum,
        }),
    );
    m.input("decodes", &args.decodes)?;
    m.input("metadata", &args.metadata)?;
    m.summary = summary;
    log.info(format_args!("wrote {} trend rows", trend.rows.len()));
    dir.finish(m)
}
