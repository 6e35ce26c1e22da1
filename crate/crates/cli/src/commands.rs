use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use adagev::data::{gen_shifted_blobs, write_blobs_csv, BlobShiftConfig, RoleSplit};
use adagev::evt::{extract_tail, fit_gev_mle_with, FitPool, GevFit, TailConfig, TailMethod};
use adagev::model::{load_checkpoint, save_checkpoint};
use adagev::pipeline::{evaluate, run_ablation, run_ablations, AblationMode, EvalReport, RejectRule, Trained};
use serde::Serialize;

use crate::config::{DataSource, RunConfig};
use crate::error::CliError;
use crate::{EvalArgs, FitGevArgs, GenDataArgs, RunArgs, SweepArgs};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const DATA_FILE: &str = "blobs.csv";

/// A report together with the configuration that produced it.
#[derive(Serialize)]
struct ReportDoc<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    config: &'a RunConfig,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn write_log(path: &Path, trained: &Trained) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for record in &trained.log {
        serde_json::to_writer(&mut w, record)?;
        writeln!(w).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Config echo, checkpoint with its GEV section and the epoch log.
fn write_run(dir: &Path, cfg: &RunConfig, trained: &Trained) -> Result<(), CliError> {
    create_dir(dir)?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    let path = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&path, &trained.params, Some(&trained.gev)).map_err(CliError::at(&path))?;
    write_log(&dir.join(LOG_FILE), trained)
}

fn write_report(path: &Path, report: &EvalReport, cfg: &RunConfig) -> Result<(), CliError> {
    write_json(path, &ReportDoc { report, config: cfg })
}

fn fmt_recall(r: Option<f64>) -> String {
    r.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

pub fn gen_data(args: &GenDataArgs) -> Result<(), CliError> {
    let split: RoleSplit = match &args.split {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => RoleSplit::digits(),
    };
    split.validate(args.classes)?;
    let mut cfg = BlobShiftConfig {
        classes: args.classes,
        dim: args.dim,
        seed: args.seed,
        ..Default::default()
    };
    if let Some(n) = args.source_per_class {
        cfg.source_per_class = n;
    }
    if let Some(n) = args.target_per_class {
        cfg.target_per_class = n;
    }
    if let Some(s) = args.cluster_std {
        cfg.cluster_std = s;
    }
    if let Some(deg) = args.rotation {
        cfg.rotation = deg.to_radians();
    }
    let raw = gen_shifted_blobs(&cfg)?;

    create_dir(&args.out)?;
    let path = args.out.join(DATA_FILE);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_blobs_csv(BufWriter::new(file), &raw).map_err(CliError::at(&path))?;
    write_json(&args.out.join("blobs.json"), &cfg)?;
    println!(
        "{}: {} source and {} target samples, {} classes, {} dims",
        path.display(),
        raw.source.len(),
        raw.target.len(),
        cfg.classes,
        cfg.dim
    );
    Ok(())
}

pub fn train(run: &RunArgs, out: &Path) -> Result<(), CliError> {
    let mut cfg = run.to_config()?;
    cfg.variant = None;
    let pool = cfg.resolve()?;
    let trained = adagev::train(&pool.train_view(), cfg.specs(), &cfg.train)?;
    write_run(out, &cfg, &trained)?;
    if let Some(last) = trained.log.last() {
        println!(
            "epoch {}: total {:.4}, L_d {:.4}, L_e {:.4}, L_c {:.4}",
            last.epoch, last.loss_total, last.loss_domain, last.loss_entropy_unknown, last.loss_classification
        );
    }
    let g = trained.gev;
    println!(
        "GEV from {} tail values: l {:.4}, s {:.4}, c {:.4}",
        trained.tail.len(),
        g.l,
        g.s,
        g.c
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&args.checkpoint).map_err(CliError::at(&args.checkpoint))?;
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(path) = &args.data {
        cfg.data = DataSource::Csv { path: path.clone() };
    }
    cfg.model = Some(ckpt.params.specs());
    let pool = cfg.resolve()?;
    let rule = match (args.threshold, ckpt.gev) {
        (Some(tau), _) => RejectRule::Threshold(tau),
        (None, Some(gev)) => RejectRule::Gev(gev),
        (None, None) => {
            return Err(CliError::Data(format!(
                "{} has no GEV section; pass --threshold",
                args.checkpoint.display()
            )))
        }
    };
    let report = evaluate(&ckpt.params, &rule, &pool)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_report(&args.out, &report, &cfg)?;
    println!(
        "OS {:.4}  OS* {:.4}  UNK {}  ({} samples)",
        report.os,
        report.os_star,
        fmt_recall(report.unk),
        report.samples
    );
    Ok(())
}

pub fn ablate(run: &RunArgs, variants: Vec<AblationMode>, tau: Option<f64>, out: &Path) -> Result<(), CliError> {
    let mut cfg = run.to_config()?;
    let mut modes = if !variants.is_empty() {
        variants
    } else if let Some(v) = cfg.variant {
        vec![v]
    } else {
        vec![
            AblationMode::Full,
            AblationMode::NoReweight,
            AblationMode::NoEvtBinary,
            AblationMode::HardThreshold { tau: None },
        ]
    };
    if let Some(t) = tau {
        for m in &mut modes {
            if let AblationMode::HardThreshold { tau } = m {
                *tau = Some(t);
            }
        }
    }
    let pool = cfg.resolve()?;
    let outcomes = run_ablations(&pool, cfg.specs(), &cfg.train, &modes)?;

    let mut summary = String::from("variant\tos\tos_star\tunk\n");
    for o in &outcomes {
        let dir = out.join(o.mode.name());
        let mut echo = cfg.clone();
        echo.variant = Some(o.mode);
        write_run(&dir, &echo, &o.trained)?;
        write_report(&dir.join(REPORT_FILE), &o.report, &echo)?;
        summary.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{}\n",
            o.mode.name(),
            o.report.os,
            o.report.os_star,
            fmt_recall(o.report.unk)
        ));
    }
    let path = out.join("summary.tsv");
    fs::write(&path, &summary).map_err(|e| CliError::io(&path, e))?;
    print!("{summary}");
    Ok(())
}

#[derive(Serialize)]
struct FitOutput<'a> {
    values: usize,
    tail: Option<TailMethod>,
    fitted: usize,
    #[serde(flatten)]
    fit: &'a GevFit,
}

/// Parses whitespace- or comma-separated numbers.
pub fn parse_values(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::Data(format!("'{t}' is not a number")))
        })
        .collect()
}

pub fn fit_gev(args: &FitGevArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.input).map_err(|e| CliError::io(&args.input, e))?;
    let values = parse_values(&text)?;
    let fitted = match args.tail {
        Some(method) => {
            let tc = TailConfig {
                method,
                source_pool: FitPool::KnownOnly,
                min_tail: args.min_tail,
            };
            extract_tail(&values, &tc, args.seed)?
        }
        None => values.clone(),
    };
    let fit = fit_gev_mle_with(&fitted, Default::default())?;
    let doc = FitOutput {
        values: values.len(),
        tail: args.tail,
        fitted: fitted.len(),
        fit: &fit,
    };
    match &args.out {
        Some(path) => write_json(path, &doc)?,
        None => println!("{}", serde_json::to_string_pretty(&doc)?),
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    point: String,
    lambda_d: f64,
    lambda_e: f64,
    lambda_c: f64,
    os: f64,
    os_star: f64,
    unk: Option<f64>,
}

pub fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let mut base_args = args.run.clone();
    base_args.lambda_d.clear();
    base_args.lambda_e.clear();
    base_args.lambda_c.clear();
    let mut base = base_args.to_config()?;
    let variant = args.variant.or(base.variant).unwrap_or(AblationMode::Full);
    base.variant = Some(variant);
    let pool = base.resolve()?;

    let lw = base.train.loss_weights;
    let axis = |grid: &[f64], current: f64| if grid.is_empty() { vec![current] } else { grid.to_vec() };
    let mut points = Vec::new();
    for &d in &axis(&args.run.lambda_d, lw.lambda_d) {
        for &e in &axis(&args.run.lambda_e, lw.lambda_e) {
            for &c in &axis(&args.run.lambda_c, lw.lambda_c) {
                let mut cfg = base.clone();
                cfg.train.loss_weights.lambda_d = d;
                cfg.train.loss_weights.lambda_e = e;
                cfg.train.loss_weights.lambda_c = c;
                cfg.train.validate()?;
                points.push(cfg);
            }
        }
    }

    // Points are independent, so workers just pull the next index.
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<EvalReport, CliError>>>> =
        Mutex::new((0..points.len()).map(|_| None).collect());
    let run_point = |i: usize| -> Result<EvalReport, CliError> {
        let cfg = &points[i];
        let o = run_ablation(&pool, cfg.specs(), &cfg.train, variant)?;
        let dir = args.out.join(format!("point-{i:03}"));
        write_run(&dir, cfg, &o.trained)?;
        write_report(&dir.join(REPORT_FILE), &o.report, cfg)?;
        Ok(o.report)
    };
    std::thread::scope(|s| {
        for _ in 0..args.jobs.clamp(1, points.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= points.len() {
                    break;
                }
                let r = run_point(i);
                results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });

    let mut rows = Vec::with_capacity(points.len());
    for (i, (cfg, r)) in points
        .iter()
        .zip(results.into_inner().expect("workers joined"))
        .enumerate()
    {
        let report = r.expect("every point ran")?;
        let lw = cfg.train.loss_weights;
        rows.push(SweepRow {
            point: format!("point-{i:03}"),
            lambda_d: lw.lambda_d,
            lambda_e: lw.lambda_e,
            lambda_c: lw.lambda_c,
            os: report.os,
            os_star: report.os_star,
            unk: report.unk,
        });
    }
    let mut table = String::from("point\tlambda_d\tlambda_e\tlambda_c\tos\tos_star\tunk\n");
    for r in &rows {
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{}\n",
            r.point,
            r.lambda_d,
            r.lambda_e,
            r.lambda_c,
            r.os,
            r.os_star,
            fmt_recall(r.unk)
        ));
    }
    let path = args.out.join("summary.tsv");
    fs::write(&path, &table).map_err(|e| CliError::io(&path, e))?;
    write_json(&args.out.join("summary.json"), &rows)?;
    print!("{table}");
    Ok(())
}
