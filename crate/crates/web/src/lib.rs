//! WebAssembly bindings behind `www/index.html`.
//!
//! Every export returns a JSON string; the page parses it and draws on a
//! canvas. The `*_json` functions hold the logic so they can be tested
//! natively.

use adagev::data::{apply_roles, gen_shifted_blobs, BlobShiftConfig, RoleSplit};
use adagev::model::ModelSpecs;
use adagev::objective::{batch_weights, LossWeights, WeightConfig, WeightMode};
use adagev::pipeline::{predict, truth_index, EpochLog, EvalReport, TrainConfig};
use adagev::{GevParams, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js(r: Result<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[derive(Serialize)]
struct GevCurves {
    x: Vec<f64>,
    pdf: Vec<f64>,
    cdf: Vec<f64>,
    /// Entropies above this are rejected as unknown.
    threshold: f64,
}

pub fn gev_curves_json(l: f64, s: f64, c: f64, points: usize) -> Result<String> {
    let p = GevParams::new(l, s, c)?;
    let n = points.clamp(2, 2000);
    let (lo, hi) = (p.quantile(0.001), p.quantile(0.999));
    let x: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let curves = GevCurves {
        pdf: x.iter().map(|&v| p.pdf(v)).collect(),
        cdf: x.iter().map(|&v| p.cdf(v)).collect(),
        threshold: p.quantile(0.5),
        x,
    };
    Ok(serde_json::to_string(&curves).expect("plain floats serialize"))
}

/// PDF, CDF and rejection threshold of a GEV over its central 99.8%.
#[wasm_bindgen]
pub fn gev_curves(l: f64, s: f64, c: f64, points: usize) -> Result<String, JsError> {
    js(gev_curves_json(l, s, c, points))
}

#[derive(Serialize)]
struct WeightCurves {
    entropy: Vec<f64>,
    neg_entropy: Vec<f64>,
    paper_literal: Vec<f64>,
    uniform: Vec<f64>,
}

pub fn weight_curves_json(classes: usize, batch: usize) -> Result<String> {
    let k = classes.max(2) as f64;
    let n = batch.clamp(2, 512);
    let entropy: Vec<f64> = (0..n).map(|i| k.ln() * i as f64 / (n - 1) as f64).collect();
    let weights = |weight_mode| {
        let cfg = WeightConfig {
            weight_mode,
            ..Default::default()
        };
        batch_weights(&entropy, &cfg, None)
    };
    let curves = WeightCurves {
        neg_entropy: weights(WeightMode::NegEntropy)?,
        paper_literal: weights(WeightMode::PaperLiteral)?,
        uniform: weights(WeightMode::Uniform)?,
        entropy,
    };
    Ok(serde_json::to_string(&curves).expect("plain floats serialize"))
}

/// Normalized target weights for a batch whose entropies are spread evenly
/// over `[0, ln K]`.
#[wasm_bindgen]
pub fn weight_curves(classes: usize, batch: usize) -> Result<String, JsError> {
    js(weight_curves_json(classes, batch))
}

#[derive(Serialize)]
struct ToyRun {
    /// `[x, y, class]` for known source samples.
    source: Vec<[f64; 3]>,
    /// `[x, y, truth, prediction]` with the unknown class at index K.
    target: Vec<[f64; 4]>,
    classes: usize,
    gev: GevParams,
    report: EvalReport,
    log: Vec<EpochLog>,
}

pub fn train_toy_json(seed: u64, epochs: usize, lambda_d: f64, lambda_e: f64, rotation_deg: f64) -> Result<String> {
    let blobs = BlobShiftConfig {
        seed,
        rotation: rotation_deg.to_radians(),
        // 4 known classes give 32 block maxima, above the fit minimum
        source_per_class: 160,
        target_per_class: 60,
        ..Default::default()
    };
    let raw = gen_shifted_blobs(&blobs)?;
    let pool = apply_roles(&raw.source, &raw.target, &RoleSplit::digits())?;
    let specs = ModelSpecs::standard(pool.dim(), pool.classes());
    let tc = TrainConfig {
        epochs: epochs.clamp(1, 100),
        seed,
        loss_weights: LossWeights {
            lambda_d,
            lambda_e,
            ..Default::default()
        },
        ..Default::default()
    };
    let view = pool.train_view();
    let trained = adagev::train(&view, &specs, &tc)?;
    let k = pool.classes();
    let preds = predict(&trained.params, &trained.gev, pool.target_features())?;
    let target = pool
        .target_features()
        .row_iter()
        .zip(pool.target_truth())
        .zip(&preds)
        .map(|((row, &truth), pred)| [row[0], row[1], truth_index(truth, k) as f64, pred.index(k) as f64])
        .collect();
    let source = view
        .source_known
        .features
        .row_iter()
        .zip(&view.source_known.labels)
        .map(|(row, &y)| [row[0], row[1], y as f64])
        .collect();
    let mut report = EvalReport::from_predictions(k, pool.target_truth(), &preds);
    report.gev = Some(trained.gev);
    let run = ToyRun {
        source,
        target,
        classes: k,
        gev: trained.gev,
        report,
        log: trained.log,
    };
    Ok(serde_json::to_string(&run).expect("plain floats serialize"))
}

/// Trains on a small shifted-blobs benchmark and returns the target
/// predictions, metrics, GEV and epoch log.
#[wasm_bindgen]
pub fn train_toy(seed: u64, epochs: usize, lambda_d: f64, lambda_e: f64, rotation_deg: f64) -> Result<String, JsError> {
    js(train_toy_json(seed, epochs, lambda_d, lambda_e, rotation_deg))
}
