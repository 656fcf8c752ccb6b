//! Browser bindings. Every export takes plain numbers and returns JSON text
//! or a float array, so the same functions run natively in tests.

use serde_json::json;
use wasm_bindgen::prelude::*;

use tsa::cluster::{segment, Method};
use tsa::config::RunConfig;
use tsa::evaluate::score;
use tsa::model::train_with;
use tsa::plot::segmentation_svg;
use tsa::similarity::{combine, semantic_distribution, temporal_distribution, TemporalKernel};
use tsa::synth::{generate, SynthSpec};
use tsa::TsaError;

fn js_err(e: TsaError) -> JsError {
    JsError::new(&e.to_string())
}

fn demo_video(seed: u64, sigma: f64) -> SynthSpec {
    SynthSpec {
        seed,
        noise_sigma: sigma,
        frames_per_segment: (20, 30),
        ..SynthSpec::default()
    }
}

/// `w(d)` for `d = 0..=max_distance`.
#[wasm_bindgen]
pub fn temporal_kernel_curve(window: usize, max_distance: usize) -> Result<Vec<f64>, JsError> {
    let k = TemporalKernel::new(window).map_err(js_err)?;
    Ok((0..=max_distance).map(|d| k.weight(d as f64)).collect())
}

/// Semantic, temporal and combined distributions of a synthetic video, as
/// `{"n": N, "labels": [...], "fs": [...], "ft": [...], "fts": [...]}` with
/// row-major matrices.
#[wasm_bindgen]
pub fn affinity_maps(seed: u64, sigma: f64, h: f64, window: usize, alpha: f64) -> Result<String, JsError> {
    let (x, y) = generate(&demo_video(seed, sigma)).map_err(js_err)?;
    let n = x.rows();
    let fs = semantic_distribution(&x, h).map_err(js_err)?;
    let ft = temporal_distribution(n, &TemporalKernel::new(window).map_err(js_err)?).map_err(js_err)?;
    let fts = combine(&fs, &ft, &vec![alpha.clamp(0.0, 1.0); n], 1e-8).map_err(js_err)?;
    Ok(json!({
        "n": n,
        "labels": y.labels,
        "fs": fs.as_slice(),
        "ft": ft.as_slice(),
        "fts": fts.as_slice(),
    })
    .to_string())
}

/// Synthesizes a video, trains on it, clusters raw and learned features with
/// `method` and returns scores, the loss curve and an SVG of the bars.
#[wasm_bindgen]
pub fn run_pipeline(
    seed: u64,
    sigma: f64,
    learning_rate: f64,
    window: usize,
    method: &str,
) -> Result<String, JsError> {
    let method: Method = method.parse().map_err(js_err)?;
    let (x, y) = generate(&demo_video(seed, sigma)).map_err(js_err)?;
    let cfg = RunConfig {
        seed,
        learning_rate,
        window,
        ..RunConfig::default()
    };
    cfg.validate().map_err(js_err)?;
    let mut losses = Vec::new();
    let out = train_with(&x, &cfg, |r| losses.push(r.loss)).map_err(js_err)?;
    let k = y.num_classes();
    let raw = segment(&x, method, k, seed).map_err(js_err)?;
    let learned = segment(&out.z, method, k, seed).map_err(js_err)?;
    let raw_scores = score(raw.labels(), &y.labels).map_err(js_err)?;
    let tsa_scores = score(learned.labels(), &y.labels).map_err(js_err)?;
    let svg = segmentation_svg(
        &y,
        &[
            ("raw X".to_string(), raw.labels().to_vec()),
            ("TSA Z".to_string(), learned.labels().to_vec()),
        ],
    )
    .map_err(js_err)?;
    Ok(json!({
        "frames": x.rows(),
        "epochs": out.state.epoch,
        "losses": losses,
        "alpha": out.model.alpha(cfg.mixing),
        "raw": { "mof": raw_scores.mof, "iou": raw_scores.iou, "f1": raw_scores.f1 },
        "tsa": { "mof": tsa_scores.mof, "iou": tsa_scores.iou, "f1": tsa_scores.f1 },
        "svg": svg,
    })
    .to_string())
}
