//! Browser demo: reliability diagrams, certificate curves and recalibration.
//!
//! Every export returns a JSON string so the page can stay plain JavaScript.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use calib_core::bounds::{evaluate, total_bias_bound_test, BoundInputs, BoundKind};
use calib_core::ece::{bin_stats_1d, ece_top_label, optimal_bins_1d, BinStat};
use calib_core::recal::{temperature_scaling_fit, train_pbr, PbrConfig, RecalMap};
use calib_core::synthetic::{
    gen_binary, gen_multiclass, true_tce, ConfidenceLaw, MiscalibrationMap1D, MulticlassMap, SyntheticSpec1D,
    SyntheticSpecK,
};
use calib_core::Result;

#[derive(Serialize)]
struct Reliability {
    n: usize,
    bins: usize,
    ece: f64,
    tce: f64,
    certificate: f64,
    table: Vec<BinStat>,
    curve: Vec<(f64, f64)>,
}

/// Sine-miscalibrated binary predictor: reliability table, ECE, oracle TCE
/// and the 95% certificate on `|TCE - ECE|`.
pub fn reliability(n: usize, amplitude: f64, frequency: f64, bins: usize, seed: u64) -> Result<String> {
    let spec = SyntheticSpec1D {
        confidence: ConfidenceLaw::Uniform { lo: 0.5, hi: 1.0 },
        map: MiscalibrationMap1D::Sine { amplitude, frequency },
        n,
        seed,
        stream: 0,
    };
    let bins = if bins == 0 { optimal_bins_1d(n) } else { bins };
    let data = gen_binary(&spec)?;
    let cert = total_bias_bound_test(&BoundInputs::new(n, bins as u64, spec.lipschitz(), 0.05))?;
    let curve = (0..=100)
        .map(|i| {
            let c = 0.5 + 0.005 * i as f64;
            (c, spec.map.eval(c))
        })
        .collect();
    Ok(to_json(&Reliability {
        n,
        bins,
        ece: ece_top_label(&data, bins)?,
        tce: true_tce(&spec)?,
        certificate: cert.value,
        table: bin_stats_1d(&data, bins)?,
        curve,
    }))
}

#[derive(Serialize)]
struct BoundCurve {
    n: usize,
    rule_bins: usize,
    argmin_bins: u64,
    points: Vec<(u64, f64, f64, f64)>,
}

/// Test-set certificate against the bin count: `(B, value, binning, statistical)`.
pub fn bound_curve(n: usize, lipschitz: f64, epsilon: f64, max_bins: u64) -> Result<String> {
    let points = (1..=max_bins.max(1))
        .map(|b| {
            let c = evaluate(BoundKind::TotalBiasTest, &BoundInputs::new(n, b, lipschitz, epsilon))?;
            Ok((b, c.value, c.binning_term, c.statistical_term))
        })
        .collect::<Result<Vec<_>>>()?;
    let argmin_bins = points
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(1, |p| p.0);
    Ok(to_json(&BoundCurve {
        n,
        rule_bins: optimal_bins_1d(n),
        argmin_bins,
        points,
    }))
}

#[derive(Serialize)]
struct Side {
    ece: f64,
    table: Vec<BinStat>,
}

#[derive(Serialize)]
struct Recalibration {
    bins: usize,
    before: Side,
    temperature_t: f64,
    temperature: Side,
    pbr_t: f64,
    pbr_kl: f64,
    pbr: Side,
}

/// Draw `2n` rows of a `K`-class predictor distorted by `temperature`, fit
/// temperature scaling and PBR on the first half, evaluate on the second.
pub fn recalibration(n: usize, classes: usize, temperature: f64, alpha: f64, seed: u64) -> Result<String> {
    let spec = SyntheticSpecK::symmetric(classes, 1.0, MulticlassMap::TemperatureDistort { temperature }, 2 * n, seed);
    let data = gen_multiclass(&spec)?;
    let idx: Vec<usize> = (0..2 * n).collect();
    let (recal, test) = (data.subset(&idx[..n]), data.subset(&idx[n..]));
    let bins = optimal_bins_1d(n);
    let side = |d: &calib_core::PredictionSet| -> Result<Side> {
        Ok(Side {
            ece: ece_top_label(d, bins)?,
            table: bin_stats_1d(d, bins)?,
        })
    };
    let ts = temperature_scaling_fit(&recal)?;
    let fit = train_pbr(&recal, &PbrConfig { alpha, seed, ..PbrConfig::default() })?;
    let t_of = |m: &RecalMap| match m {
        RecalMap::Temperature { t } => *t,
        _ => f64::NAN,
    };
    Ok(to_json(&Recalibration {
        bins,
        before: side(&test)?,
        temperature_t: t_of(&ts),
        temperature: side(&ts.apply_to(&test)?)?,
        pbr_t: t_of(&fit.map),
        pbr_kl: fit.kl,
        pbr: side(&fit.map.apply_to(&test)?)?,
    }))
}

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = reliability)]
pub fn reliability_js(n: usize, amplitude: f64, frequency: f64, bins: usize, seed: u64) -> std::result::Result<String, JsError> {
    js(reliability(n, amplitude, frequency, bins, seed))
}

#[wasm_bindgen(js_name = boundCurve)]
pub fn bound_curve_js(n: usize, lipschitz: f64, epsilon: f64, max_bins: u64) -> std::result::Result<String, JsError> {
    js(bound_curve(n, lipschitz, epsilon, max_bins))
}

#[wasm_bindgen(js_name = recalibration)]
pub fn recalibration_js(n: usize, classes: usize, temperature: f64, alpha: f64, seed: u64) -> std::result::Result<String, JsError> {
    js(recalibration(n, classes, temperature, alpha, seed))
}
