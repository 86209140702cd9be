//! Interactive pieces of the toolkit for a static web page. Every export
//! takes plain numbers and returns a JSON string.

use gmad_core::logistic::Logistic4;
use gmad_core::miner::{fit_scale_map, run_competition, BinConfig, DiversityCaps, Role, ScoreTable};
use gmad_core::model::GdnLayer;
use gmad_core::objectives::{fidelity_loss, thurstone_prob};
use gmad_core::sim::{build_sim_world, SimConfig};
use gmad_core::subjective::{mos_preference, MosRecord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const MAX_CURVE_POINTS: usize = 2001;
pub const MAX_DEMO_CONTENTS: usize = 200;

#[derive(Debug, Serialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, String> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(format!("bad range [{lo}, {hi}]"));
    }
    if !(2..=MAX_CURVE_POINTS).contains(&n) {
        return Err(format!("point count must lie in 2..={MAX_CURVE_POINTS}"));
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

/// Response of channel 0 of a two-channel GDN layer while channel 1 is held
/// at `other`.
pub fn gdn_curve(omega: f64, gamma_self: f64, gamma_cross: f64, other: f64, lo: f64, hi: f64, n: usize) -> Result<Curve, String> {
    let layer = GdnLayer::new(
        vec![omega, 1.0],
        vec![gamma_self, gamma_cross, gamma_cross, gamma_self],
    )
    .map_err(|e| e.to_string())?;
    let x = grid(lo, hi, n)?;
    let y = x
        .iter()
        .map(|&u| layer.forward(&[u, other]).map(|v| v[0]))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    Ok(Curve { x, y })
}

/// Four-parameter logistic map onto the MOS scale.
pub fn logistic_curve(eta: [f64; 4], lo: f64, hi: f64, n: usize) -> Result<Curve, String> {
    let map = Logistic4 { eta };
    let x = grid(lo, hi, n)?;
    let y = x.iter().map(|&f| map.eval(f)).collect();
    Ok(Curve { x, y })
}

#[derive(Debug, Serialize)]
pub struct Preference {
    /// Label probability from the two MOS records.
    pub p_label: f64,
    /// Model probability from the two predicted scores.
    pub p_model: f64,
    pub fidelity: f64,
}

pub fn preference(mos_x: f64, std_x: f64, mos_y: f64, std_y: f64, score_x: f64, score_y: f64) -> Result<Preference, String> {
    if [mos_x, std_x, mos_y, std_y].iter().any(|v| !v.is_finite()) || std_x < 0.0 || std_y < 0.0 {
        return Err("MOS and std must be finite, std non-negative".into());
    }
    let rec = |mos, std| MosRecord {
        image_id: String::new(),
        mos,
        std,
        n_valid: 1,
        n_rejected: 0,
    };
    let p_label = mos_preference(&rec(mos_x, std_x), &rec(mos_y, std_y));
    let p_model = thurstone_prob(score_x, score_y).map_err(|e| e.to_string())?;
    let fidelity = fidelity_loss(p_label, p_model).map_err(|e| e.to_string())?;
    Ok(Preference { p_label, p_model, fidelity })
}

#[derive(Debug, Serialize)]
pub struct DemoPair {
    pub level: usize,
    pub role: Role,
    pub defender: String,
    pub attacker: String,
    pub x: String,
    pub y: String,
    /// Attacker's mapped score difference `x - y`.
    pub attacker_diff: f64,
    pub true_x: f64,
    pub true_y: f64,
}

#[derive(Debug, Serialize)]
pub struct MiningDemo {
    pub pool: usize,
    pub bin_width: f64,
    pub pairs: Vec<DemoPair>,
    /// Share of pairs per role where the attacker's preferred image is truly
    /// better.
    pub attacker_right: [Option<f64>; 2],
}

/// One gMAD round over a freshly simulated pool, with "ours" a noisy view of
/// true quality.
pub fn mine_sim(seed: u64, contents: usize, references: usize, k: usize, levels: usize, noise: f64) -> Result<MiningDemo, String> {
    if !(10..=MAX_DEMO_CONTENTS).contains(&contents) {
        return Err(format!("contents must lie in 10..={MAX_DEMO_CONTENTS}"));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err("noise must be non-negative".into());
    }
    let data = build_sim_world(&SimConfig {
        seed,
        pool_contents: contents,
        n_references: references,
        d1_pairs: 10,
        d2_pairs: 10,
        held_out_pairs: 10,
        ..SimConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let anchors = data.anchors();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).map_err(|e| e.to_string())?;
    let raw = ScoreTable::from_raw(
        "ours",
        data.pool.records().iter().chain(data.base.records()).map(|r| {
            let eps = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            (r.image_id.clone(), data.world.quality(&r.features) + eps)
        }),
    )
    .map_err(|e| e.to_string())?;
    let (_, ours) = fit_scale_map(&raw, &anchors).map_err(|e| e.to_string())?;
    let refs = data
        .references
        .iter()
        .map(|t| fit_scale_map(t, &anchors).map(|(_, m)| m))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let bins = BinConfig { levels, width: data.bin_width() };
    let mined = run_competition(&ours, &refs, bins, &data.pool, k, DiversityCaps::default()).map_err(|e| e.to_string())?;
    let truth = |id: &str| data.world.true_mos(&data.pool.get(id).expect("mined from pool").features);
    let pairs: Vec<DemoPair> = mined
        .into_iter()
        .map(|p| DemoPair {
            true_x: truth(&p.x),
            true_y: truth(&p.y),
            level: p.level,
            role: p.role,
            defender: p.defender_id,
            attacker: p.attacker_id,
            x: p.x,
            y: p.y,
            attacker_diff: p.objective,
        })
        .collect();
    let share = |role: Role| {
        let of: Vec<&DemoPair> = pairs.iter().filter(|p| p.role == role).collect();
        (!of.is_empty()).then(|| of.iter().filter(|p| p.true_x > p.true_y).count() as f64 / of.len() as f64)
    };
    Ok(MiningDemo {
        pool: data.pool.len(),
        bin_width: bins.width,
        attacker_right: [share(Role::Defender), share(Role::Attacker)],
        pairs,
    })
}

fn js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = gdnCurve)]
pub fn gdn_curve_js(omega: f64, gamma_self: f64, gamma_cross: f64, other: f64, lo: f64, hi: f64, n: usize) -> Result<String, JsValue> {
    js(gdn_curve(omega, gamma_self, gamma_cross, other, lo, hi, n))
}

#[wasm_bindgen(js_name = logisticCurve)]
pub fn logistic_curve_js(eta1: f64, eta2: f64, eta3: f64, eta4: f64, lo: f64, hi: f64, n: usize) -> Result<String, JsValue> {
    js(logistic_curve([eta1, eta2, eta3, eta4], lo, hi, n))
}

#[wasm_bindgen(js_name = preference)]
pub fn preference_js(mos_x: f64, std_x: f64, mos_y: f64, std_y: f64, score_x: f64, score_y: f64) -> Result<String, JsValue> {
    js(preference(mos_x, std_x, mos_y, std_y, score_x, score_y))
}

#[wasm_bindgen(js_name = mineSim)]
pub fn mine_sim_js(seed: u32, contents: usize, references: usize, k: usize, levels: usize, noise: f64) -> Result<String, JsValue> {
    js(mine_sim(u64::from(seed), contents, references, k, levels, noise))
}
