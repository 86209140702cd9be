//! Correlation metrics and per-role fidelity summaries.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::logistic::{fit_logistic, Logistic4};
use crate::miner::Role;
use crate::model::ModelParams;
use crate::objectives::{pair_fidelity, FeatureSource, PairLabel};

/// Minimum sample size for a linearized PLCC.
pub const MIN_LINEARIZE_POINTS: usize = 10;

/// Fractional ranks starting at 1; tied values share their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    check_dim("correlation truth", pred.len(), truth.len())?;
    if pred.len() < 2 {
        return Err(Error::Insufficient(format!("{} points for a correlation", pred.len())));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input"));
    }
    Ok(())
}

/// Spearman rank correlation. `Ok(None)` when either side is constant.
pub fn srcc(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_pair(pred, truth)?;
    Ok(pearson(&average_ranks(pred), &average_ranks(truth)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plcc {
    pub value: Option<f64>,
    pub map: Option<Logistic4>,
    /// The logistic fit failed and the raw Pearson value was reported.
    pub fallback: bool,
}

/// Pearson linear correlation, optionally after fitting the four-parameter
/// logistic from `pred` to `truth`.
pub fn plcc(pred: &[f64], truth: &[f64], linearize: bool) -> Result<Plcc> {
    check_pair(pred, truth)?;
    if !linearize {
        return Ok(Plcc {
            value: pearson(pred, truth),
            map: None,
            fallback: false,
        });
    }
    if pred.len() < MIN_LINEARIZE_POINTS {
        return Err(Error::Insufficient(format!(
            "{} points, linearized PLCC needs {MIN_LINEARIZE_POINTS}",
            pred.len()
        )));
    }
    let fitted = fit_logistic(pred, truth).ok().and_then(|fit| {
        let mapped: Vec<f64> = pred.iter().map(|&f| fit.map.eval(f)).collect();
        pearson(&mapped, truth).map(|r| (r, fit.map))
    });
    Ok(match fitted {
        Some((r, map)) => Plcc {
            value: Some(r),
            map: Some(map),
            fallback: false,
        },
        None => {
            log::warn!("logistic linearization failed; reporting raw PLCC");
            Plcc {
                value: pearson(pred, truth),
                map: None,
                fallback: true,
            }
        }
    })
}

/// Mean with standard error `s / sqrt(n)`; `s` uses the `n - 1` denominator
/// and the error is 0 for a single sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n == 1 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Some(Self { mean, se, n })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoleFidelity {
    pub defender: Option<MeanSe>,
    pub attacker: Option<MeanSe>,
}

impl RoleFidelity {
    pub fn get(&self, role: Role) -> Option<MeanSe> {
        match role {
            Role::Defender => self.defender,
            Role::Attacker => self.attacker,
        }
    }
}

/// Mean fidelity loss of `params` per role; an empty role is `None`.
pub fn role_fidelity_summary<F: FeatureSource + ?Sized>(
    labels: &[(Role, PairLabel)],
    params: &ModelParams,
    features: &F,
) -> Result<RoleFidelity> {
    let mut defender = Vec::new();
    let mut attacker = Vec::new();
    for (role, label) in labels {
        let loss = pair_fidelity(params, label, features)?;
        match role {
            Role::Defender => defender.push(loss),
            Role::Attacker => attacker.push(loss),
        }
    }
    Ok(RoleFidelity {
        defender: MeanSe::of(&defender),
        attacker: MeanSe::of(&attacker),
    })
}

/// Evaluation of one model on one labeled image set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_id: String,
    pub model_id: String,
    pub count: usize,
    pub srcc: Option<f64>,
    pub plcc: Option<f64>,
    pub plcc_fallback: bool,
    pub mean_fidelity: Option<MeanSe>,
    pub roles: Option<RoleFidelity>,
}

impl EvalReport {
    /// Correlations of `pred` against `truth`, with linearized PLCC when
    /// there are enough points and raw PLCC otherwise.
    pub fn correlations(
        dataset_id: impl Into<String>,
        model_id: impl Into<String>,
        pred: &[f64],
        truth: &[f64],
    ) -> Result<Self> {
        let linearize = pred.len() >= MIN_LINEARIZE_POINTS;
        let p = plcc(pred, truth, linearize)?;
        Ok(Self {
            dataset_id: dataset_id.into(),
            model_id: model_id.into(),
            count: pred.len(),
            srcc: srcc(pred, truth)?,
            plcc: p.value,
            plcc_fallback: p.fallback,
            mean_fidelity: None,
            roles: None,
        })
    }
}
