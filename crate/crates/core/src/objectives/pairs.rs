use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::preference::{fidelity_grad, fidelity_unchecked, preference, preference_slope};
use super::FeatureSource;
use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamGrad};

/// Where a probability label came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LabelSource {
    Database,
    Gmad { round: u32 },
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelSource::Database => f.write_str("database"),
            LabelSource::Gmad { round } => write!(f, "gmad-round-{round}"),
        }
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "database" {
            return Ok(LabelSource::Database);
        }
        s.strip_prefix("gmad-round-")
            .and_then(|r| r.parse().ok())
            .map(|round| LabelSource::Gmad { round })
            .ok_or_else(|| Error::InvalidArgument(format!("unknown label source `{s}`")))
    }
}

impl From<LabelSource> for String {
    fn from(s: LabelSource) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for LabelSource {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// A pair with the probability that `x` is perceived better than `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairLabel {
    pub x: String,
    pub y: String,
    pub p: f64,
    pub source: LabelSource,
}

impl PairLabel {
    pub fn new(x: impl Into<String>, y: impl Into<String>, p: f64, source: LabelSource) -> Result<Self> {
        let (x, y) = (x.into(), y.into());
        if x == y {
            return Err(Error::InvalidArgument(format!("pair of identical images `{x}`")));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("label p = {p} outside [0, 1]")));
        }
        Ok(Self { x, y, p, source })
    }
}

fn lookup<'a, F: FeatureSource + ?Sized>(features: &'a F, id: &str) -> Result<&'a [f64]> {
    features
        .features(id)
        .ok_or_else(|| Error::UnknownImage(id.to_string()))
}

/// Model preference probability for a labeled pair.
pub fn model_prob<F: FeatureSource + ?Sized>(
    params: &ModelParams,
    label: &PairLabel,
    features: &F,
) -> Result<f64> {
    let fx = params.score(lookup(features, &label.x)?)?;
    let fy = params.score(lookup(features, &label.y)?)?;
    Ok(preference(fx - fy))
}

/// Fidelity loss of the model on one labeled pair.
pub fn pair_fidelity<F: FeatureSource + ?Sized>(
    params: &ModelParams,
    label: &PairLabel,
    features: &F,
) -> Result<f64> {
    Ok(fidelity_unchecked(label.p, model_prob(params, label, features)?))
}

/// Mean fidelity loss over a batch of labeled pairs.
pub fn mean_fidelity_objective<F: FeatureSource + ?Sized>(
    params: &ModelParams,
    batch: &[PairLabel],
    features: &F,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("labeled pair batch"));
    }
    let mut total = 0.0;
    for label in batch {
        total += pair_fidelity(params, label, features)?;
    }
    Ok(total / batch.len() as f64)
}

/// Adds `weight * d(fidelity)/dw` for every pair in `batch` into `grad`;
/// returns the weighted loss sum.
pub(crate) fn accumulate_fidelity<F: FeatureSource + ?Sized>(
    params: &ModelParams,
    batch: &[&PairLabel],
    weight: f64,
    features: &F,
    grad: &mut ParamGrad,
) -> Result<f64> {
    let mut total = 0.0;
    for label in batch {
        let x = lookup(features, &label.x)?;
        let y = lookup(features, &label.y)?;
        let diff = params.score(x)? - params.score(y)?;
        let pw = preference(diff);
        total += weight * fidelity_unchecked(label.p, pw);
        let g = weight * fidelity_grad(label.p, pw) * preference_slope(diff);
        if g != 0.0 && g.is_finite() {
            params.accumulate_backward(x, g, grad)?;
            params.accumulate_backward(y, -g, grad)?;
        }
    }
    Ok(total)
}

/// Mean fidelity loss and its gradient.
pub fn mean_fidelity_backward<F: FeatureSource + ?Sized>(
    params: &ModelParams,
    batch: &[PairLabel],
    features: &F,
) -> Result<(f64, ParamGrad)> {
    if batch.is_empty() {
        return Err(Error::Empty("labeled pair batch"));
    }
    let refs: Vec<&PairLabel> = batch.iter().collect();
    let mut grad = ParamGrad::zeros(params.num_params());
    let loss = accumulate_fidelity(params, &refs, 1.0 / batch.len() as f64, features, &mut grad)?;
    Ok((loss, grad))
}

/// Sum of the mean fidelity over the base set and the mean fidelity over the
/// gMAD-derived set, each normalized by its own size. An empty gMAD set
/// reduces to the plain mean over the base set.
pub fn weighted_objective<F: FeatureSource + ?Sized>(
    params: &ModelParams,
    d2: &[PairLabel],
    d3: &[PairLabel],
    features: &F,
) -> Result<f64> {
    match (d2.is_empty(), d3.is_empty()) {
        (true, true) => Err(Error::Empty("both labeled pair sets")),
        (false, true) => mean_fidelity_objective(params, d2, features),
        (true, false) => mean_fidelity_objective(params, d3, features),
        (false, false) => Ok(mean_fidelity_objective(params, d2, features)?
            + mean_fidelity_objective(params, d3, features)?),
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::model::init_params;

    fn world() -> (ModelParams, HashMap<String, Vec<f64>>) {
        let params = init_params(21, &[3, 4, 1]).unwrap();
        let feats = [
            ("a", vec![1.0, 0.0, -1.0]),
            ("b", vec![0.3, 0.2, 0.1]),
            ("c", vec![-1.0, 2.0, 0.5]),
            ("d", vec![0.0, 0.0, 0.0]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        (params, feats)
    }

    fn label(x: &str, y: &str, p: f64) -> PairLabel {
        PairLabel::new(x, y, p, LabelSource::Database).unwrap()
    }

    #[test]
    fn source_roundtrip() {
        for s in [LabelSource::Database, LabelSource::Gmad { round: 3 }] {
            assert_eq!(s.to_string().parse::<LabelSource>().unwrap(), s);
        }
        assert!("gmad-round-x".parse::<LabelSource>().is_err());
    }

    #[test]
    fn label_validation() {
        assert!(PairLabel::new("a", "a", 0.5, LabelSource::Database).is_err());
        assert!(PairLabel::new("a", "b", 1.5, LabelSource::Database).is_err());
    }

    #[test]
    fn self_consistent_labels_give_zero() {
        let (params, feats) = world();
        let batch: Vec<PairLabel> = [("a", "b"), ("c", "d"), ("b", "c")]
            .iter()
            .map(|(x, y)| {
                let mut l = label(x, y, 0.5);
                l.p = model_prob(&params, &l, &feats).unwrap();
                l
            })
            .collect();
        assert!(mean_fidelity_objective(&params, &batch, &feats).unwrap() < 1e-12);
    }

    #[test]
    fn equal_scores_with_certain_label() {
        let (params, mut feats) = world();
        feats.insert("a2".into(), feats["a"].clone());
        let v = mean_fidelity_objective(&params, &[label("a", "a2", 1.0)], &feats).unwrap();
        assert!((v - (1.0 - 0.5f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn mean_over_two_pairs() {
        let (params, feats) = world();
        let l1 = label("a", "b", 0.9);
        let l2 = label("c", "d", 0.2);
        let m = mean_fidelity_objective(&params, &[l1.clone(), l2.clone()], &feats).unwrap();
        let e1 = pair_fidelity(&params, &l1, &feats).unwrap();
        let e2 = pair_fidelity(&params, &l2, &feats).unwrap();
        assert!((m - 0.5 * (e1 + e2)).abs() < 1e-15);
        assert!(mean_fidelity_objective(&params, &[], &feats).is_err());
    }

    #[test]
    fn weighted_objective_cases() {
        let (params, feats) = world();
        let l1 = label("a", "b", 0.9);
        let l2 = label("c", "d", 0.2);
        let e1 = pair_fidelity(&params, &l1, &feats).unwrap();
        let e2 = pair_fidelity(&params, &l2, &feats).unwrap();
        let w = weighted_objective(&params, &[l1.clone()], &[l2.clone()], &feats).unwrap();
        assert!((w - (e1 + e2)).abs() < 1e-15);
        let only = weighted_objective(&params, &[l1.clone(), l2.clone()], &[], &feats).unwrap();
        let mean = mean_fidelity_objective(&params, &[l1, l2], &feats).unwrap();
        assert_eq!(only, mean);
        assert!(weighted_objective(&params, &[], &[], &feats).is_err());
    }

    #[test]
    fn unknown_image_is_reported() {
        let (params, feats) = world();
        assert!(matches!(
            mean_fidelity_objective(&params, &[label("a", "zz", 0.5)], &feats),
            Err(Error::UnknownImage(_))
        ));
    }
}
