//! Likelihood of pairwise binary votes from annotators of unknown
//! reliability.
//!
//! Each annotator `j` reports the true ordering with probability `alpha_j`
//! when the first image is better and rejects it with probability `beta_j`
//! otherwise. The pair likelihood mixes the two hypotheses with the model's
//! preference probability:
//!
//! ```text
//! Pr(q_1..q_n) = pw * prod_j Pr(q_j | q = 1) + (1 - pw) * prod_j Pr(q_j | q = 0)
//! ```
//!
//! Both reliabilities are optimized through logits; products are formed in
//! log space and combined with a two-term log-sum-exp.

use serde::{Deserialize, Serialize};

use super::preference::{preference, preference_slope, PROB_EPS};
use super::FeatureSource;
use crate::error::{check_dim, Error, Result};
use crate::model::{ModelParams, ParamGrad};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorReliability {
    pub alpha_logit: Vec<f64>,
    pub beta_logit: Vec<f64>,
}

/// Gradient with respect to the reliability logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityGrad {
    pub alpha_logit: Vec<f64>,
    pub beta_logit: Vec<f64>,
}

/// One pair with one binary vote per annotator; `true` means "x is better".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyPair {
    pub x: String,
    pub y: String,
    pub votes: Vec<bool>,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(z))`
fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl AnnotatorReliability {
    pub fn new(alpha: &[f64], beta: &[f64]) -> Result<Self> {
        check_dim("annotator beta", alpha.len(), beta.len())?;
        if alpha.is_empty() {
            return Err(Error::Empty("annotators"));
        }
        for &v in alpha.iter().chain(beta) {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "annotator reliability {v} outside (0, 1)"
                )));
            }
        }
        Ok(Self {
            alpha_logit: alpha.iter().map(|&a| logit(a)).collect(),
            beta_logit: beta.iter().map(|&b| logit(b)).collect(),
        })
    }

    /// Every annotator at the same `alpha = beta = p`.
    pub fn uniform(n: usize, p: f64) -> Result<Self> {
        Self::new(&vec![p; n], &vec![p; n])
    }

    pub fn len(&self) -> usize {
        self.alpha_logit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_logit.is_empty()
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.alpha_logit.iter().map(|&z| sigmoid(z)).collect()
    }

    pub fn beta(&self) -> Vec<f64> {
        self.beta_logit.iter().map(|&z| sigmoid(z)).collect()
    }

    /// Logits in `[alpha..., beta...]` order.
    pub fn flatten(&self) -> Vec<f64> {
        self.alpha_logit.iter().chain(&self.beta_logit).copied().collect()
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        let n = self.len();
        check_dim("flat reliabilities", 2 * n, values.len())?;
        self.alpha_logit.copy_from_slice(&values[..n]);
        self.beta_logit.copy_from_slice(&values[n..]);
        Ok(())
    }
}

impl ReliabilityGrad {
    pub fn flatten(&self) -> Vec<f64> {
        self.alpha_logit.iter().chain(&self.beta_logit).copied().collect()
    }
}

struct PairTerms {
    log_lik: f64,
    /// d log_lik / d (fx - fy)
    d_diff: f64,
    /// Posterior weight of the "x is better" branch.
    posterior: f64,
}

fn pair_terms(diff: f64, votes: &[bool], alpha_logit: &[f64], beta_logit: &[f64]) -> PairTerms {
    let mut la = 0.0;
    let mut lb = 0.0;
    for ((&q, &a), &b) in votes.iter().zip(alpha_logit).zip(beta_logit) {
        if q {
            la += log_sigmoid(a);
            lb += log_sigmoid(-b);
        } else {
            la += log_sigmoid(-a);
            lb += log_sigmoid(b);
        }
    }
    let raw = preference(diff);
    let pw = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let clamped = pw != raw;
    let top = la.max(lb);
    let (ea, eb) = ((la - top).exp(), (lb - top).exp());
    let mix = pw * ea + (1.0 - pw) * eb;
    let log_lik = top + mix.ln();
    let posterior = pw * ea / mix;
    // Exactly zero when both branches agree, whatever pw is.
    let d_diff = if clamped {
        0.0
    } else {
        (ea - eb) / mix * preference_slope(diff)
    };
    PairTerms {
        log_lik,
        d_diff,
        posterior,
    }
}

fn resolve<'a, F: FeatureSource + ?Sized>(features: &'a F, id: &str) -> Result<&'a [f64]> {
    features
        .features(id)
        .ok_or_else(|| Error::UnknownImage(id.to_string()))
}

fn check_batch(rel: &AnnotatorReliability, batch: &[NoisyPair]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("noisy pair batch"));
    }
    for pair in batch {
        check_dim("annotator votes", rel.len(), pair.votes.len())?;
    }
    Ok(())
}

/// Mean negative log-likelihood of a batch of noisy pairs.
pub fn annotator_nll<F: FeatureSource + ?Sized>(
    params: &ModelParams,
    rel: &AnnotatorReliability,
    batch: &[NoisyPair],
    features: &F,
) -> Result<f64> {
    check_batch(rel, batch)?;
    let mut total = 0.0;
    for pair in batch {
        let fx = params.score(resolve(features, &pair.x)?)?;
        let fy = params.score(resolve(features, &pair.y)?)?;
        total += pair_terms(fx - fy, &pair.votes, &rel.alpha_logit, &rel.beta_logit).log_lik;
    }
    Ok(-total / batch.len() as f64)
}

/// Mean NLL together with its gradients for the scorer and the reliability
/// logits.
pub fn annotator_nll_backward<F: FeatureSource + ?Sized>(
    params: &ModelParams,
    rel: &AnnotatorReliability,
    batch: &[NoisyPair],
    features: &F,
) -> Result<(f64, ParamGrad, ReliabilityGrad)> {
    check_batch(rel, batch)?;
    let n = rel.len();
    let scale = -1.0 / batch.len() as f64;
    let mut grad = ParamGrad::zeros(params.num_params());
    let mut rgrad = ReliabilityGrad {
        alpha_logit: vec![0.0; n],
        beta_logit: vec![0.0; n],
    };
    let alpha = rel.alpha();
    let beta = rel.beta();
    let mut total = 0.0;
    for pair in batch {
        let x = resolve(features, &pair.x)?;
        let y = resolve(features, &pair.y)?;
        let fx = params.score(x)?;
        let fy = params.score(y)?;
        let t = pair_terms(fx - fy, &pair.votes, &rel.alpha_logit, &rel.beta_logit);
        total += t.log_lik;
        if t.d_diff != 0.0 {
            params.accumulate_backward(x, scale * t.d_diff, &mut grad)?;
            params.accumulate_backward(y, -scale * t.d_diff, &mut grad)?;
        }
        for j in 0..n {
            let q = if pair.votes[j] { 1.0 } else { 0.0 };
            rgrad.alpha_logit[j] += scale * t.posterior * (q - alpha[j]);
            rgrad.beta_logit[j] += scale * (1.0 - t.posterior) * ((1.0 - q) - beta[j]);
        }
    }
    Ok((total * scale, grad, rgrad))
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;
    use std::f64::consts::{LN_2, SQRT_2};

    use super::*;
    use crate::model::init_params;
    use crate::normal;
    use proptest::prelude::*;

    fn features() -> HashMap<String, Vec<f64>> {
        [("a", vec![1.0, 0.5]), ("b", vec![-0.5, 0.2]), ("c", vec![0.1, -1.0])]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    fn pair(x: &str, y: &str, votes: &[bool]) -> NoisyPair {
        NoisyPair {
            x: x.into(),
            y: y.into(),
            votes: votes.to_vec(),
        }
    }

    #[test]
    fn logit_roundtrip() {
        let alpha = [0.7, 0.95, 0.5, 0.01];
        let beta = [0.99, 0.7, 0.3, 0.8];
        let r = AnnotatorReliability::new(&alpha, &beta).unwrap();
        for (a, b) in r.alpha().iter().zip(alpha) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in r.beta().iter().zip(beta) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(AnnotatorReliability::new(&[1.0], &[0.5]).is_err());
        assert!(AnnotatorReliability::new(&[0.5], &[0.0]).is_err());
        assert!(AnnotatorReliability::new(&[0.5, 0.5], &[0.5]).is_err());
    }

    #[test]
    fn uninformative_annotator_gives_log_two() {
        let feats = features();
        let rel = AnnotatorReliability::uniform(1, 0.5).unwrap();
        for seed in 0..5 {
            let params = init_params(seed, &[2, 3, 1]).unwrap();
            let batch = [pair("a", "b", &[true]), pair("c", "a", &[false])];
            let nll = annotator_nll(&params, &rel, &batch, &feats).unwrap();
            assert!((nll - LN_2).abs() < 1e-12);
            let (_, g, _) = annotator_nll_backward(&params, &rel, &batch, &feats).unwrap();
            assert!(g.is_zero());
        }
    }

    #[test]
    fn certain_correct_annotator_gives_zero_nll() {
        let mut feats = HashMap::new();
        feats.insert("x".to_string(), vec![10.0]);
        feats.insert("y".to_string(), vec![0.0]);
        let params = init_params(0, &[1, 1]).map(|mut p| {
            p.assign_flat(&[1.0, 0.0]).unwrap();
            p
        }).unwrap();
        let rel = AnnotatorReliability::uniform(1, 1.0 - 1e-12).unwrap();
        let nll = annotator_nll(&params, &rel, &[pair("x", "y", &[true])], &feats).unwrap();
        assert!(nll < 1e-6, "nll = {nll}");
    }

    #[test]
    fn errors() {
        let feats = features();
        let params = init_params(0, &[2, 1]).unwrap();
        let rel = AnnotatorReliability::uniform(2, 0.8).unwrap();
        assert!(matches!(
            annotator_nll(&params, &rel, &[], &feats),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            annotator_nll(&params, &rel, &[pair("a", "zz", &[true, true])], &feats),
            Err(Error::UnknownImage(_))
        ));
        assert!(annotator_nll(&params, &rel, &[pair("a", "b", &[true])], &feats).is_err());
    }

    #[test]
    fn single_annotator_single_pair_closed_form() {
        // With one vote q=1: L = pw*alpha + (1-pw)*(1-beta).
        // dL/ddiff = (alpha - (1 - beta)) * phi(diff/sqrt2)/sqrt2.
        // dlogL/dtheta_alpha = pw*alpha*(1-alpha)/L,
        // dlogL/dtheta_beta = -(1-pw)*beta*(1-beta)/L.
        let (alpha, beta) = (0.83, 0.74);
        let rel = AnnotatorReliability::new(&[alpha], &[beta]).unwrap();
        let feats = features();
        let params = init_params(8, &[2, 1]).unwrap();
        let fx = params.score(&feats["a"]).unwrap();
        let fy = params.score(&feats["b"]).unwrap();
        let diff = fx - fy;
        let pw = normal::cdf(diff / SQRT_2);
        let lik = pw * alpha + (1.0 - pw) * (1.0 - beta);
        let (nll, g, rg) =
            annotator_nll_backward(&params, &rel, &[pair("a", "b", &[true])], &feats).unwrap();
        assert!((nll + lik.ln()).abs() < 1e-12);
        let d_diff = (alpha - (1.0 - beta)) * normal::pdf(diff / SQRT_2) / SQRT_2 / lik;
        // Linear scorer: d diff / d w = x_a - x_b, d diff / d b = 0.
        let expect_w: Vec<f64> = feats["a"]
            .iter()
            .zip(&feats["b"])
            .map(|(a, b)| -d_diff * (a - b))
            .collect();
        for (got, want) in g.values.iter().zip(&expect_w) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(g.values[2].abs() < 1e-15);
        assert!((rg.alpha_logit[0] + pw * alpha * (1.0 - alpha) / lik).abs() < 1e-12);
        assert!((rg.beta_logit[0] - (1.0 - pw) * beta * (1.0 - beta) / lik).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn label_symmetry(
            alpha in proptest::collection::vec(0.05f64..0.95, 3),
            beta in proptest::collection::vec(0.05f64..0.95, 3),
            votes in proptest::collection::vec(any::<bool>(), 3),
            seed in 0u64..50,
        ) {
            let feats = features();
            let params = init_params(seed, &[2, 4, 1]).unwrap();
            let rel = AnnotatorReliability::new(&alpha, &beta).unwrap();
            let flipped_rel = AnnotatorReliability::new(&beta, &alpha).unwrap();
            let flipped: Vec<bool> = votes.iter().map(|v| !v).collect();
            let a = annotator_nll(&params, &rel, &[pair("a", "c", &votes)], &feats).unwrap();
            let b = annotator_nll(&params, &flipped_rel, &[pair("c", "a", &flipped)], &feats).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
