//! Losses and likelihoods: Thurstone preference probabilities, the fidelity
//! loss, the noisy-annotator likelihood, and the two-set weighted objective.

mod annotator;
mod pairs;
mod preference;

use std::collections::HashMap;

pub use annotator::{
    annotator_nll, annotator_nll_backward, AnnotatorReliability, NoisyPair, ReliabilityGrad,
};
pub use pairs::{
    mean_fidelity_backward, mean_fidelity_objective, model_prob, pair_fidelity,
    weighted_objective, LabelSource, PairLabel,
};
pub(crate) use pairs::accumulate_fidelity;
pub use preference::{fidelity_grad, fidelity_loss, thurstone_prob, PROB_EPS};

/// Resolves image identifiers to feature vectors.
pub trait FeatureSource {
    fn features(&self, id: &str) -> Option<&[f64]>;
}

impl FeatureSource for HashMap<String, Vec<f64>> {
    fn features(&self, id: &str) -> Option<&[f64]> {
        self.get(id).map(Vec::as_slice)
    }
}
