//! Optimization driver: Adam with GDN projection, pre-training on noisy
//! annotator votes and fine-tuning on probability-labeled pairs.

mod adam;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState, LrSchedule, StepOutcome};

use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamGrad};
use crate::objectives::{
    accumulate_fidelity, annotator_nll, annotator_nll_backward, AnnotatorReliability,
    FeatureSource, NoisyPair, PairLabel,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_deep: f64,
    /// Only used by [`LrSchedule::ShallowDeep`].
    pub lr_shallow: f64,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Whether pre-training updates the annotator reliabilities.
    #[serde(default = "default_true")]
    pub learn_reliability: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr_deep: 1e-4,
            lr_shallow: 1e-5,
            max_epochs: 8,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            learn_reliability: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if !(self.lr_deep > 0.0 && self.lr_shallow > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: u64,
    pub epoch: usize,
    pub value: f64,
}

/// Per-step objective values and per-epoch means.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub steps: Vec<StepLoss>,
    pub epochs: Vec<f64>,
}

impl LossTrace {
    fn close_epoch(&mut self, epoch: usize) {
        let values: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| s.epoch == epoch)
            .map(|s| s.value)
            .collect();
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        self.epochs.push(mean);
    }
}

pub struct PretrainOutcome {
    pub params: ModelParams,
    pub reliability: AnnotatorReliability,
    pub trace: LossTrace,
    pub steps: u64,
}

pub struct FinetuneOutcome {
    pub params: ModelParams,
    pub trace: LossTrace,
    pub steps: u64,
}

/// Maximum-likelihood pre-training on noisy annotator votes; scorer and
/// reliability logits share one Adam run at `lr_deep`.
pub fn pretrain<F: FeatureSource + ?Sized>(
    params: &ModelParams,
    reliability: &AnnotatorReliability,
    d1: &[NoisyPair],
    features: &F,
    config: &TrainConfig,
) -> Result<PretrainOutcome> {
    config.validate()?;
    if d1.is_empty() {
        return Err(Error::Empty("noisy pair dataset"));
    }
    // Surface unresolvable ids and vote-count mismatches before training.
    annotator_nll(params, reliability, &d1[..1], features)?;

    let mut params = params.clone();
    let mut rel = reliability.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamState::new(params.num_params());
    let mut rel_state = AdamState::new(2 * rel.len());
    let mut order: Vec<usize> = (0..d1.len()).collect();
    let mut trace = LossTrace::default();
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| d1[i].clone()));
            let (loss, grad, rgrad) = annotator_nll_backward(&params, &rel, &batch, features)?;
            let rflat = rgrad.flatten();
            let outcome = adam_step(&mut params, &grad, &mut state, config, LrSchedule::Uniform)?;
            if outcome == StepOutcome::Applied && config.learn_reliability {
                if rflat.iter().all(|v| v.is_finite()) {
                    let mut logits = rel.flatten();
                    rel_state.update(&mut logits, &rflat, |_| config.lr_deep, config)?;
                    rel.assign_flat(&logits)?;
                } else {
                    log::warn!("non-finite reliability gradient; skipping update");
                }
            }
            trace.steps.push(StepLoss {
                step: state.step,
                epoch,
                value: loss,
            });
        }
        trace.close_epoch(epoch);
        log::debug!("pretrain epoch {epoch}: mean nll {:.6}", trace.epochs[epoch]);
    }
    Ok(PretrainOutcome {
        steps: state.step,
        params,
        reliability: rel,
        trace,
    })
}

/// Draws mini-batches from one or two labeled sets.
///
/// With a single set this is a shuffled pass. With two sets every batch takes
/// half its slots from each; an epoch is one pass over the larger set while
/// the smaller one is reshuffled and cycled.
pub struct MixedBatcher<'a> {
    d2: &'a [PairLabel],
    d3: &'a [PairLabel],
    batch_size: usize,
    rng: ChaCha8Rng,
}

/// One mini-batch, split by origin set.
pub struct MixedBatch<'a> {
    pub d2: Vec<&'a PairLabel>,
    pub d3: Vec<&'a PairLabel>,
}

struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(len: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

impl<'a> MixedBatcher<'a> {
    pub fn new(d2: &'a [PairLabel], d3: &'a [PairLabel], batch_size: usize, seed: u64) -> Self {
        Self {
            d2,
            d3,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_mixed(&self) -> bool {
        !self.d2.is_empty() && !self.d3.is_empty()
    }

    /// Batches for one epoch.
    pub fn epoch(&mut self) -> Vec<MixedBatch<'a>> {
        if !self.is_mixed() {
            let set = if self.d3.is_empty() { self.d2 } else { self.d3 };
            let mut order: Vec<usize> = (0..set.len()).collect();
            order.shuffle(&mut self.rng);
            return order
                .chunks(self.batch_size)
                .map(|c| MixedBatch {
                    d2: c.iter().map(|&i| &set[i]).collect(),
                    d3: Vec::new(),
                })
                .collect();
        }
        let half_d3 = (self.batch_size / 2).max(1);
        let half_d2 = (self.batch_size - half_d3).max(1);
        let (big_len, big_half) = if self.d2.len() >= self.d3.len() {
            (self.d2.len(), half_d2)
        } else {
            (self.d3.len(), half_d3)
        };
        let steps = big_len.div_ceil(big_half);
        let mut c2 = Cycler::new(self.d2.len(), &mut self.rng);
        let mut c3 = Cycler::new(self.d3.len(), &mut self.rng);
        (0..steps)
            .map(|_| MixedBatch {
                d2: (0..half_d2).map(|_| &self.d2[c2.next(&mut self.rng)]).collect(),
                d3: (0..half_d3).map(|_| &self.d3[c3.next(&mut self.rng)]).collect(),
            })
            .collect()
    }
}

/// Loss and gradient of one mixed batch: mean fidelity over each non-empty
/// half, summed.
pub fn batch_objective<F: FeatureSource + ?Sized>(
    params: &ModelParams,
    batch: &MixedBatch<'_>,
    features: &F,
) -> Result<(f64, ParamGrad)> {
    let mut grad = ParamGrad::zeros(params.num_params());
    let mut loss = 0.0;
    for half in [&batch.d2, &batch.d3] {
        if !half.is_empty() {
            let w = 1.0 / half.len() as f64;
            loss += accumulate_fidelity(params, half, w, features, &mut grad)?;
        }
    }
    Ok((loss, grad))
}

/// Fine-tunes on `d2` alone (mean fidelity) or on `d2` plus `d3` (sum of the
/// two per-set mean fidelities, sampled half and half).
pub fn finetune<F: FeatureSource + ?Sized>(
    params: &ModelParams,
    d2: &[PairLabel],
    d3: Option<&[PairLabel]>,
    features: &F,
    config: &TrainConfig,
    schedule: LrSchedule,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    if d2.is_empty() {
        return Err(Error::Empty("base labeled pair set"));
    }
    let d3 = d3.unwrap_or(&[]);
    for label in d2.iter().chain(d3) {
        for id in [&label.x, &label.y] {
            if features.features(id).is_none() {
                return Err(Error::UnknownImage(id.clone()));
            }
        }
    }
    let mut params = params.clone();
    let mut state = AdamState::new(params.num_params());
    let mut batcher = MixedBatcher::new(d2, d3, config.batch_size, config.seed);
    let mut trace = LossTrace::default();
    for epoch in 0..config.max_epochs {
        for batch in batcher.epoch() {
            let (loss, grad) = batch_objective(&params, &batch, features)?;
            adam_step(&mut params, &grad, &mut state, config, schedule)?;
            trace.steps.push(StepLoss {
                step: state.step,
                epoch,
                value: loss,
            });
        }
        trace.close_epoch(epoch);
        log::debug!("finetune epoch {epoch}: mean loss {:.6}", trace.epochs[epoch]);
    }
    Ok(FinetuneOutcome {
        steps: state.step,
        params,
        trace,
    })
}
