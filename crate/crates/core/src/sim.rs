//! Synthetic world standing in for images, full-reference models, noisy
//! annotators and human subjects.
//!
//! Features are 16-dimensional: content quality, three nuisance content
//! dimensions, and one axis per distortion type holding `level / 5`. True
//! quality is linear in the features plus a small high-frequency ripple that
//! a no-reference scorer cannot fit; subjective scores follow
//! `100 * sigmoid(q)`. Distortions of the weak category also inflate the
//! content-quality feature, which misleads a scorer that never saw them.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miner::ScoreTable;
use crate::normal;
use crate::objectives::{AnnotatorReliability, LabelSource, NoisyPair, PairLabel};
use crate::pool::{ImageRecord, Pool};
use crate::subjective::{compute_mos, label_pairs, screen_outliers, MosTable, RatingRecord};

pub const SIM_FORMAT_VERSION: u32 = 1;
pub const FEATURE_DIM: usize = 16;
const TYPE_OFFSET: usize = 4;

/// Distortion categories and their types; one feature axis per type.
pub const CATEGORIES: [(&str, [&str; 3]); 4] = [
    ("blur", ["gaussian_blur", "motion_blur", "lens_blur"]),
    ("color", ["color_saturation", "color_shift", "color_quantization"]),
    ("compression", ["jpeg", "jpeg2000", "block_artifacts"]),
    ("noise", ["white_noise", "impulse_noise", "multiplicative_noise"]),
];

pub fn distortion_types() -> Vec<&'static str> {
    CATEGORIES.iter().flat_map(|(_, t)| t.iter().copied()).collect()
}

fn category_of(type_index: usize) -> &'static str {
    CATEGORIES[type_index / 3].0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Contents in the unlabeled pool; each yields 5 types x 2 levels.
    pub pool_contents: usize,
    /// Contents of the rated calibration database (all known types x levels).
    pub base_contents: usize,
    /// Contents used for the noisy pretraining pairs.
    pub pretrain_contents: usize,
    pub n_references: usize,
    pub n_annotators: usize,
    pub d1_pairs: usize,
    pub d2_pairs: usize,
    pub held_out_pairs: usize,
    /// Share of base contents held out from fine-tuning.
    pub held_out_fraction: f64,
    /// Distortion category absent from the pretraining and base data.
    pub weak_category: Option<String>,
    pub n_subjects: usize,
    pub subject_noise: f64,
    pub subject_bias_std: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            pool_contents: 300,
            base_contents: 40,
            pretrain_contents: 60,
            n_references: 5,
            n_annotators: 6,
            d1_pairs: 10_000,
            d2_pairs: 6_000,
            held_out_pairs: 1_500,
            held_out_fraction: 0.2,
            weak_category: Some("color".into()),
            n_subjects: 15,
            subject_noise: 5.0,
            subject_bias_std: 2.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.pool_contents * 10 < 100 {
            return bad("pool must hold at least 100 images");
        }
        if self.base_contents < 5 || self.pretrain_contents < 2 {
            return bad("too few base or pretraining contents");
        }
        if self.n_references == 0 || self.n_annotators == 0 || self.n_subjects < 3 {
            return bad("need references, annotators, and at least 3 subjects");
        }
        if self.d1_pairs == 0 || self.d2_pairs == 0 || self.held_out_pairs == 0 {
            return bad("pair counts must be positive");
        }
        if !(0.0 < self.held_out_fraction && self.held_out_fraction < 1.0) {
            return bad("held-out fraction must lie in (0, 1)");
        }
        if !(self.subject_noise >= 0.0 && self.subject_bias_std >= 0.0) {
            return bad("subject noise must be non-negative");
        }
        if let Some(w) = &self.weak_category {
            if !CATEGORIES.iter().any(|(c, _)| c == w) {
                return Err(Error::InvalidArgument(format!("unknown category `{w}`")));
            }
        }
        Ok(())
    }

    fn is_weak(&self, type_index: usize) -> bool {
        self.weak_category.as_deref() == Some(category_of(type_index))
    }
}

/// Monotone output transform of a simulated full-reference model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Linear { scale: f64 },
    Exp { rate: f64 },
    Tanh { scale: f64 },
}

impl Transform {
    fn apply(self, v: f64) -> f64 {
        match self {
            Transform::Linear { scale } => scale * v,
            Transform::Exp { rate } => (rate * v).exp(),
            Transform::Tanh { scale } => (v / scale).tanh(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub model_id: String,
    pub transform: Transform,
    /// Added per unit of each distortion axis.
    pub type_bias: Vec<f64>,
    /// Weight on the first nuisance content feature.
    pub content_bias: f64,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimWorld {
    pub format_version: u32,
    pub config: SimConfig,
    /// True quality is `offset + weights . features` plus the ripple.
    pub weights: Vec<f64>,
    pub offset: f64,
    pub ripple: Vec<Ripple>,
    /// Std of the latent comparison noise on the MOS scale.
    pub comparison_std: f64,
    pub references: Vec<ReferenceModel>,
    pub annotator_alpha: Vec<f64>,
    pub annotator_beta: Vec<f64>,
    pub subject_bias: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `amplitude * sin(frequency . features + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ripple {
    pub amplitude: f64,
    pub frequency: Vec<f64>,
    pub phase: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SimWorld {
    pub fn quality(&self, features: &[f64]) -> f64 {
        let ripple: f64 = self
            .ripple
            .iter()
            .map(|r| r.amplitude * (dot(&r.frequency, features) + r.phase).sin())
            .sum();
        self.offset + dot(&self.weights, features) + ripple
    }

    /// Noise-free subjective score on [0, 100].
    pub fn true_mos(&self, features: &[f64]) -> f64 {
        100.0 * sigmoid(self.quality(features))
    }

    pub fn subject_ids(&self) -> Vec<String> {
        (0..self.subject_bias.len()).map(|i| format!("sim-{i:02}")).collect()
    }

    pub fn reliability(&self) -> Result<AnnotatorReliability> {
        AnnotatorReliability::new(&self.annotator_alpha, &self.annotator_beta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let w: SimWorld = serde_json::from_str(s)?;
        if w.format_version != SIM_FORMAT_VERSION {
            return Err(Error::Version {
                found: w.format_version,
                expected: SIM_FORMAT_VERSION,
            });
        }
        w.config.validate()?;
        Ok(w)
    }
}

/// Everything generated from one world seed.
#[derive(Clone, Debug)]
pub struct SimData {
    pub world: SimWorld,
    /// Unlabeled candidate pool.
    pub pool: Pool,
    /// Rated calibration database.
    pub base: Pool,
    /// Images behind the noisy pretraining pairs.
    pub pretrain: Pool,
    /// Reference scores over pool and base images.
    pub references: Vec<ScoreTable>,
    pub d1: Vec<NoisyPair>,
    pub d2: Vec<PairLabel>,
    /// Base-database pairs over held-out contents.
    pub held_out: Vec<PairLabel>,
    pub base_ratings: Vec<RatingRecord>,
    pub base_mos: MosTable,
}

impl SimData {
    /// All images of the world in one feature registry.
    pub fn catalog(&self) -> Pool {
        let records = self
            .pool
            .records()
            .iter()
            .chain(self.base.records())
            .chain(self.pretrain.records())
            .cloned()
            .collect();
        Pool::new(records).expect("generated ids are disjoint")
    }

    /// MOS of calibration images keyed by id.
    pub fn anchors(&self) -> BTreeMap<String, f64> {
        self.base_mos
            .records
            .iter()
            .map(|(id, r)| (id.clone(), r.mos))
            .collect()
    }

    /// Half the mean per-image rating std of the calibration database.
    pub fn bin_width(&self) -> f64 {
        let stds: Vec<f64> = self.base_mos.records.values().map(|r| r.std).collect();
        0.5 * stds.iter().sum::<f64>() / stds.len() as f64
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

struct ContentDraw {
    id: String,
    quality: f64,
    nuisance: [f64; 3],
}

fn draw_contents(rng: &mut ChaCha8Rng, prefix: &str, n: usize) -> Vec<ContentDraw> {
    (0..n)
        .map(|i| ContentDraw {
            id: format!("{prefix}c{i:04}"),
            quality: gauss(rng),
            nuisance: [gauss(rng), gauss(rng), gauss(rng)],
        })
        .collect()
}

const FEATURE_NOISE: f64 = 0.02;
/// Content-quality inflation per unit level of a weak-category distortion.
const WEAK_SHIFT: f64 = 2.0;
const RIPPLES: usize = 3;
const RIPPLE_AMPLITUDE: f64 = 0.2;
const RIPPLE_FREQUENCY: f64 = 6.0;

fn make_image(
    rng: &mut ChaCha8Rng,
    prefix: &str,
    content: &ContentDraw,
    type_index: usize,
    level: u8,
    weak: bool,
) -> ImageRecord {
    let types = distortion_types();
    let mut features = vec![0.0; FEATURE_DIM];
    features[0] = content.quality;
    features[1..4].copy_from_slice(&content.nuisance);
    let severity = f64::from(level) / 5.0;
    features[TYPE_OFFSET + type_index] = severity;
    if weak {
        features[0] += WEAK_SHIFT * severity;
    }
    for f in &mut features[..TYPE_OFFSET] {
        *f += FEATURE_NOISE * gauss(rng);
    }
    ImageRecord {
        image_id: format!("{prefix}{}-{:02}-{level}", &content.id[prefix.len()..], type_index),
        content_id: content.id.clone(),
        distortion_type: types[type_index].to_string(),
        distortion_level: level,
        reference_id: Some(format!("{}-ref", content.id)),
        features,
    }
}

/// Builds a world and all of its data sets from `config.seed`.
pub fn build_sim_world(config: &SimConfig) -> Result<SimData> {
    config.validate()?;
    let seed = config.seed;
    let n_types = distortion_types().len();

    let mut rng = stream(seed, 1);
    let mut weights = vec![0.0; FEATURE_DIM];
    weights[0] = 0.6;
    for t in 0..n_types {
        let severity = -4.0 * rng.random_range(0.6..1.1);
        weights[TYPE_OFFSET + t] = if config.is_weak(t) {
            // Cancel the inflated content feature so only the scorer is fooled.
            severity - weights[0] * WEAK_SHIFT
        } else {
            severity
        };
    }
    let comparison_std = std::f64::consts::SQRT_2
        * (config.subject_noise.powi(2) + config.subject_bias_std.powi(2)).sqrt();
    let transforms = [
        Transform::Linear { scale: 1.0 },
        Transform::Exp { rate: 0.8 },
        Transform::Tanh { scale: 2.5 },
    ];
    let references = (0..config.n_references)
        .map(|j| ReferenceModel {
            model_id: format!("ref{j}"),
            transform: transforms[j % transforms.len()],
            type_bias: (0..n_types).map(|_| 0.9 * gauss(&mut rng)).collect(),
            content_bias: 0.3 * gauss(&mut rng),
            noise_std: rng.random_range(0.25..0.6),
        })
        .collect();
    let annotator_alpha = (0..config.n_annotators)
        .map(|_| rng.random_range(0.7..0.95))
        .collect();
    let annotator_beta = (0..config.n_annotators)
        .map(|_| rng.random_range(0.7..0.95))
        .collect();
    let ripple = (0..RIPPLES)
        .map(|_| Ripple {
            amplitude: RIPPLE_AMPLITUDE,
            frequency: (0..FEATURE_DIM)
                .map(|_| RIPPLE_FREQUENCY * gauss(&mut rng))
                .collect(),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        })
        .collect();
    let subject_bias = (0..config.n_subjects)
        .map(|_| config.subject_bias_std * gauss(&mut rng))
        .collect();
    let world = SimWorld {
        format_version: SIM_FORMAT_VERSION,
        config: config.clone(),
        weights,
        offset: 1.5,
        ripple,
        comparison_std,
        references,
        annotator_alpha,
        annotator_beta,
        subject_bias,
    };

    // Unlabeled pool: 5 of all types x 2 of 5 levels per content.
    let mut rng = stream(seed, 2);
    let mut records = Vec::new();
    for content in draw_contents(&mut rng, "p", config.pool_contents) {
        let mut types: Vec<usize> = (0..n_types).collect();
        types.shuffle(&mut rng);
        for &t in &types[..5] {
            let mut levels = [1u8, 2, 3, 4, 5];
            levels.shuffle(&mut rng);
            let mut chosen = [levels[0], levels[1]];
            chosen.sort_unstable();
            for level in chosen {
                records.push(make_image(&mut rng, "p", &content, t, level, config.is_weak(t)));
            }
        }
    }
    let pool = Pool::new(records)?;

    let known: Vec<usize> = (0..n_types).filter(|&t| !config.is_weak(t)).collect();
    let full_grid = |rng: &mut ChaCha8Rng, prefix: &str, contents: &[ContentDraw]| {
        let mut out = Vec::new();
        for c in contents {
            for &t in &known {
                for level in 1..=5u8 {
                    out.push(make_image(rng, prefix, c, t, level, false));
                }
            }
        }
        out
    };

    // Calibration database, rated by the virtual subjects.
    let mut rng = stream(seed, 3);
    let base_contents = draw_contents(&mut rng, "b", config.base_contents);
    let base = Pool::new(full_grid(&mut rng, "b", &base_contents))?;
    let base_ids: Vec<String> = base.ids().map(str::to_string).collect();
    let base_ratings = simulate_ratings(&world, &base, &base_ids, seed ^ 0x5eed_0003, "base")?;
    let screened = screen_outliers(&base_ratings)?;
    let removed: Vec<RatingRecord> = screened
        .outliers
        .iter()
        .chain(&screened.rejected)
        .cloned()
        .collect();
    let base_mos = compute_mos(&screened.kept, &removed);

    let n_held = ((config.base_contents as f64 * config.held_out_fraction).round() as usize)
        .clamp(1, config.base_contents - 1);
    let held_contents: Vec<&str> = base_contents[config.base_contents - n_held..]
        .iter()
        .map(|c| c.id.as_str())
        .collect();
    let (held_imgs, train_imgs): (Vec<&ImageRecord>, Vec<&ImageRecord>) = base
        .records()
        .iter()
        .filter(|r| base_mos.records.contains_key(&r.image_id))
        .partition(|r| held_contents.contains(&r.content_id.as_str()));
    let mut rng = stream(seed, 4);
    let d2 = sample_labeled_pairs(&mut rng, &train_imgs, config.d2_pairs, &base_mos)?;
    let held_out = sample_labeled_pairs(&mut rng, &held_imgs, config.held_out_pairs, &base_mos)?;

    // Pretraining images and noisy pairs.
    let mut rng = stream(seed, 5);
    let pre_contents = draw_contents(&mut rng, "t", config.pretrain_contents);
    let pretrain = Pool::new(full_grid(&mut rng, "t", &pre_contents))?;
    let d1 = sample_noisy_pairs(&world, &pretrain, config.d1_pairs, &mut stream(seed, 6))?;

    // Reference scores over everything that may be mined or used as anchor.
    let mut rng = stream(seed, 7);
    let mut tables = Vec::with_capacity(world.references.len());
    for reference in &world.references {
        let raw = pool
            .records()
            .iter()
            .chain(base.records())
            .map(|r| {
                let v = reference_view(&world, reference, &r.features)
                    + reference.noise_std * gauss(&mut rng);
                (r.image_id.clone(), reference.transform.apply(v))
            })
            .collect::<Vec<_>>();
        tables.push(ScoreTable::from_raw(reference.model_id.clone(), raw)?);
    }

    Ok(SimData {
        world,
        pool,
        base,
        pretrain,
        references: tables,
        d1,
        d2,
        held_out,
        base_ratings,
        base_mos,
    })
}

fn reference_view(world: &SimWorld, reference: &ReferenceModel, features: &[f64]) -> f64 {
    let bias: f64 = reference
        .type_bias
        .iter()
        .enumerate()
        .map(|(t, b)| b * features[TYPE_OFFSET + t])
        .sum();
    world.quality(features) + bias + reference.content_bias * features[1]
}

fn sample_labeled_pairs(
    rng: &mut ChaCha8Rng,
    images: &[&ImageRecord],
    n: usize,
    mos: &MosTable,
) -> Result<Vec<PairLabel>> {
    if images.len() < 2 {
        return Err(Error::Insufficient("fewer than two rated images".into()));
    }
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let a = images.choose(rng).expect("non-empty");
        let b = images.choose(rng).expect("non-empty");
        if a.image_id != b.image_id {
            pairs.push((a.image_id.as_str(), b.image_id.as_str()));
        }
    }
    label_pairs(pairs, &mos.records, LabelSource::Database)
}

/// Noisy binary pairs: a latent order is drawn from the world's comparison
/// model, then each annotator reports it correctly with probability alpha
/// (when `x` is better) or beta (when `y` is better).
pub fn sample_noisy_pairs(
    world: &SimWorld,
    images: &Pool,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NoisyPair>> {
    let recs = images.records();
    if recs.len() < 2 {
        return Err(Error::Insufficient("fewer than two images".into()));
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = recs.choose(rng).expect("non-empty");
        // Half the pairs share content, as in the pretraining taxonomy.
        let y = if rng.random_bool(0.5) {
            let same: Vec<&ImageRecord> = recs
                .iter()
                .filter(|r| r.content_id == x.content_id && r.image_id != x.image_id)
                .collect();
            match same.choose(rng) {
                Some(y) => *y,
                None => continue,
            }
        } else {
            recs.choose(rng).expect("non-empty")
        };
        if x.image_id == y.image_id {
            continue;
        }
        out.push(noisy_votes(world, x, y, rng).1);
    }
    Ok(out)
}

/// Draws the latent order of `(x, y)` and each annotator's vote; returns
/// whether `x` is truly better alongside the votes.
pub fn noisy_votes(
    world: &SimWorld,
    x: &ImageRecord,
    y: &ImageRecord,
    rng: &mut ChaCha8Rng,
) -> (bool, NoisyPair) {
    let diff = world.true_mos(&x.features) - world.true_mos(&y.features);
    let x_better = rng.random_bool(normal::cdf(diff / world.comparison_std));
    let votes = world
        .annotator_alpha
        .iter()
        .zip(&world.annotator_beta)
        .map(|(&a, &b)| {
            if x_better {
                rng.random_bool(a)
            } else {
                !rng.random_bool(b)
            }
        })
        .collect();
    (
        x_better,
        NoisyPair {
            x: x.image_id.clone(),
            y: y.image_id.clone(),
            votes,
        },
    )
}

/// Every virtual subject rates every listed image once:
/// `clamp(true_mos + subject bias + N(0, noise), 0, 100)`.
pub fn simulate_ratings(
    world: &SimWorld,
    images: &Pool,
    image_ids: &[String],
    seed: u64,
    session_id: &str,
) -> Result<Vec<RatingRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, world.config.subject_noise)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let subjects = world.subject_ids();
    let mut out = Vec::with_capacity(image_ids.len() * subjects.len());
    for id in image_ids {
        let rec = images
            .get(id)
            .ok_or_else(|| Error::UnknownImage(id.clone()))?;
        let mos = world.true_mos(&rec.features);
        for (s, subject) in subjects.iter().enumerate() {
            let score = (mos + world.subject_bias[s] + noise.sample(&mut rng)).clamp(0.0, 100.0);
            out.push(RatingRecord {
                subject_id: subject.clone(),
                image_id: id.clone(),
                score,
                session_id: session_id.to_string(),
                timestamp: 0,
                training: false,
            });
        }
    }
    Ok(out)
}
