use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miner::DiversityCaps;
use crate::model::DEFAULT_DIMS;
use crate::subjective::CaseThresholds;
use crate::trainer::TrainConfig;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Settings of one active fine-tuning run, stored as `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub format_version: u32,
    /// Master seed; every stochastic stage derives its own seed from it.
    pub seed: u64,
    /// Total rounds T. The last round is rated and evaluated only.
    pub rounds: u32,
    /// Pairs per quality level and comparison.
    pub k: usize,
    pub levels: usize,
    /// Bin half-width on the 0..100 scale. `None` uses half the mean rating
    /// std of the calibration database.
    pub bin_width: Option<f64>,
    pub caps: DiversityCaps,
    pub case_thresholds: CaseThresholds,
    pub dims: Vec<usize>,
    pub pretrain: TrainConfig,
    pub baseline: TrainConfig,
    pub active: TrainConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            seed: 0,
            rounds: 3,
            k: 12,
            levels: 5,
            bin_width: None,
            caps: DiversityCaps::default(),
            case_thresholds: CaseThresholds::default(),
            dims: DEFAULT_DIMS.to_vec(),
            pretrain: TrainConfig {
                lr_deep: 1e-2,
                lr_shallow: 1e-2,
                ..TrainConfig::default()
            },
            baseline: TrainConfig {
                lr_deep: 1e-3,
                lr_shallow: 1e-3,
                ..TrainConfig::default()
            },
            active: TrainConfig {
                lr_deep: 1e-3,
                lr_shallow: 1e-4,
                ..TrainConfig::default()
            },
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::Version {
                found: self.format_version,
                expected: CONFIG_FORMAT_VERSION,
            });
        }
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.k == 0 || self.levels == 0 {
            return bad("k and levels must be at least 1");
        }
        if let Some(w) = self.bin_width {
            if !(w > 0.0 && w.is_finite()) {
                return bad("bin_width must be positive");
            }
        }
        self.pretrain.validate()?;
        self.baseline.validate()?;
        self.active.validate()
    }
}

/// Stage-specific seed streams.
#[derive(Clone, Copy, Debug)]
pub enum SeedTag {
    Init = 1,
    Pretrain = 2,
    Baseline = 3,
    Ratings = 4,
    Active = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `tag` in `round`, derived from the master seed.
pub fn derive_seed(master: u64, round: u32, tag: SeedTag) -> u64 {
    splitmix64(splitmix64(master ^ tag as u64) ^ u64::from(round))
}
