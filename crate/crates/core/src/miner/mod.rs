//! gMAD competition: common-scale mapping, level binning, and constrained
//! top-k selection of maximally discriminating image pairs.

mod bins;
mod budget;
pub mod oracle;
mod scale;
mod select;

pub use bins::{build_level_bins, level_anchors, BinConfig, LevelBins, SCALE_MAX};
pub use budget::{DiversityBudget, DiversityCaps};
pub use scale::{fit_scale_map, ScoreEntry, ScoreTable, MIN_ANCHORS};
pub use select::{mine_pairs, pair_key, run_competition, Comparison, GmadPair, PairKey, Role};
