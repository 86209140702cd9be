use serde::{Deserialize, Serialize};

use super::ScoreTable;
use crate::error::{Error, Result};

/// Upper end of the common perceptual scale.
pub const SCALE_MAX: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinConfig {
    pub levels: usize,
    pub width: f64,
}

/// Disjoint quality-level intervals on the defender's mapped scale, with the
/// images falling into each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelBins {
    pub anchors: Vec<f64>,
    pub width: f64,
    /// Image ids per bin, sorted.
    pub members: Vec<Vec<String>>,
}

/// Centers `(2i - 1) * 100 / (2l)` for `i = 1..=l`.
pub fn level_anchors(levels: usize) -> Vec<f64> {
    (1..=levels)
        .map(|i| (2 * i - 1) as f64 * SCALE_MAX / (2 * levels) as f64)
        .collect()
}

impl LevelBins {
    pub fn interval(&self, level: usize) -> (f64, f64) {
        let c = self.anchors[level];
        (c - self.width / 2.0, c + self.width / 2.0)
    }

    /// Index of the bin holding `score`; shared boundaries go to the lower bin.
    pub fn bin_of(&self, score: f64) -> Option<usize> {
        (0..self.anchors.len()).find(|&i| {
            let (lo, hi) = self.interval(i);
            lo <= score && score <= hi
        })
    }
}

/// Bins the images named by `ids` using the defender's mapped scores.
pub fn build_level_bins<'a>(
    defender: &ScoreTable,
    ids: impl IntoIterator<Item = &'a str>,
    config: BinConfig,
) -> Result<LevelBins> {
    if config.levels == 0 {
        return Err(Error::InvalidArgument("at least one level is required".into()));
    }
    let spacing = SCALE_MAX / config.levels as f64;
    if !(config.width > 0.0 && config.width <= spacing) {
        return Err(Error::InvalidArgument(format!(
            "bin width {} must lie in (0, {spacing}]",
            config.width
        )));
    }
    let mut bins = LevelBins {
        anchors: level_anchors(config.levels),
        width: config.width,
        members: vec![Vec::new(); config.levels],
    };
    for id in ids {
        let score = defender
            .mapped(id)
            .ok_or_else(|| Error::UnknownImage(id.to_string()))?;
        if let Some(b) = bins.bin_of(score) {
            bins.members[b].push(id.to_string());
        }
    }
    for m in &mut bins.members {
        m.sort();
    }
    Ok(bins)
}
