use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RatingRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosRecord {
    pub image_id: String,
    pub mos: f64,
    /// Sample standard deviation; 0 for a single rating.
    pub std: f64,
    pub n_valid: usize,
    pub n_rejected: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MosTable {
    pub records: BTreeMap<String, MosRecord>,
    /// Images whose every rating was removed by screening.
    pub exclusions: Vec<String>,
}

/// Per-image mean and sample std of the kept ratings. Images that only occur
/// in `removed` are listed as exclusions.
pub fn compute_mos(kept: &[RatingRecord], removed: &[RatingRecord]) -> MosTable {
    let mut scores: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in kept {
        scores.entry(&r.image_id).or_default().push(r.score);
    }
    let mut dropped: BTreeMap<&str, usize> = BTreeMap::new();
    for r in removed {
        *dropped.entry(&r.image_id).or_default() += 1;
    }
    let records = scores
        .iter()
        .map(|(&id, s)| {
            let n = s.len() as f64;
            // Shifted by the first rating: exact when all ratings agree.
            let mos = s[0] + s.iter().map(|v| v - s[0]).sum::<f64>() / n;
            let std = if s.len() > 1 {
                (s.iter().map(|v| (v - mos).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let record = MosRecord {
                image_id: id.to_string(),
                mos,
                std,
                n_valid: s.len(),
                n_rejected: dropped.get(id).copied().unwrap_or(0),
            };
            (id.to_string(), record)
        })
        .collect();
    let exclusions = dropped
        .keys()
        .filter(|id| !scores.contains_key(*id))
        .map(|id| id.to_string())
        .collect();
    MosTable {
        records,
        exclusions,
    }
}
