use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject's score for one image in one session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub subject_id: String,
    pub image_id: String,
    /// 0 (worst) to 100 (best).
    pub score: f64,
    pub session_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    /// Familiarization ratings; never used for MOS.
    #[serde(default)]
    pub training: bool,
}

pub const MIN_RATINGS_PER_IMAGE: usize = 3;
/// A subject is rejected when more than this fraction of their ratings are
/// outliers...
pub const REJECT_RATE: f64 = 0.05;
/// ...and the outliers are this balanced between high and low.
pub const REJECT_BALANCE: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectVerdict {
    pub subject_id: String,
    pub ratings: usize,
    /// Outliers above the image mean.
    pub above: usize,
    /// Outliers below the image mean.
    pub below: usize,
    pub rejected: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Screening {
    pub kept: Vec<RatingRecord>,
    /// Ratings dropped as individual outliers from subjects who were kept.
    pub outliers: Vec<RatingRecord>,
    /// Every rating from a rejected subject.
    pub rejected: Vec<RatingRecord>,
    pub verdicts: Vec<SubjectVerdict>,
    /// Outlier ratings over all screened ratings, including those of
    /// rejected subjects.
    pub outlier_fraction: f64,
    /// Ratings removed by subject rejection over all screened ratings.
    pub rejected_fraction: f64,
}

struct ImageStats {
    mean: f64,
    threshold: f64,
}

fn image_stats(scores: &[f64]) -> ImageStats {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let m2 = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let m4 = scores.iter().map(|s| (s - mean).powi(4)).sum::<f64>() / n;
    let std = (m2 * n / (n - 1.0)).sqrt();
    let threshold = if m2 == 0.0 {
        0.0
    } else {
        let kurtosis = m4 / (m2 * m2);
        if (2.0..=4.0).contains(&kurtosis) {
            2.0 * std
        } else {
            20f64.sqrt() * std
        }
    };
    ImageStats { mean, threshold }
}

/// Single-pass outlier screening and subject rejection over non-training
/// ratings. Per image, a rating is an outlier when it lies more than `2s`
/// (normal kurtosis, `2 <= b2 <= 4`) or `sqrt(20) s` from the mean.
pub fn screen_outliers(ratings: &[RatingRecord]) -> Result<Screening> {
    let scored: Vec<&RatingRecord> = ratings.iter().filter(|r| !r.training).collect();
    let mut seen = HashSet::new();
    let mut by_image: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &scored {
        if !(0.0..=100.0).contains(&r.score) {
            return Err(Error::InvalidArgument(format!(
                "score {} for `{}` outside [0, 100]",
                r.score, r.image_id
            )));
        }
        if !seen.insert((&r.subject_id, &r.image_id, &r.session_id)) {
            return Err(Error::InvalidArgument(format!(
                "duplicate rating of `{}` by `{}` in session `{}`",
                r.image_id, r.subject_id, r.session_id
            )));
        }
        by_image.entry(&r.image_id).or_default().push(r.score);
    }
    if let Some((id, s)) = by_image.iter().find(|(_, s)| s.len() < MIN_RATINGS_PER_IMAGE) {
        return Err(Error::Insufficient(format!(
            "`{id}` has {} ratings, screening needs {MIN_RATINGS_PER_IMAGE}",
            s.len()
        )));
    }
    let stats: BTreeMap<&str, ImageStats> =
        by_image.iter().map(|(id, s)| (*id, image_stats(s))).collect();

    let mut verdicts: BTreeMap<&str, SubjectVerdict> = BTreeMap::new();
    let mut flagged = Vec::with_capacity(scored.len());
    for r in &scored {
        let st = &stats[r.image_id.as_str()];
        let v = verdicts
            .entry(&r.subject_id)
            .or_insert_with(|| SubjectVerdict {
                subject_id: r.subject_id.clone(),
                ratings: 0,
                above: 0,
                below: 0,
                rejected: false,
            });
        v.ratings += 1;
        let dev = r.score - st.mean;
        let outlier = dev.abs() > st.threshold;
        if outlier {
            if dev > 0.0 {
                v.above += 1;
            } else {
                v.below += 1;
            }
        }
        flagged.push(outlier);
    }
    for v in verdicts.values_mut() {
        let pq = (v.above + v.below) as f64;
        v.rejected = pq / v.ratings as f64 > REJECT_RATE
            && (v.above as f64 - v.below as f64).abs() / pq < REJECT_BALANCE;
    }

    let mut out = Screening::default();
    let mut n_outliers = 0;
    for (r, outlier) in scored.iter().zip(flagged) {
        n_outliers += usize::from(outlier);
        if verdicts[r.subject_id.as_str()].rejected {
            out.rejected.push((*r).clone());
        } else if outlier {
            out.outliers.push((*r).clone());
        } else {
            out.kept.push((*r).clone());
        }
    }
    let total = scored.len().max(1) as f64;
    out.outlier_fraction = n_outliers as f64 / total;
    out.rejected_fraction = out.rejected.len() as f64 / total;
    out.verdicts = verdicts.into_values().collect();
    Ok(out)
}
