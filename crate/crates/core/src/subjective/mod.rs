//! Subjective testing: rating screening, MOS, probabilistic pair labels,
//! outcome categories, and the randomly paired gMAD augmentation set.

mod labels;
mod mos;
mod screening;

pub use labels::{
    augment_d3, classify_case, label_pairs, mos_preference, p_histogram, Case, CaseTag,
    CaseThresholds, Histogram, HISTOGRAM_BINS,
};
pub use mos::{compute_mos, MosRecord, MosTable};
pub use screening::{
    screen_outliers, RatingRecord, Screening, SubjectVerdict, MIN_RATINGS_PER_IMAGE,
    REJECT_BALANCE, REJECT_RATE,
};

#[cfg(test)]
mod tests;
