use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MosRecord;
use crate::error::{Error, Result};
use crate::miner::Role;
use crate::normal;
use crate::objectives::{LabelSource, PairLabel};

/// Probability that `x` is perceived better than `y` given MOS and std.
/// With both stds zero the limit is taken: 1, 0, or 0.5 on equality.
pub fn mos_preference(x: &MosRecord, y: &MosRecord) -> f64 {
    let diff = x.mos - y.mos;
    let spread = (x.std * x.std + y.std * y.std).sqrt();
    if spread == 0.0 {
        return match diff.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Less) => 0.0,
            _ => 0.5,
        };
    }
    normal::cdf(diff / spread)
}

fn lookup<'a>(mos: &'a BTreeMap<String, MosRecord>, id: &str) -> Result<&'a MosRecord> {
    mos.get(id).ok_or_else(|| Error::MissingMos(id.to_string()))
}

/// Labels each `(x, y)` pair from subjective scores.
pub fn label_pairs<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    mos: &BTreeMap<String, MosRecord>,
    source: LabelSource,
) -> Result<Vec<PairLabel>> {
    pairs
        .into_iter()
        .map(|(x, y)| {
            let p = mos_preference(lookup(mos, x)?, lookup(mos, y)?);
            PairLabel::new(x, y, p, source)
        })
        .collect()
}

/// Outcome category of a gMAD pair. I-III: the fine-tuned model defends;
/// IV-VI: it attacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Case {
    I,
    II,
    III,
    IV,
    V,
    VI,
}

impl Case {
    pub fn as_str(self) -> &'static str {
        match self {
            Case::I => "I",
            Case::II => "II",
            Case::III => "III",
            Case::IV => "IV",
            Case::V => "V",
            Case::VI => "VI",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseThresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for CaseThresholds {
    fn default() -> Self {
        Self { low: 0.2, high: 0.8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseTag {
    pub case: Case,
    pub role: Role,
    pub p: f64,
}

/// `p > high`, `low <= p <= high`, `p < low` map to I/II/III for the
/// defender role and IV/V/VI for the attacker role.
pub fn classify_case(p: f64, role: Role, thresholds: CaseThresholds) -> CaseTag {
    let band = if p > thresholds.high {
        0
    } else if p >= thresholds.low {
        1
    } else {
        2
    };
    let case = match (role, band) {
        (Role::Defender, 0) => Case::I,
        (Role::Defender, 1) => Case::II,
        (Role::Defender, _) => Case::III,
        (Role::Attacker, 0) => Case::IV,
        (Role::Attacker, 1) => Case::V,
        (Role::Attacker, _) => Case::VI,
    };
    CaseTag { case, role, p }
}

/// Labels every unordered pair of the distinct ids in `images`, enumerated
/// in sorted id order with `x < y`.
pub fn augment_d3(
    images: &[String],
    mos: &BTreeMap<String, MosRecord>,
    source: LabelSource,
) -> Result<Vec<PairLabel>> {
    let mut ids: Vec<&str> = images.iter().map(String::as_str).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Insufficient(format!(
            "{} distinct images to pair",
            ids.len()
        )));
    }
    let pairs = ids
        .iter()
        .enumerate()
        .flat_map(|(i, &x)| ids[i + 1..].iter().map(move |&y| (x, y)));
    label_pairs(pairs, mos, source)
}

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Lower edge of each bin; the last bin includes 1.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Index of the fullest bin, lowest on ties.
    pub fn mode(&self) -> usize {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        self.counts.iter().position(|&c| c == max).unwrap_or(0)
    }
}

/// Ten equal-width bins over [0, 1].
pub fn p_histogram(ps: &[f64]) -> Result<Histogram> {
    if ps.is_empty() {
        return Err(Error::Empty("probabilities to histogram"));
    }
    let mut counts = vec![0; HISTOGRAM_BINS];
    for &p in ps {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
        }
        let bin = ((p * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        counts[bin] += 1;
    }
    let edges = (0..HISTOGRAM_BINS)
        .map(|i| i as f64 / HISTOGRAM_BINS as f64)
        .collect();
    Ok(Histogram { edges, counts })
}
