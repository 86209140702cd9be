use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::pool::ImageRecord;

/// Per-comparison diversity limits; `None` disables a limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityCaps {
    pub per_content: Option<usize>,
    pub per_distortion: Option<usize>,
    pub per_distortion_pair: Option<usize>,
}

impl Default for DiversityCaps {
    fn default() -> Self {
        Self {
            per_content: Some(2),
            per_distortion: Some(3),
            per_distortion_pair: Some(1),
        }
    }
}

impl DiversityCaps {
    pub fn unconstrained() -> Self {
        Self {
            per_content: None,
            per_distortion: None,
            per_distortion_pair: None,
        }
    }
}

/// Usage counters for one (defender, attacker, role) comparison.
#[derive(Clone, Debug, Default)]
pub struct DiversityBudget {
    pub caps: DiversityCaps,
    content: HashMap<String, usize>,
    distortion: HashMap<String, usize>,
    distortion_pair: HashMap<(String, String), usize>,
}

fn fits(counts: &HashMap<String, usize>, a: &str, b: &str, cap: Option<usize>) -> bool {
    let Some(cap) = cap else { return true };
    let used = |k: &str| counts.get(k).copied().unwrap_or(0);
    if a == b {
        used(a) + 2 <= cap
    } else {
        used(a) < cap && used(b) < cap
    }
}

fn type_pair(x: &ImageRecord, y: &ImageRecord) -> (String, String) {
    let (a, b) = (&x.distortion_type, &y.distortion_type);
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

impl DiversityBudget {
    pub fn new(caps: DiversityCaps) -> Self {
        Self {
            caps,
            ..Self::default()
        }
    }

    pub fn admits(&self, x: &ImageRecord, y: &ImageRecord) -> bool {
        fits(&self.content, &x.content_id, &y.content_id, self.caps.per_content)
            && fits(
                &self.distortion,
                &x.distortion_type,
                &y.distortion_type,
                self.caps.per_distortion,
            )
            && self.caps.per_distortion_pair.is_none_or(|cap| {
                self.distortion_pair.get(&type_pair(x, y)).copied().unwrap_or(0) < cap
            })
    }

    pub fn charge(&mut self, x: &ImageRecord, y: &ImageRecord) {
        for r in [x, y] {
            *self.content.entry(r.content_id.clone()).or_default() += 1;
            *self.distortion.entry(r.distortion_type.clone()).or_default() += 1;
        }
        *self.distortion_pair.entry(type_pair(x, y)).or_default() += 1;
    }
}
