//! Image records and the unlabeled pool they live in.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::objectives::FeatureSource;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub content_id: String,
    pub distortion_type: String,
    /// 1 (mildest) through 5.
    pub distortion_level: u8,
    pub reference_id: Option<String>,
    pub features: Vec<f64>,
}

/// An ordered, id-indexed collection of images with uniform feature width.
#[derive(Clone, Debug, Default)]
pub struct Pool {
    records: Vec<ImageRecord>,
    index: HashMap<String, usize>,
}

impl Pool {
    pub fn new(records: Vec<ImageRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        let dim = records.first().map(|r| r.features.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.image_id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate image id `{}`",
                    r.image_id
                )));
            }
            check_dim("pool feature width", dim.unwrap_or(0), r.features.len())?;
            if !(1..=5).contains(&r.distortion_level) {
                return Err(Error::InvalidArgument(format!(
                    "distortion level {} of `{}` outside 1..=5",
                    r.distortion_level, r.image_id
                )));
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("image features"));
            }
        }
        Ok(Self { records, index })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.image_id.as_str())
    }

    pub fn feature_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.features.len())
    }

    /// A new pool without the given ids, preserving order.
    pub fn without<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Pool {
        let drop: std::collections::HashSet<&str> = ids.into_iter().collect();
        let records: Vec<ImageRecord> = self
            .records
            .iter()
            .filter(|r| !drop.contains(r.image_id.as_str()))
            .cloned()
            .collect();
        Pool::new(records).expect("subset of a valid pool is valid")
    }

    /// A pool holding the records of both inputs; ids must be disjoint.
    pub fn merged(&self, other: &Pool) -> Result<Pool> {
        Pool::new(self.records.iter().chain(&other.records).cloned().collect())
    }
}

impl FeatureSource for Pool {
    fn features(&self, id: &str) -> Option<&[f64]> {
        self.get(id).map(|r| r.features.as_slice())
    }
}
