use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logistic::{fit_logistic, Logistic4};
use crate::pool::Pool;

/// Minimum number of anchor images needed to fit a scale map.
pub const MIN_ANCHORS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub raw: f64,
    /// Score on the common [0, 100] scale, once mapped.
    pub mapped: Option<f64>,
}

/// One model's predictions over a set of images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub model_id: String,
    pub entries: BTreeMap<String, ScoreEntry>,
}

impl ScoreTable {
    pub fn from_raw(
        model_id: impl Into<String>,
        raw: impl IntoIterator<Item = (String, f64)>,
    ) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (id, score) in raw {
            if !score.is_finite() {
                return Err(Error::NonFinite("raw score"));
            }
            if entries
                .insert(id.clone(), ScoreEntry { raw: score, mapped: None })
                .is_some()
            {
                return Err(Error::InvalidArgument(format!("duplicate score for `{id}`")));
            }
        }
        Ok(Self {
            model_id: model_id.into(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn raw(&self, id: &str) -> Option<f64> {
        self.entries.get(id).map(|e| e.raw)
    }

    pub fn mapped(&self, id: &str) -> Option<f64> {
        self.entries.get(id).and_then(|e| e.mapped)
    }

    pub fn is_mapped(&self) -> bool {
        self.entries.values().all(|e| e.mapped.is_some())
    }

    /// Errors unless every pool image has a score.
    pub fn check_covers(&self, pool: &Pool) -> Result<()> {
        match pool.ids().find(|id| !self.entries.contains_key(*id)) {
            Some(id) => Err(Error::UnknownImage(id.to_string())),
            None => Ok(()),
        }
    }

    /// Copy with `map` applied to every raw score.
    pub fn with_map(&self, map: &Logistic4) -> ScoreTable {
        let entries = self
            .entries
            .iter()
            .map(|(id, e)| {
                let mapped = Some(map.eval(e.raw));
                (id.clone(), ScoreEntry { raw: e.raw, mapped })
            })
            .collect();
        ScoreTable {
            model_id: self.model_id.clone(),
            entries,
        }
    }
}

/// Fits the four-parameter logistic from raw scores to anchor MOS on the
/// images both cover and returns the map with the mapped table.
pub fn fit_scale_map(
    table: &ScoreTable,
    anchors: &BTreeMap<String, f64>,
) -> Result<(Logistic4, ScoreTable)> {
    let (pred, truth): (Vec<f64>, Vec<f64>) = anchors
        .iter()
        .filter_map(|(id, &mos)| table.raw(id).map(|r| (r, mos)))
        .unzip();
    if pred.len() < MIN_ANCHORS {
        return Err(Error::Insufficient(format!(
            "{} anchor images overlap `{}`, need {MIN_ANCHORS}",
            pred.len(),
            table.model_id
        )));
    }
    let fit = fit_logistic(&pred, &truth)?;
    if !fit.map.is_increasing() {
        return Err(Error::Degenerate(format!(
            "scale map for `{}` is decreasing",
            table.model_id
        )));
    }
    Ok((fit.map, table.with_map(&fit.map)))
}
