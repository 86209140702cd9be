use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_FORMAT_VERSION: u32 = 1;

/// Completed stage of a round, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Mined,
    Exported,
    Rated,
    Labeled,
    Finetuned,
    Evaluated,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Mined,
        Stage::Exported,
        Stage::Rated,
        Stage::Labeled,
        Stage::Finetuned,
        Stage::Evaluated,
    ];

    pub fn previous(self) -> Option<Stage> {
        let i = Stage::ALL.iter().position(|&s| s == self).expect("listed");
        i.checked_sub(1).map(|j| Stage::ALL[j])
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Mined => "mined",
            Stage::Exported => "exported",
            Stage::Rated => "rated",
            Stage::Labeled => "labeled",
            Stage::Finetuned => "finetuned",
            Stage::Evaluated => "evaluated",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: u32,
    /// Model that competes in this round.
    pub checkpoint: String,
    pub manifest_id: Option<String>,
    /// Last completed stage; `None` right after the round is opened.
    pub status: Option<Stage>,
    /// Model produced by this round's fine-tuning, if any.
    pub updated_checkpoint: Option<String>,
    /// Workspace-relative path of the accumulated gMAD labels.
    pub d3: Option<String>,
    /// Images leaving the pool when this round is evaluated.
    pub removed: Vec<String>,
}

impl RoundState {
    pub fn is_done(&self, stage: Stage) -> bool {
        self.status.is_some_and(|s| s >= stage)
    }

    /// Model used after this round: the fine-tuned one when there is one.
    pub fn outgoing_checkpoint(&self) -> &str {
        self.updated_checkpoint.as_deref().unwrap_or(&self.checkpoint)
    }
}

/// Round registry stored as `state.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolState {
    pub format_version: u32,
    pub rounds: Vec<RoundState>,
}

impl Default for ProtocolState {
    fn default() -> Self {
        Self {
            format_version: STATE_FORMAT_VERSION,
            rounds: Vec::new(),
        }
    }
}

impl ProtocolState {
    pub fn round(&self, t: u32) -> Result<&RoundState> {
        self.rounds
            .iter()
            .find(|r| r.round == t)
            .ok_or_else(|| Error::Stage(format!("round {t} has not been opened")))
    }

    pub fn round_mut(&mut self, t: u32) -> Result<&mut RoundState> {
        self.rounds
            .iter_mut()
            .find(|r| r.round == t)
            .ok_or_else(|| Error::Stage(format!("round {t} has not been opened")))
    }

    pub fn latest(&self) -> Option<&RoundState> {
        self.rounds.last()
    }

    /// Images removed by rounds before `t`.
    pub fn removed_before(&self, t: u32) -> HashSet<&str> {
        self.rounds
            .iter()
            .filter(|r| r.round < t && r.is_done(Stage::Evaluated))
            .flat_map(|r| r.removed.iter().map(String::as_str))
            .collect()
    }

    /// Whether `stage` of round `t` is already done (`true`) or may run now
    /// (`false`). Anything else is a precondition violation.
    pub fn gate(&self, t: u32, stage: Stage) -> Result<bool> {
        let r = self.round(t)?;
        if r.is_done(stage) {
            return Ok(true);
        }
        if r.status == stage.previous() {
            return Ok(false);
        }
        let have = r.status.map_or("opened", Stage::as_str);
        let need = stage.previous().map_or("opened", Stage::as_str);
        Err(Error::Stage(format!(
            "round {t}: `{}` needs status `{need}`, found `{have}`",
            stage.as_str()
        )))
    }

    /// Records `stage` as completed; transitions only move one step forward.
    pub fn complete(&mut self, t: u32, stage: Stage) -> Result<()> {
        if self.gate(t, stage)? {
            return Err(Error::Stage(format!(
                "round {t}: `{}` already completed",
                stage.as_str()
            )));
        }
        self.round_mut(t)?.status = Some(stage);
        Ok(())
    }
}
