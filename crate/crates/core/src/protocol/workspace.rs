use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::formats::{read_json, read_mos, read_pool, read_scores, write_json};
use crate::miner::ScoreTable;
use crate::model::{Checkpoint, ModelParams};
use crate::pool::Pool;
use crate::sim::SimWorld;

use super::config::ProtocolConfig;
use super::state::{ProtocolState, STATE_FORMAT_VERSION};

/// Directory layout of one run.
///
/// ```text
/// config.json  state.json  world.json  report.json
/// data/        pool, base, pretrain, d1, d2, held_out, base_ratings, base_mos
/// references/  one score table per reference model
/// models/      checkpoints and loss traces
/// rounds/round-NN/
/// ```
#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn state_path(&self) -> PathBuf {
        self.root.join("state.json")
    }

    pub fn world_path(&self) -> PathBuf {
        self.root.join("world.json")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    pub fn references_dir(&self) -> PathBuf {
        self.root.join("references")
    }

    pub fn model_path(&self, model_id: &str) -> PathBuf {
        self.root.join("models").join(format!("{model_id}.json"))
    }

    pub fn model_trace_path(&self, model_id: &str) -> PathBuf {
        self.root.join("models").join(format!("{model_id}-loss.csv"))
    }

    pub fn round_dir(&self, t: u32) -> PathBuf {
        self.root.join("rounds").join(format!("round-{t:02}"))
    }

    pub fn round_file(&self, t: u32, name: &str) -> PathBuf {
        self.round_dir(t).join(name)
    }

    /// `path` relative to the root, with forward slashes.
    pub fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn is_initialized(&self) -> bool {
        self.config_path().exists()
    }

    pub fn load_config(&self) -> Result<ProtocolConfig> {
        if !self.is_initialized() {
            return Err(Error::Stage(format!(
                "no workspace at {}",
                self.root.display()
            )));
        }
        let c: ProtocolConfig = read_json(&self.config_path())?;
        c.validate()?;
        Ok(c)
    }

    pub fn save_config(&self, config: &ProtocolConfig) -> Result<()> {
        config.validate()?;
        write_json(&self.config_path(), config)
    }

    pub fn load_state(&self) -> Result<ProtocolState> {
        let path = self.state_path();
        if !path.exists() {
            return Ok(ProtocolState::default());
        }
        let s: ProtocolState = read_json(&path)?;
        if s.format_version != STATE_FORMAT_VERSION {
            return Err(Error::Version {
                found: s.format_version,
                expected: STATE_FORMAT_VERSION,
            });
        }
        Ok(s)
    }

    pub fn save_state(&self, state: &ProtocolState) -> Result<()> {
        write_json(&self.state_path(), state)
    }

    pub fn load_world(&self) -> Result<SimWorld> {
        let path = self.world_path();
        if !path.exists() {
            return Err(Error::Stage(
                "simulated ratings need a world definition (run sim-init)".into(),
            ));
        }
        SimWorld::from_json(&fs::read_to_string(&path)?)
    }

    pub fn load_model(&self, model_id: &str) -> Result<ModelParams> {
        let path = self.model_path(model_id);
        if !path.exists() {
            return Err(Error::Stage(format!("model `{model_id}` has not been trained")));
        }
        Ok(Checkpoint::load(&path)?.params)
    }

    pub fn pool(&self) -> Result<Pool> {
        read_pool(&self.data("pool.csv"))
    }

    pub fn base(&self) -> Result<Pool> {
        read_pool(&self.data("base.csv"))
    }

    /// Every image with features: pool, base and pretraining sets.
    pub fn catalog(&self) -> Result<Pool> {
        let mut pool = self.pool()?.merged(&self.base()?)?;
        let pre = self.data("pretrain.csv");
        if pre.exists() {
            pool = pool.merged(&read_pool(&pre)?)?;
        }
        Ok(pool)
    }

    /// Calibration MOS keyed by image id.
    pub fn anchors(&self) -> Result<BTreeMap<String, f64>> {
        Ok(read_mos(&self.data("base_mos.csv"))?
            .records
            .into_iter()
            .map(|(id, r)| (id, r.mos))
            .collect())
    }

    pub fn reference_path(&self, model_id: &str) -> PathBuf {
        self.references_dir().join(format!("{model_id}.csv"))
    }

    /// Reference score tables ordered by model id.
    pub fn references(&self) -> Result<Vec<ScoreTable>> {
        let dir = self.references_dir();
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "csv"));
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Empty("reference score tables"));
        }
        paths.iter().map(|p| read_scores(p)).collect()
    }
}
