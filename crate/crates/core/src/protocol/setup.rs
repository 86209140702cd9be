//! Round 0: workspace creation, pretraining, baseline fine-tuning and the
//! frozen reference maps.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::formats::{
    plain_rows, read_noisy_pairs, read_plain_labels, write_json, write_labels, write_loss_trace,
    write_mos, write_noisy_pairs, write_pool, write_ratings, write_scores,
};
use crate::logistic::Logistic4;
use crate::miner::fit_scale_map;
use crate::model::{init_params, Checkpoint, CheckpointMeta};
use crate::objectives::AnnotatorReliability;
use crate::sim::{build_sim_world, SimConfig, SimData};
use crate::trainer::{finetune, pretrain, LrSchedule, TrainConfig};

use super::config::{derive_seed, ProtocolConfig, SeedTag};
use super::workspace::Workspace;

pub const PRETRAINED_MODEL: &str = "pretrained";
pub const BASELINE_MODEL: &str = "round-0";
/// Starting reliability of every annotator before pretraining.
pub const INITIAL_RELIABILITY: f64 = 0.8;

/// Generates a simulated world and writes every round-0 input.
pub fn init_sim_workspace(
    ws: &Workspace,
    sim: &SimConfig,
    config: &ProtocolConfig,
) -> Result<SimData> {
    if ws.is_initialized() {
        return Err(Error::Stage(format!(
            "workspace {} already initialized",
            ws.root().display()
        )));
    }
    config.validate()?;
    let data = build_sim_world(sim)?;
    std::fs::create_dir_all(ws.root())?;
    crate::formats::write_atomic(&ws.world_path(), data.world.to_json()?.as_bytes())?;
    write_pool(&ws.data("pool.csv"), &data.pool)?;
    write_pool(&ws.data("base.csv"), &data.base)?;
    write_pool(&ws.data("pretrain.csv"), &data.pretrain)?;
    write_noisy_pairs(&ws.data("d1.csv"), &data.d1)?;
    write_labels(&ws.data("d2.csv"), &plain_rows(&data.d2, "d2-"))?;
    write_labels(&ws.data("held_out.csv"), &plain_rows(&data.held_out, "held-"))?;
    write_ratings(&ws.data("base_ratings.csv"), &data.base_ratings)?;
    write_mos(&ws.data("base_mos.csv"), &data.base_mos)?;
    for table in &data.references {
        write_scores(&ws.reference_path(&table.model_id), table)?;
    }
    ws.save_config(config)?;
    Ok(data)
}

fn save_model(
    ws: &Workspace,
    model_id: &str,
    ck: &Checkpoint,
    trace: &crate::trainer::LossTrace,
) -> Result<()> {
    write_json(&ws.model_path(model_id), ck)?;
    write_loss_trace(&ws.model_trace_path(model_id), trace)
}

/// Trains a fresh scorer on the noisy pairs. `seed` defaults to the one
/// derived from the master seed.
pub fn pretrain_model(ws: &Workspace, seed: Option<u64>) -> Result<Checkpoint> {
    let config = ws.load_config()?;
    let d1 = read_noisy_pairs(&ws.data("d1.csv"))?;
    let n_annotators = d1
        .first()
        .map(|p| p.votes.len())
        .ok_or(Error::Empty("noisy pair set"))?;
    let catalog = ws.catalog()?;
    let seed = seed.unwrap_or_else(|| derive_seed(config.seed, 0, SeedTag::Pretrain));
    let params = init_params(derive_seed(seed, 0, SeedTag::Init), &config.dims)?;
    let rel = AnnotatorReliability::uniform(n_annotators, INITIAL_RELIABILITY)?;
    let train = TrainConfig {
        seed,
        ..config.pretrain.clone()
    };
    let out = pretrain(&params, &rel, &d1, &catalog, &train)?;
    let ck = Checkpoint::new(
        out.params,
        CheckpointMeta {
            round: 0,
            steps: out.steps,
            seed,
        },
    );
    save_model(ws, PRETRAINED_MODEL, &ck, &out.trace)?;
    Ok(ck)
}

/// Fine-tunes the pretrained scorer on the base labeled pairs, giving the
/// model that enters round 1.
pub fn train_baseline(ws: &Workspace, seed: Option<u64>) -> Result<Checkpoint> {
    let config = ws.load_config()?;
    let params = ws.load_model(PRETRAINED_MODEL)?;
    let d2 = read_plain_labels(&ws.data("d2.csv"))?;
    let catalog = ws.catalog()?;
    let seed = seed.unwrap_or_else(|| derive_seed(config.seed, 0, SeedTag::Baseline));
    let train = TrainConfig {
        seed,
        ..config.baseline.clone()
    };
    let out = finetune(&params, &d2, None, &catalog, &train, LrSchedule::Uniform)?;
    let ck = Checkpoint::new(
        out.params,
        CheckpointMeta {
            round: 0,
            steps: out.steps,
            seed,
        },
    );
    save_model(ws, BASELINE_MODEL, &ck, &out.trace)?;
    Ok(ck)
}

/// Fits each reference model's map onto the MOS scale and stores the mapped
/// tables. The maps stay fixed for every later round.
pub fn map_references(ws: &Workspace) -> Result<BTreeMap<String, Logistic4>> {
    let anchors = ws.anchors()?;
    let mut maps = BTreeMap::new();
    for table in ws.references()? {
        let (map, mapped) = fit_scale_map(&table, &anchors)?;
        write_scores(&ws.reference_path(&table.model_id), &mapped)?;
        maps.insert(table.model_id.clone(), map);
    }
    write_json(&ws.references_dir().join("maps.json"), &maps)?;
    Ok(maps)
}

/// Runs every round-0 step after workspace creation.
pub fn prepare_baseline(ws: &Workspace) -> Result<()> {
    pretrain_model(ws, None)?;
    train_baseline(ws, None)?;
    map_references(ws)?;
    Ok(())
}
