//! The round state machine: score, map, bin and mine; export; rate; screen,
//! label and accumulate; fine-tune; evaluate and shrink the pool.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::formats::{
    plain_rows, read_json, read_labels, read_mos, read_pairs, read_plain_labels, read_ratings,
    write_histogram, write_json, write_labels, write_loss_trace, write_mos, write_pairs,
    write_ratings, write_scores, LabelRow, Manifest,
};
use crate::logistic::Logistic4;
use crate::metrics::{role_fidelity_summary, EvalReport, MeanSe};
use crate::miner::{fit_scale_map, run_competition, BinConfig, GmadPair, Role, ScoreTable};
use crate::model::{Checkpoint, CheckpointMeta, ModelParams};
use crate::objectives::{pair_fidelity, FeatureSource, LabelSource, PairLabel};
use crate::pool::Pool;
use crate::sim::simulate_ratings;
use crate::subjective::{
    augment_d3, classify_case, compute_mos, mos_preference, p_histogram, screen_outliers,
    MosRecord, MosTable, RatingRecord, MIN_RATINGS_PER_IMAGE,
};
use crate::trainer::{finetune, LrSchedule, TrainConfig};

use super::config::{derive_seed, ProtocolConfig, SeedTag};
use super::report::{ProtocolReport, RoleHistograms, RoundReport, ScreeningSummary};
use super::setup::BASELINE_MODEL;
use super::state::{ProtocolState, RoundState, Stage};
use super::workspace::Workspace;

/// Where a round's ratings come from.
#[derive(Clone, Debug, PartialEq)]
pub enum RatingSource {
    /// Virtual subjects of the workspace world; `None` derives the seed.
    Simulated { seed: Option<u64> },
    /// A ratings table collected elsewhere.
    File(PathBuf),
}

pub fn model_id_for_round(t: u32) -> String {
    format!("round-{t}")
}

/// Labels plus role, for fidelity summaries.
fn role_labels(rows: &[LabelRow]) -> Result<Vec<(Role, PairLabel)>> {
    rows.iter()
        .filter_map(|r| r.role.map(|role| r.label().map(|l| (role, l))))
        .collect()
}

fn score_table(params: &ModelParams, model_id: &str, pools: &[&Pool]) -> Result<ScoreTable> {
    let mut scores = Vec::new();
    for pool in pools {
        for r in pool.records() {
            scores.push((r.image_id.clone(), params.score(&r.features)?));
        }
    }
    ScoreTable::from_raw(model_id, scores)
}

/// Fidelity and correlations of `params` on labeled pairs, correlating over
/// the images whose MOS is known.
pub fn evaluate_labels<F: FeatureSource + ?Sized>(
    params: &ModelParams,
    model_id: &str,
    dataset_id: &str,
    labels: &[PairLabel],
    mos: &BTreeMap<String, MosRecord>,
    features: &F,
) -> Result<EvalReport> {
    let mut ids: Vec<&str> = labels
        .iter()
        .flat_map(|l| [l.x.as_str(), l.y.as_str()])
        .filter(|id| mos.contains_key(*id))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let mut pred = Vec::with_capacity(ids.len());
    for id in &ids {
        let f = features
            .features(id)
            .ok_or_else(|| Error::UnknownImage(id.to_string()))?;
        pred.push(params.score(f)?);
    }
    let truth: Vec<f64> = ids.iter().map(|id| mos[*id].mos).collect();
    let mut report = if ids.len() >= 2 {
        EvalReport::correlations(dataset_id, model_id, &pred, &truth)?
    } else {
        EvalReport {
            dataset_id: dataset_id.into(),
            model_id: model_id.into(),
            count: ids.len(),
            srcc: None,
            plcc: None,
            plcc_fallback: false,
            mean_fidelity: None,
            roles: None,
        }
    };
    let losses = labels
        .iter()
        .map(|l| pair_fidelity(params, l, features))
        .collect::<Result<Vec<f64>>>()?;
    report.mean_fidelity = MeanSe::of(&losses);
    Ok(report)
}

/// Driver of the active loop over one workspace. Single writer: every stage
/// persists its artifacts before advancing `state.json`.
pub struct Protocol {
    ws: Workspace,
    config: ProtocolConfig,
    state: ProtocolState,
    /// Replaces the master seed for stochastic stages of this session.
    seed_override: Option<u64>,
}

impl Protocol {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let ws = Workspace::new(root);
        let config = ws.load_config()?;
        let state = ws.load_state()?;
        Ok(Self {
            ws,
            config,
            state,
            seed_override: None,
        })
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed_override = seed;
        self
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn state(&self) -> &ProtocolState {
        &self.state
    }

    fn seed(&self, t: u32, tag: SeedTag) -> u64 {
        derive_seed(self.seed_override.unwrap_or(self.config.seed), t, tag)
    }

    fn round(&self, t: u32) -> Result<&RoundState> {
        self.state.round(t)
    }

    fn advance(&mut self, t: u32, stage: Stage) -> Result<()> {
        self.state.complete(t, stage)?;
        self.ws.save_state(&self.state)
    }

    fn file(&self, t: u32, name: &str) -> PathBuf {
        self.ws.round_file(t, name)
    }

    /// Returns the open round, opening the next one if the latest is
    /// evaluated.
    pub fn begin_round(&mut self) -> Result<u32> {
        if let Some(r) = self.state.latest() {
            if !r.is_done(Stage::Evaluated) {
                return Ok(r.round);
            }
        }
        let t = self.state.latest().map_or(1, |r| r.round + 1);
        if t > self.config.rounds {
            return Err(Error::Stage(format!(
                "all {} rounds are complete",
                self.config.rounds
            )));
        }
        let checkpoint = self
            .state
            .latest()
            .map_or(BASELINE_MODEL.to_string(), |r| r.outgoing_checkpoint().to_string());
        self.ws.load_model(&checkpoint)?;
        self.state.rounds.push(RoundState {
            round: t,
            checkpoint,
            manifest_id: None,
            status: None,
            updated_checkpoint: None,
            d3: None,
            removed: Vec::new(),
        });
        self.ws.save_state(&self.state)?;
        Ok(t)
    }

    /// Candidate pool of round `t`: the initial pool minus earlier rounds'
    /// mined images.
    pub fn candidate_pool(&self, t: u32) -> Result<Pool> {
        let gone = self.state.removed_before(t);
        Ok(self.ws.pool()?.without(gone.iter().copied()))
    }

    fn bin_width(&self) -> Result<f64> {
        if let Some(w) = self.config.bin_width {
            return Ok(w);
        }
        let mos = read_mos(&self.ws.data("base_mos.csv"))?;
        let stds: Vec<f64> = mos.records.values().map(|r| r.std).collect();
        if stds.is_empty() {
            return Err(Error::Empty("calibration MOS"));
        }
        Ok(0.5 * stds.iter().sum::<f64>() / stds.len() as f64)
    }

    pub fn mine(&mut self, t: u32) -> Result<Vec<GmadPair>> {
        let pairs_path = self.file(t, "pairs.csv");
        if self.state.gate(t, Stage::Mined)? {
            return read_pairs(&pairs_path);
        }
        let model_id = self.round(t)?.checkpoint.clone();
        let params = self.ws.load_model(&model_id)?;
        let pool = self.candidate_pool(t)?;
        let base = self.ws.base()?;
        let raw = score_table(&params, &model_id, &[&pool, &base])?;
        let (map, ours) = fit_scale_map(&raw, &self.ws.anchors()?)?;
        let refs = self.ws.references()?;
        if let Some(r) = refs.iter().find(|r| !r.is_mapped()) {
            return Err(Error::Stage(format!(
                "reference `{}` has no common-scale map (run map-scores)",
                r.model_id
            )));
        }
        let bins = BinConfig {
            levels: self.config.levels,
            width: self.bin_width()?,
        };
        let pairs = run_competition(&ours, &refs, bins, &pool, self.config.k, self.config.caps)?;
        write_scores(&self.file(t, "scores.csv"), &ours)?;
        write_json(&self.file(t, "scale_map.json"), &map)?;
        write_pairs(&pairs_path, t, &pairs)?;
        self.advance(t, Stage::Mined)?;
        Ok(pairs)
    }

    pub fn export(&mut self, t: u32) -> Result<Manifest> {
        let path = self.file(t, "manifest.json");
        if self.state.gate(t, Stage::Exported)? {
            return Manifest::load(&path);
        }
        let pairs = read_pairs(&self.file(t, "pairs.csv"))?;
        let manifest = Manifest::from_pairs(t, &pairs);
        write_json(&path, &manifest)?;
        self.state.round_mut(t)?.manifest_id = Some(manifest.manifest_id.clone());
        self.advance(t, Stage::Exported)?;
        Ok(manifest)
    }

    pub fn manifest(&self, t: u32) -> Result<Manifest> {
        self.state.round(t)?;
        let path = self.file(t, "manifest.json");
        if !path.exists() {
            return Err(Error::Stage(format!("round {t} has no exported manifest")));
        }
        Manifest::load(&path)
    }

    pub fn rate(&mut self, t: u32, source: &RatingSource) -> Result<Vec<RatingRecord>> {
        let path = self.file(t, "ratings.csv");
        if self.state.gate(t, Stage::Rated)? {
            return read_ratings(&path);
        }
        let manifest = Manifest::load(&self.file(t, "manifest.json"))?;
        let ids = manifest.image_ids();
        let ratings = match source {
            RatingSource::Simulated { seed } => {
                let world = self.ws.load_world()?;
                let catalog = self.ws.catalog()?;
                let seed = seed.unwrap_or_else(|| self.seed(t, SeedTag::Ratings));
                simulate_ratings(&world, &catalog, &ids, seed, &manifest.manifest_id)?
            }
            RatingSource::File(p) => {
                let ratings = read_ratings(p)?;
                check_ratings(&ratings, &ids)?;
                ratings
            }
        };
        write_ratings(&path, &ratings)?;
        self.advance(t, Stage::Rated)?;
        Ok(ratings)
    }

    fn previous_d3(&self, t: u32) -> Result<(Vec<LabelRow>, MosTable)> {
        let prev = self.state.rounds.iter().rev().find(|r| r.round < t);
        match prev.and_then(|r| r.d3.as_ref()) {
            Some(_) => {
                let p = prev.expect("found").round;
                Ok((
                    read_labels(&self.file(p, "d3.csv"))?,
                    read_mos(&self.file(p, "d3_mos.csv"))?,
                ))
            }
            None => Ok((Vec::new(), MosTable::default())),
        }
    }

    pub fn label(&mut self, t: u32) -> Result<Vec<LabelRow>> {
        let path = self.file(t, "labels.csv");
        if self.state.gate(t, Stage::Labeled)? {
            return read_labels(&path);
        }
        let ratings = read_ratings(&self.file(t, "ratings.csv"))?;
        let screening = screen_outliers(&ratings)?;
        let removed: Vec<RatingRecord> = screening
            .outliers
            .iter()
            .chain(&screening.rejected)
            .cloned()
            .collect();
        let mos = compute_mos(&screening.kept, &removed);
        let pairs = read_pairs(&self.file(t, "pairs.csv"))?;
        let source = LabelSource::Gmad { round: t };
        let mut rows = Vec::with_capacity(pairs.len());
        let mut unlabeled = Vec::new();
        for pair in &pairs {
            let (Some(x), Some(y)) = (mos.records.get(&pair.x), mos.records.get(&pair.y)) else {
                unlabeled.push(pair.pair_id.clone());
                continue;
            };
            let p = mos_preference(x, y);
            rows.push(LabelRow {
                pair_id: pair.pair_id.clone(),
                x: pair.x.clone(),
                y: pair.y.clone(),
                p,
                source,
                case_tag: Some(classify_case(p, pair.role, self.config.case_thresholds).case),
                role: Some(pair.role),
            });
        }
        let summary = ScreeningSummary {
            ratings: ratings.iter().filter(|r| !r.training).count(),
            outlier_fraction: screening.outlier_fraction,
            rejected_fraction: screening.rejected_fraction,
            rejected_subjects: screening
                .verdicts
                .iter()
                .filter(|v| v.rejected)
                .map(|v| v.subject_id.clone())
                .collect(),
            excluded_images: mos.exclusions.clone(),
            unlabeled_pairs: unlabeled,
        };
        let (mut d3, mut d3_mos) = self.previous_d3(t)?;
        d3.extend(rows.iter().cloned());
        d3_mos.records.extend(mos.records.clone());

        write_json(&self.file(t, "screening.json"), &summary)?;
        write_json(&self.file(t, "verdicts.json"), &screening.verdicts)?;
        write_mos(&self.file(t, "mos.csv"), &mos)?;
        write_labels(&path, &rows)?;
        for role in [Role::Defender, Role::Attacker] {
            let ps: Vec<f64> = rows.iter().filter(|r| r.role == Some(role)).map(|r| r.p).collect();
            if !ps.is_empty() {
                let name = format!("histogram_{}.csv", role.as_str());
                write_histogram(&self.file(t, &name), &p_histogram(&ps)?)?;
            }
        }
        let d3_path = self.file(t, "d3.csv");
        write_labels(&d3_path, &d3)?;
        write_mos(&self.file(t, "d3_mos.csv"), &d3_mos)?;
        self.state.round_mut(t)?.d3 = Some(self.ws.relative(&d3_path));
        self.advance(t, Stage::Labeled)?;
        Ok(rows)
    }

    /// Fine-tunes on the base pairs plus the augmented gMAD set. The last
    /// round only records the stage.
    pub fn finetune(&mut self, t: u32) -> Result<Option<String>> {
        if self.state.gate(t, Stage::Finetuned)? {
            return Ok(self.round(t)?.updated_checkpoint.clone());
        }
        if t >= self.config.rounds {
            self.advance(t, Stage::Finetuned)?;
            return Ok(None);
        }
        let d3_mos = read_mos(&self.file(t, "d3_mos.csv"))?;
        let images: Vec<String> = d3_mos.records.keys().cloned().collect();
        let augmented = augment_d3(&images, &d3_mos.records, LabelSource::Gmad { round: t })?;
        write_labels(&self.file(t, "augmented.csv"), &plain_rows(&augmented, &format!("aug-{t}-")))?;
        let params = self.ws.load_model(&self.round(t)?.checkpoint)?;
        let d2 = read_plain_labels(&self.ws.data("d2.csv"))?;
        let catalog = self.ws.catalog()?;
        let seed = self.seed(t, SeedTag::Active);
        let train = TrainConfig {
            seed,
            ..self.config.active.clone()
        };
        let out = finetune(&params, &d2, Some(&augmented), &catalog, &train, LrSchedule::ShallowDeep)?;
        let model_id = model_id_for_round(t);
        let ck = Checkpoint::new(
            out.params,
            CheckpointMeta {
                round: t,
                steps: out.steps,
                seed,
            },
        );
        write_json(&self.ws.model_path(&model_id), &ck)?;
        write_loss_trace(&self.file(t, "loss.csv"), &out.trace)?;
        self.state.round_mut(t)?.updated_checkpoint = Some(model_id.clone());
        self.advance(t, Stage::Finetuned)?;
        Ok(Some(model_id))
    }

    pub fn evaluate(&mut self, t: u32) -> Result<RoundReport> {
        let path = self.file(t, "report.json");
        if self.state.gate(t, Stage::Evaluated)? {
            return read_json(&path);
        }
        let rs = self.round(t)?.clone();
        let catalog = self.ws.catalog()?;
        let pairs = read_pairs(&self.file(t, "pairs.csv"))?;
        let rows = read_labels(&self.file(t, "labels.csv"))?;
        let labeled = role_labels(&rows)?;
        let mos = read_mos(&self.file(t, "mos.csv"))?;
        let screening: ScreeningSummary = read_json(&self.file(t, "screening.json"))?;
        let held_out = read_plain_labels(&self.ws.data("held_out.csv"))?;
        let base_mos = read_mos(&self.ws.data("base_mos.csv"))?;

        let before = self.ws.load_model(&rs.checkpoint)?;
        let gmad_before = role_fidelity_summary(&labeled, &before, &catalog)?;
        let held_out_before =
            evaluate_labels(&before, &rs.checkpoint, "held-out", &held_out, &base_mos.records, &catalog)?;
        let (gmad_after, held_out_after) = match &rs.updated_checkpoint {
            Some(id) => {
                let after = self.ws.load_model(id)?;
                (
                    Some(role_fidelity_summary(&labeled, &after, &catalog)?),
                    Some(evaluate_labels(&after, id, "held-out", &held_out, &base_mos.records, &catalog)?),
                )
            }
            None => (None, None),
        };

        let mut images: Vec<String> = pairs.iter().flat_map(|p| [p.x.clone(), p.y.clone()]).collect();
        images.sort();
        images.dedup();
        let rated: Vec<&String> = images.iter().filter(|id| mos.records.contains_key(*id)).collect();
        let truth: Vec<f64> = rated.iter().map(|id| mos.records[*id].mos).collect();
        let dataset = format!("gmad-round-{t}");
        let mut correlations = Vec::new();
        let ours: Vec<f64> = rated
            .iter()
            .map(|id| before.score(catalog.features(id).expect("catalog covers pool")))
            .collect::<Result<_>>()?;
        if rated.len() >= 2 {
            correlations.push(EvalReport::correlations(&dataset, &rs.checkpoint, &ours, &truth)?);
            for r in self.ws.references()? {
                let s: Vec<f64> = rated
                    .iter()
                    .map(|id| r.raw(id).ok_or_else(|| Error::UnknownImage(id.to_string())))
                    .collect::<Result<_>>()?;
                correlations.push(EvalReport::correlations(&dataset, &r.model_id, &s, &truth)?);
            }
        }

        let mut cases = BTreeMap::new();
        for r in &rows {
            if let Some(c) = r.case_tag {
                *cases.entry(c.as_str().to_string()).or_insert(0) += 1;
            }
        }
        let hist = |role: Role| -> Result<Option<_>> {
            let ps: Vec<f64> = rows.iter().filter(|r| r.role == Some(role)).map(|r| r.p).collect();
            if ps.is_empty() {
                Ok(None)
            } else {
                p_histogram(&ps).map(Some)
            }
        };
        let augmented_pairs = match &rs.updated_checkpoint {
            Some(_) => Some(read_plain_labels(&self.file(t, "augmented.csv"))?.len()),
            None => None,
        };
        let pool_before = self.candidate_pool(t)?.len();
        let report = RoundReport {
            format_version: super::report::REPORT_FORMAT_VERSION,
            round: t,
            model_id: rs.checkpoint.clone(),
            updated_model_id: rs.updated_checkpoint.clone(),
            pool_before,
            pool_after: pool_before - images.len(),
            pairs: pairs.len(),
            images: images.len(),
            labeled_pairs: rows.len(),
            augmented_pairs,
            screening,
            cases,
            histograms: RoleHistograms {
                defender: hist(Role::Defender)?,
                attacker: hist(Role::Attacker)?,
            },
            gmad_before,
            gmad_after,
            held_out_before,
            held_out_after,
            correlations,
        };
        write_json(&path, &report)?;
        self.state.round_mut(t)?.removed = images;
        self.advance(t, Stage::Evaluated)?;
        Ok(report)
    }

    /// Runs the open (or next) round through every remaining stage.
    pub fn run_round(&mut self, source: &RatingSource) -> Result<RoundReport> {
        let t = self.begin_round()?;
        self.mine(t)?;
        self.export(t)?;
        self.rate(t, source)?;
        self.label(t)?;
        self.finetune(t)?;
        self.evaluate(t)
    }

    /// Runs rounds until all T are evaluated, then writes the report.
    pub fn run_all(&mut self, source: &RatingSource) -> Result<ProtocolReport> {
        while self
            .state
            .latest()
            .is_none_or(|r| r.round < self.config.rounds || !r.is_done(Stage::Evaluated))
        {
            self.run_round(source)?;
        }
        self.report()
    }

    /// Collects the evaluated rounds into `report.json`.
    pub fn report(&self) -> Result<ProtocolReport> {
        let rounds = self
            .state
            .rounds
            .iter()
            .filter(|r| r.is_done(Stage::Evaluated))
            .map(|r| read_json(&self.file(r.round, "report.json")))
            .collect::<Result<Vec<RoundReport>>>()?;
        let report = ProtocolReport::assemble(self.config.seed, self.config.rounds, rounds)?;
        write_json(&self.ws.report_path(), &report)?;
        Ok(report)
    }
}

/// Every manifest image needs enough non-training ratings; ratings of
/// unknown images are rejected.
fn check_ratings(ratings: &[RatingRecord], ids: &[String]) -> Result<()> {
    let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in ratings.iter().filter(|r| !r.training) {
        if !wanted.contains(r.image_id.as_str()) {
            return Err(Error::UnknownImage(r.image_id.clone()));
        }
        *counts.entry(&r.image_id).or_default() += 1;
    }
    let short: Vec<&str> = ids
        .iter()
        .map(String::as_str)
        .filter(|id| counts.get(id).copied().unwrap_or(0) < MIN_RATINGS_PER_IMAGE)
        .collect();
    if short.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingRatings(format!(
            "{} manifest images have fewer than {MIN_RATINGS_PER_IMAGE} ratings, first `{}`",
            short.len(),
            short[0]
        )))
    }
}

/// The scale map stored for round `t`.
pub fn load_scale_map(ws: &Workspace, t: u32) -> Result<Logistic4> {
    read_json(&ws.round_file(t, "scale_map.json"))
}
