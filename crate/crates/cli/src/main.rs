use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gmad_cli::service::{self, RatingStore, DEFAULT_TRAINING_PAIRS, LOG_FILE};
use gmad_core::formats::{read_json, read_mos, read_plain_labels, write_json};
use gmad_core::protocol::{
    evaluate_labels, init_sim_workspace, map_references, pretrain_model, train_baseline, Protocol,
    ProtocolConfig, RatingSource, Stage, Workspace, BASELINE_MODEL,
};
use gmad_core::sim::SimConfig;
use gmad_core::Error;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "gmad", version, about = "Active fine-tuning of a quality model from gMAD examples")]
struct Cli {
    /// Workspace directory.
    #[arg(short, long, global = true, default_value = ".")]
    workspace: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a workspace from a simulated world.
    SimInit(SimInit),
    /// Train the initial scorer on the noisy annotator pairs.
    Pretrain {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fine-tune: the baseline without --round, or the active step of a round.
    Finetune {
        #[arg(long)]
        round: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the reference models' maps onto the common scale.
    MapScores,
    /// Mine gMAD pairs for the open round, opening the next if needed.
    Mine {
        #[arg(long)]
        round: Option<u32>,
    },
    /// Write the round's rating manifest.
    ExportManifest {
        #[arg(long)]
        round: Option<u32>,
    },
    /// Rate the manifest with the workspace's virtual subjects.
    SimulateRatings {
        #[arg(long)]
        round: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Take a ratings table, by default the rating service log of the round.
    IngestRatings {
        #[arg(long)]
        round: Option<u32>,
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Screen ratings, compute MOS and label the pairs.
    Label {
        #[arg(long)]
        round: Option<u32>,
    },
    /// Run the remaining stages of the open or next round.
    Round {
        /// Rating source; without one the round stops after export.
        #[arg(long, value_enum)]
        auto_ratings: Option<AutoRatings>,
        /// Ratings table used with `--auto-ratings file`.
        #[arg(long)]
        ratings: Option<PathBuf>,
        /// Keep going until every round is evaluated.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a model on a labeled set, or run a round's evaluate stage.
    Evaluate {
        #[arg(long = "set", value_enum, default_value = "held-out")]
        set: EvalSet,
        /// Model id; defaults to the latest checkpoint.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        round: Option<u32>,
        /// Output file for the held-out report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve every exported manifest to the rating console.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value_t = DEFAULT_TRAINING_PAIRS)]
        training_pairs: usize,
    },
    /// Write report.json and print the summary tables.
    Report {
        #[arg(long)]
        json: bool,
    },
}

#[derive(clap::Args)]
struct SimInit {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Protocol settings as JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pool_contents: Option<usize>,
    #[arg(long)]
    references: Option<usize>,
    #[arg(long)]
    d1_pairs: Option<usize>,
    #[arg(long)]
    d2_pairs: Option<usize>,
    #[arg(long)]
    held_out_pairs: Option<usize>,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    /// Also pretrain, train the baseline and map the references.
    #[arg(long)]
    prepare: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum AutoRatings {
    Sim,
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSet {
    HeldOut,
    Round,
}

fn latest_round(p: &Protocol) -> Result<u32, Error> {
    p.state()
        .latest()
        .map(|r| r.round)
        .ok_or_else(|| Error::Stage("no round has been opened (run mine)".into()))
}

fn pick(p: &Protocol, round: Option<u32>) -> Result<u32, Error> {
    round.map_or_else(|| latest_round(p), Ok)
}

fn sim_init(ws: &Workspace, a: &SimInit) -> Result<Value, Error> {
    let mut config: ProtocolConfig = match &a.config {
        Some(path) => read_json(path)?,
        None => ProtocolConfig::default(),
    };
    config.seed = a.seed;
    if let Some(v) = a.rounds {
        config.rounds = v;
    }
    if let Some(v) = a.k {
        config.k = v;
    }
    if let Some(v) = a.levels {
        config.levels = v;
    }
    let d = SimConfig::default();
    let sim = SimConfig {
        seed: a.seed,
        pool_contents: a.pool_contents.unwrap_or(d.pool_contents),
        n_references: a.references.unwrap_or(d.n_references),
        d1_pairs: a.d1_pairs.unwrap_or(d.d1_pairs),
        d2_pairs: a.d2_pairs.unwrap_or(d.d2_pairs),
        held_out_pairs: a.held_out_pairs.unwrap_or(d.held_out_pairs),
        ..d
    };
    let data = init_sim_workspace(ws, &sim, &config)?;
    if a.prepare {
        pretrain_model(ws, None)?;
        train_baseline(ws, None)?;
        map_references(ws)?;
    }
    Ok(json!({
        "workspace": ws.root(),
        "pool": data.pool.len(),
        "base": data.base.len(),
        "references": data.references.len(),
        "prepared": a.prepare,
    }))
}

fn held_out(ws: &Workspace, model: Option<String>, out: Option<PathBuf>) -> Result<Value, Error> {
    let model_id = match model {
        Some(m) => m,
        None => ws
            .load_state()?
            .latest()
            .map_or(BASELINE_MODEL.to_string(), |r| r.outgoing_checkpoint().to_string()),
    };
    let params = ws.load_model(&model_id)?;
    let labels = read_plain_labels(&ws.data("held_out.csv"))?;
    let mos = read_mos(&ws.data("base_mos.csv"))?;
    let report = evaluate_labels(&params, &model_id, "held-out", &labels, &mos.records, &ws.catalog()?)?;
    let path = out.unwrap_or_else(|| ws.root().join("evaluations").join(format!("{model_id}-held-out.json")));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_json(&path, &report)?;
    Ok(json!({ "report": path, "evaluation": report }))
}

fn round(ws: &Workspace, auto: Option<AutoRatings>, ratings: Option<PathBuf>, all: bool, seed: Option<u64>) -> Result<Value, Error> {
    let source = match (auto, ratings) {
        (Some(AutoRatings::Sim), _) => Some(RatingSource::Simulated { seed: None }),
        (Some(AutoRatings::File), Some(f)) => Some(RatingSource::File(f)),
        (Some(AutoRatings::File), None) => {
            return Err(Error::InvalidArgument("--auto-ratings file needs --ratings".into()))
        }
        (None, Some(f)) => Some(RatingSource::File(f)),
        (None, None) => None,
    };
    let mut p = Protocol::open(ws.root())?.with_seed(seed);
    let Some(source) = source else {
        let t = p.begin_round()?;
        p.mine(t)?;
        let m = p.export(t)?;
        return Ok(json!({
            "round": t,
            "status": "awaiting_ratings",
            "manifest": ws.round_file(t, "manifest.json"),
            "pairs": m.pairs.len(),
        }));
    };
    if all {
        let report = p.run_all(&source)?;
        return Ok(json!({ "rounds": report.rounds.len(), "checks": report.checks }));
    }
    let r = p.run_round(&source)?;
    Ok(json!({
        "round": r.round,
        "status": "evaluated",
        "pairs": r.pairs,
        "model": r.model_id,
        "updated_model": r.updated_model_id,
        "report": ws.round_file(r.round, "report.json"),
    }))
}

fn run(cli: Cli) -> Result<Option<Value>, Error> {
    let ws = Workspace::new(&cli.workspace);
    let out = match cli.command {
        Command::SimInit(a) => sim_init(&ws, &a)?,
        Command::Pretrain { seed } => {
            let ck = pretrain_model(&ws, seed)?;
            json!({ "model": ws.model_path("pretrained"), "steps": ck.meta.steps, "seed": ck.meta.seed })
        }
        Command::Finetune { round: None, seed } => {
            let ck = train_baseline(&ws, seed)?;
            json!({ "model": ws.model_path(BASELINE_MODEL), "steps": ck.meta.steps, "seed": ck.meta.seed })
        }
        Command::Finetune { round: Some(t), seed } => {
            let mut p = Protocol::open(ws.root())?.with_seed(seed);
            json!({ "round": t, "model": p.finetune(t)? })
        }
        Command::MapScores => json!({ "maps": map_references(&ws)? }),
        Command::Mine { round } => {
            let mut p = Protocol::open(ws.root())?;
            let t = match round {
                Some(t) => t,
                None => p.begin_round()?,
            };
            let pairs = p.mine(t)?;
            json!({ "round": t, "pairs": pairs.len(), "file": ws.round_file(t, "pairs.csv") })
        }
        Command::ExportManifest { round } => {
            let mut p = Protocol::open(ws.root())?;
            let t = pick(&p, round)?;
            let m = p.export(t)?;
            json!({ "round": t, "manifest_id": m.manifest_id, "pairs": m.pairs.len(), "file": ws.round_file(t, "manifest.json") })
        }
        Command::SimulateRatings { round, seed } => {
            let mut p = Protocol::open(ws.root())?;
            let t = pick(&p, round)?;
            let r = p.rate(t, &RatingSource::Simulated { seed })?;
            json!({ "round": t, "ratings": r.len(), "file": ws.round_file(t, "ratings.csv") })
        }
        Command::IngestRatings { round, file } => {
            let mut p = Protocol::open(ws.root())?;
            let t = pick(&p, round)?;
            let file = file.unwrap_or_else(|| ws.round_file(t, LOG_FILE));
            let r = p.rate(t, &RatingSource::File(file))?;
            json!({ "round": t, "ratings": r.len(), "file": ws.round_file(t, "ratings.csv") })
        }
        Command::Label { round } => {
            let mut p = Protocol::open(ws.root())?;
            let t = pick(&p, round)?;
            let rows = p.label(t)?;
            json!({ "round": t, "labels": rows.len(), "file": ws.round_file(t, "labels.csv") })
        }
        Command::Round { auto_ratings, ratings, all, seed } => round(&ws, auto_ratings, ratings, all, seed)?,
        Command::Evaluate { set: EvalSet::HeldOut, model, out, .. } => held_out(&ws, model, out)?,
        Command::Evaluate { set: EvalSet::Round, round, .. } => {
            let mut p = Protocol::open(ws.root())?;
            let t = pick(&p, round)?;
            if p.state().round(t)?.status.is_none_or(|s| s < Stage::Finetuned) {
                p.finetune(t)?;
            }
            p.evaluate(t)?;
            json!({ "round": t, "report": ws.round_file(t, "report.json") })
        }
        Command::Serve { addr, training_pairs } => {
            let store = RatingStore::from_workspace(&ws, training_pairs)?;
            let sessions = store.sessions();
            log::info!("serving {} session(s)", sessions.len());
            tokio::runtime::Runtime::new()?.block_on(service::serve(store, addr))?;
            return Ok(None);
        }
        Command::Report { json: as_json } => {
            let report = Protocol::open(ws.root())?.report()?;
            if as_json {
                json!(report)
            } else {
                print!("{}", report.render());
                return Ok(None);
            }
        }
    };
    Ok(Some(out))
}

fn fail(code: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({ "error": { "code": code, "message": message } }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            fail("usage", e.to_string().trim_end().to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(Some(v)) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json value"));
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), e.to_string()),
    }
}
