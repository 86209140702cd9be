//! Algorithm driver: workspace layout, round-0 setup, the resumable round
//! state machine and run reports.

mod config;
mod report;
mod round;
mod setup;
mod state;
mod workspace;

pub use config::{derive_seed, ProtocolConfig, SeedTag, CONFIG_FORMAT_VERSION};
pub use report::{
    Check, ProgressRow, ProtocolReport, RoleHistograms, RoundReport, ScreeningSummary,
    CASE_I_BAND, HELD_OUT_TOLERANCE, REPORT_FORMAT_VERSION,
};
pub use round::{evaluate_labels, load_scale_map, model_id_for_round, Protocol, RatingSource};
pub use setup::{
    init_sim_workspace, map_references, prepare_baseline, pretrain_model, train_baseline,
    BASELINE_MODEL, INITIAL_RELIABILITY, PRETRAINED_MODEL,
};
pub use state::{ProtocolState, RoundState, Stage, STATE_FORMAT_VERSION};
pub use workspace::Workspace;
