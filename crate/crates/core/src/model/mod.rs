//! The differentiable quality scorer.

mod checkpoint;
mod gdn;
mod network;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_FORMAT_VERSION};
pub use gdn::{GdnGrad, GdnLayer, GDN_FLOOR};
pub use network::{init_params, Affine, Layer, ModelParams, ParamGrad};

/// Default scorer architecture: 16 features, two hidden GDN blocks of 8.
pub const DEFAULT_DIMS: [usize; 4] = [16, 8, 8, 1];
