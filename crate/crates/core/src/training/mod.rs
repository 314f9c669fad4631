//! Losses, momentum SGD, normalization, and the two-stage training loop.

mod config;
mod loss;
mod optim;
mod trainer;

use std::fmt;

pub use config::TrainConfig;
pub use loss::{mae, mae_loss, mse, mse_loss, softmax_cross_entropy, LossKind};
pub use optim::{compute_norm_stats, sgd_momentum_step, sgd_momentum_update};
pub use trainer::{
    curve_to_csv, pair_norm_stats, stage_spec, train_stage, write_curve, CurvePoint, Trainer, GRAD_CHUNK,
};

/// Which network is being trained. Stage 2 consumes stage-1 outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    One,
    Two,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::One => "1",
            Stage::Two => "2",
        })
    }
}
