//! Maximum-likelihood training and the derivative-network fit check.

pub mod adam;
pub mod fit;
pub mod fitcheck;

pub use adam::{adam_step, AdamConfig, AdamState, StepInfo};
pub use fit::{empirical_rate, fit, fit_lr_grid, write_log_csv, EpochLog, FitOutcome, TrainConfig, Trainable, LR_GRID};
