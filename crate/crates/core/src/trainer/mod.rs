//! Encoders, contrastive losses and the private training loop.

pub mod checkpoint;
mod eval;
mod loss;
mod model;
mod train;

pub use eval::{evaluate_ranking, evaluate_with, RankingMetrics};
pub use loss::{loss_from_scores, score, score_grad, tuple_loss, tuple_loss_grad, LossKind, LossSpec, ScoreKind};
pub use model::{param_count, Activations, EncoderKind, EncoderModel};
pub use train::{
    accountant_params_for, dp_train, dp_train_observed, monitor_loss, LrSchedule, PrivacyLedger, StepRecord,
    TrainConfig, TrainOutcome,
};

use std::fmt::Write as _;

use crate::accountant::fmt_num;

/// CSV `metric,value`.
pub fn metrics_csv(rows: &[(&str, f64)]) -> String {
    let mut out = String::from("metric,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{}", fmt_num(*v));
    }
    out
}
