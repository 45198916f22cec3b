//! Losses, optimizer, metrics and the train/eval loops of the two tasks.

pub mod config;
pub mod forecast;
pub mod gradsuite;
pub mod log;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod ranking;

use std::fs;
use std::path::Path;

pub use config::{Task, TrainConfig};
pub use forecast::{
    evaluate_forecast, predict_forecast, train_forecast, ForecastData, ForecastModel, ForecastRow,
    PreparedForecast,
};
pub use gradsuite::{gradient_suite, GroupError, GRADCHECK_TOL};
pub use log::{write_atomic, MetricLog, Report};
pub use loss::{mape_loss, ranking_loss, ListwiseTargets, MAPE_EPS};
pub use metrics::{
    average_precision, forecast_metrics, map_metric, mean_recall_at_k, random_average_precision,
    rank_candidates, recall_at_k, ForecastAccumulator, ForecastMetrics, ScoredInstance,
};
pub use optim::{adam_step, Adam, AdamConfig, AdamState};
pub use ranking::{
    evaluate_ranking, predict_ranking, train_ranking, PreparedRanking, RankingData, RankingEval,
    RankingInstance, RankingModel, RankingSplit, TrainOutcome,
};

use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

pub const METRICS_FILE: &str = "metrics.log";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt";

/// Writes the metric log and checkpoints under `out`, if given.
pub(crate) fn write_outputs(
    out: Option<&Path>,
    log: &MetricLog,
    best: Option<&ParamStore>,
    last_good: Option<&ParamStore>,
) -> Result<()> {
    let Some(dir) = out else { return Ok(()) };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    log.write(dir.join(METRICS_FILE))?;
    if let Some(b) = best {
        write_atomic(dir.join(BEST_CHECKPOINT), &b.to_checkpoint_string())?;
    }
    if let Some(s) = last_good {
        write_atomic(dir.join(LAST_GOOD_CHECKPOINT), &s.to_checkpoint_string())?;
    }
    Ok(())
}

pub(crate) fn check_finite(v: f64, context: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            context: context.into(),
        })
    }
}

pub(crate) fn check_params(store: &ParamStore) -> Result<()> {
    match store.iter().find(|(_, t)| !t.is_finite()) {
        Some((name, _)) => Err(Error::NonFinite {
            context: format!("parameter {name} after update"),
        }),
        None => Ok(()),
    }
}
