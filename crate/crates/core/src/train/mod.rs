//! Optimisation, inference and evaluation.

mod adam;
mod config;
mod infer;
mod metrics;
mod schedule;
mod trainer;

pub use adam::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use config::{apply_kv, parse_kv, TrainConfig, CONFIG_KEYS};
pub use infer::{angiogram, infer_angiogram, latent_is_inverted, predict, preprocess, run_network, segment, INFERENCE_MARGIN, threshold_angiogram, Prediction, BASELINE_THRESHOLD};
pub use metrics::{
    evaluate, evaluate_sample, median, metrics_csv, quantile, summarize, summary_csv, write_metrics_csv, Confusion,
    MetricRow, SummaryRow, METRIC_CSV_HEADER, NA, SUMMARY_CSV_HEADER,
};
pub use schedule::lr_schedule;
pub use trainer::{
    prepare, train, train_baseline, Prepared, StepLog, Trainer, LAST_CHECKPOINT, LOSS_LOG_FILE, LOSS_LOG_HEADER,
};
