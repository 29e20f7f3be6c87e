//! Supervised probes measuring how decodable a variable is from embeddings.

mod lag;
mod metrics;
mod pipeline;
mod rebalance;
mod regress;
mod svm;

pub use lag::{logistic_loss_grad, train_lag_curves, LagEpoch, LagParams, LagReport};
pub use metrics::{evaluate_classification, evaluate_regression, Metrics, Task};
pub use pipeline::{
    run_lag, run_probe, Outcome, ProbeConfig, ProbeModel, ProbeReport, ProbeTarget, RecordPrediction,
};
pub use rebalance::{bin_index, rebalance_classification, rebalance_regression};
pub use regress::{train_regressor, RegModel, RegParams};
pub use svm::{
    dual_objective, kkt_violation, predict_svm, solve_binary, train_svm, BinaryMachine, BinarySolution, Kernel,
    SvmModel, SvmParams, SvmPrediction,
};
