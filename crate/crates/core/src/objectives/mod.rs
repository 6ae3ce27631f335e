//! Training objective and evaluation metrics.

pub mod loss;
pub mod metrics;
pub mod report;

pub use loss::{composite_loss, composite_loss_tensor, loss_terms, LossTerms, LossWeights};
pub use metrics::{auc_judd, correlation_coefficient, kl_divergence, mse, nss, similarity, EPSILON};
pub use report::{evaluate_dataset, EvalPair, Metric, MetricsReport, SampleFailure, SampleMetrics, Summary};
