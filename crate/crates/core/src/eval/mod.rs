//! Ranking and classification metrics and the forgetting audit.

mod audit;
mod evaluate;
mod metrics;

pub use audit::{audit_snapshot, forgetting_audit, AuditRow, AuditSnapshot};
pub use evaluate::{eval_set, evaluate_set, evaluate_task, score_eval_set, score_fingerprint, EvalSet, MetricReport};
pub use metrics::{argmax, classification_accuracy, metric_value, mrr_at_n, rank_of, MRR_CUTOFF};
