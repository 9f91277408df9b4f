//! Ranking metrics, attacker metrics, significance tests and reporting.

mod attack;
mod ranking;
mod report;
mod significance;
pub mod special;

pub use attack::{argmax_rows, balanced_accuracy, mae};
pub use ranking::{ndcg_at_k, recall_at_k, top_k};
pub use report::{
    aggregate_csv, percent, results_csv, AggregateRow, FoldMetrics, MeanStd, MetricsReport,
    ResultRow, AGGREGATE_HEADER, RESULT_HEADER,
};
pub use significance::{
    mcnemar_from_counts, mcnemar_test, paired_t_test, wilcoxon_signed_rank, TestResult, ALPHA,
    WILCOXON_EXACT_MAX,
};

pub const TOP_K: usize = 10;
