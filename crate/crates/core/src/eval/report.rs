use std::fmt::Write as _;

/// `x` in percent.
pub fn percent(x: f64) -> f64 {
    x * 100.0
}

/// Metrics of one fold, each in `[0, 1]` (MAE in target units).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FoldMetrics {
    pub fold: usize,
    pub ndcg: f64,
    pub recall: f64,
    /// Balanced accuracy per categorical attribute.
    pub bacc: Vec<(String, f64)>,
    /// Mean absolute error per continuous attribute.
    pub mae: Vec<(String, f64)>,
}

impl FoldMetrics {
    pub fn bacc_of(&self, attribute: &str) -> Option<f64> {
        lookup(&self.bacc, attribute)
    }

    pub fn mae_of(&self, attribute: &str) -> Option<f64> {
        lookup(&self.mae, attribute)
    }
}

fn lookup(v: &[(String, f64)], key: &str) -> Option<f64> {
    v.iter().find(|(k, _)| k == key).map(|(_, x)| *x)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single fold.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Per-fold metrics with percent-scaled aggregates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub folds: Vec<FoldMetrics>,
}

impl MetricsReport {
    pub fn new(folds: Vec<FoldMetrics>) -> Self {
        Self { folds }
    }

    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    fn aggregate(&self, f: impl Fn(&FoldMetrics) -> Option<f64>) -> Option<MeanStd> {
        let v: Option<Vec<f64>> = self.folds.iter().map(|m| f(m).map(percent)).collect();
        v.filter(|v| !v.is_empty()).map(|v| MeanStd::of(&v))
    }

    pub fn ndcg(&self) -> Option<MeanStd> {
        self.aggregate(|m| Some(m.ndcg))
    }

    pub fn recall(&self) -> Option<MeanStd> {
        self.aggregate(|m| Some(m.recall))
    }

    pub fn bacc(&self, attribute: &str) -> Option<MeanStd> {
        self.aggregate(|m| m.bacc_of(attribute))
    }

    pub fn mae(&self, attribute: &str) -> Option<MeanStd> {
        self.aggregate(|m| m.mae_of(attribute))
    }
}

/// One row of the per-fold result table.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub model: String,
    pub lambda_gender: f64,
    pub lambda_age: f64,
    pub metrics: FoldMetrics,
}

pub const RESULT_HEADER: &str =
    "dataset,model,lambda_gender,lambda_age,fold,ndcg@10,recall@10,bacc_gender,mae_age";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{:.4}", percent(x))).unwrap_or_default()
}

/// Per-fold CSV; metric columns are percentages.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(RESULT_HEADER);
    s.push('\n');
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.4},{:.4},{},{}",
            r.dataset,
            r.model,
            r.lambda_gender,
            r.lambda_age,
            m.fold,
            percent(m.ndcg),
            percent(m.recall),
            opt(m.bacc_of("gender")),
            opt(m.mae_of("age")),
        );
    }
    s
}

/// One configuration aggregated over folds.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub dataset: String,
    pub model: String,
    pub lambda_gender: f64,
    pub lambda_age: f64,
    pub report: MetricsReport,
    /// Significance markers against the baseline, e.g. `ndcg;gender`.
    pub significance: String,
}

pub const AGGREGATE_HEADER: &str = "dataset,model,lambda_gender,lambda_age,folds,\
ndcg@10_mean,ndcg@10_std,recall@10_mean,recall@10_std,\
bacc_gender_mean,bacc_gender_std,mae_age_mean,mae_age_std,significance";

fn ms(v: Option<MeanStd>) -> String {
    v.map(|m| format!("{:.4},{:.4}", m.mean, m.std))
        .unwrap_or_else(|| ",".into())
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from(AGGREGATE_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.model,
            r.lambda_gender,
            r.lambda_age,
            r.report.n_folds(),
            ms(r.report.ndcg()),
            ms(r.report.recall()),
            ms(r.report.bacc("gender")),
            ms(r.report.mae("age")),
            r.significance,
        );
    }
    s
}
