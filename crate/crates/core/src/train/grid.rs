//! The λ grid: every combination of per-attribute values, on every fold.

use std::fmt::Write as _;
use std::sync::Mutex;

use rayon::prelude::*;

use super::config::TrainConfig;
use super::phases::{run_fold, AttackPredictions, RunOutput};
use crate::data::{Dataset, FoldSplit};
use crate::error::{Error, Result};
use crate::eval::{
    mcnemar_test, paired_t_test, wilcoxon_signed_rank, AggregateRow, FoldMetrics, MetricsReport,
    ResultRow, TestResult, ALPHA,
};

/// The λ values swept in the grid.
pub const DEFAULT_LAMBDAS: [f64; 6] = [0.0, 1.0, 200.0, 400.0, 600.0, 800.0];

/// Candidate λ values per attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub axes: Vec<(String, Vec<f64>)>,
}

impl GridSpec {
    pub fn new(axes: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if let Some((name, _)) = axes.iter().find(|(_, v)| v.is_empty()) {
            return Err(Error::Config(format!("no lambda values for `{name}`")));
        }
        Ok(Self { axes })
    }

    /// Cartesian product; the first axis varies slowest.
    pub fn combinations(&self) -> Vec<Vec<(String, f64)>> {
        let mut out: Vec<Vec<(String, f64)>> = vec![Vec::new()];
        for (name, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut c = prefix.clone();
                        c.push((name.clone(), *v));
                        c
                    })
                })
                .collect();
        }
        out
    }
}

/// Per-user outputs of one run, kept for significance testing.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub model_name: String,
    pub metrics: FoldMetrics,
    pub ranking_users: Vec<usize>,
    pub ndcg: Vec<f64>,
    pub test_users: Vec<usize>,
    /// Per categorical attribute: whether the attacker was right per user.
    pub correct: Vec<(String, Vec<bool>)>,
    /// Per continuous attribute: attacker absolute error per user.
    pub abs_error: Vec<(String, Vec<f64>)>,
}

impl RunSummary {
    pub fn of(run: &RunOutput) -> Self {
        let mut correct = Vec::new();
        let mut abs_error = Vec::new();
        for (atk, pred) in run.attack.attackers.iter().zip(&run.attack.predictions) {
            match pred {
                AttackPredictions::Classes { predicted, truth } => correct.push((
                    atk.spec.name.clone(),
                    predicted.iter().zip(truth).map(|(p, t)| p == t).collect(),
                )),
                AttackPredictions::Values { predicted, truth } => abs_error.push((
                    atk.spec.name.clone(),
                    predicted.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect(),
                )),
            }
        }
        Self {
            model_name: run.model_name.clone(),
            metrics: run.metrics.clone(),
            ranking_users: run.test_ranking.users.clone(),
            ndcg: run.test_ranking.ndcg.clone(),
            test_users: run.attack.test_users.clone(),
            correct,
            abs_error,
        }
    }
}

/// Outcome of one (combination, fold) unit.
#[derive(Clone, Debug)]
pub struct UnitResult {
    pub combination: usize,
    pub lambdas: Vec<(String, f64)>,
    pub fold: usize,
    pub outcome: std::result::Result<RunSummary, String>,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub combinations: Vec<Vec<(String, f64)>>,
    /// Sorted by combination, then fold.
    pub units: Vec<UnitResult>,
}

/// Config of one grid cell.
pub fn config_for(base: &TrainConfig, lambdas: &[(String, f64)]) -> TrainConfig {
    let mut cfg = base.clone();
    for (name, v) in lambdas {
        cfg.lambdas.set(name, *v);
    }
    cfg
}

/// Runs both phases for every combination on every split, at most
/// `workers` units at a time. A failing unit is recorded and the grid goes
/// on. `sink` sees each finished run (e.g. to persist checkpoints); its
/// errors count as unit failures.
pub fn grid_search(
    ds: &Dataset,
    splits: &[FoldSplit],
    grid: &GridSpec,
    base: &TrainConfig,
    workers: usize,
    sink: &(dyn Fn(usize, &RunOutput) -> Result<()> + Sync),
) -> Result<GridResult> {
    base.validate()?;
    for (name, values) in &grid.axes {
        if !base.attributes.contains(name) {
            return Err(Error::Config(format!("grid axis `{name}` is not a configured attribute")));
        }
        if values.is_empty() {
            return Err(Error::Config(format!("no lambda values for `{name}`")));
        }
    }
    let combinations = grid.combinations();
    let units: Vec<(usize, &FoldSplit)> = (0..combinations.len())
        .flat_map(|c| splits.iter().map(move |s| (c, s)))
        .collect();
    let results = Mutex::new(Vec::with_capacity(units.len()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        units.par_iter().for_each(|&(c, split)| {
            let lambdas = combinations[c].clone();
            let cfg = config_for(base, &lambdas);
            let outcome = run_fold(ds, split, &cfg)
                .and_then(|run| {
                    sink(c, &run)?;
                    Ok(RunSummary::of(&run))
                })
                .map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::error!("combination {lambdas:?} fold {}: {e}", split.fold);
            }
            results.lock().expect("result table lock").push(UnitResult {
                combination: c,
                lambdas,
                fold: split.fold,
                outcome,
            });
        })
    });
    let mut units = results.into_inner().expect("result table lock");
    units.sort_by_key(|u| (u.combination, u.fold));
    Ok(GridResult {
        combinations,
        units,
    })
}

fn lambda_of(lambdas: &[(String, f64)], name: &str) -> f64 {
    lambdas
        .iter()
        .find(|(n, _)| n == name)
        .map_or(0.0, |(_, v)| *v)
}

/// A significance test between the baseline and a selected configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    /// e.g. `wilcoxon:ndcg@10`, `mcnemar:gender`, `t-test:age`.
    pub test: String,
    pub baseline: usize,
    pub other: usize,
    pub result: TestResult,
}

/// The configuration with the strongest removal of one attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub attribute: String,
    pub categorical: bool,
    pub combination: usize,
    /// Mean BAcc (categorical) or MAE (continuous), in percent.
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct GridSummary {
    pub aggregates: Vec<AggregateRow>,
    pub selections: Vec<Selection>,
    pub baseline: Option<usize>,
    pub comparisons: Vec<Comparison>,
}

impl GridResult {
    pub fn failures(&self) -> Vec<&UnitResult> {
        self.units.iter().filter(|u| u.outcome.is_err()).collect()
    }

    pub fn rows(&self, dataset: &str) -> Vec<ResultRow> {
        self.units
            .iter()
            .filter_map(|u| {
                let s = u.outcome.as_ref().ok()?;
                Some(ResultRow {
                    dataset: dataset.into(),
                    model: s.model_name.clone(),
                    lambda_gender: lambda_of(&u.lambdas, "gender"),
                    lambda_age: lambda_of(&u.lambdas, "age"),
                    metrics: s.metrics.clone(),
                })
            })
            .collect()
    }

    fn successes(&self, combination: usize) -> Vec<&RunSummary> {
        self.units
            .iter()
            .filter(|u| u.combination == combination)
            .filter_map(|u| u.outcome.as_ref().ok())
            .collect()
    }

    fn report(&self, combination: usize) -> MetricsReport {
        MetricsReport::new(
            self.successes(combination)
                .iter()
                .map(|s| s.metrics.clone())
                .collect(),
        )
    }

    /// Per-combination aggregates, the best removal per attribute (lowest
    /// BAcc, highest MAE), and tests of each selection against the
    /// all-zero baseline on user-level scores concatenated over folds.
    pub fn summary(&self, dataset: &str, attributes: &[(String, bool)]) -> Result<GridSummary> {
        let baseline = self
            .combinations
            .iter()
            .position(|c| c.iter().all(|(_, v)| *v == 0.0));
        let mut selections = Vec::new();
        for (name, categorical) in attributes {
            let mut best: Option<(usize, f64)> = None;
            for c in 0..self.combinations.len() {
                let r = self.report(c);
                let v = if *categorical { r.bacc(name) } else { r.mae(name) };
                if let Some(v) = v.map(|m| m.mean) {
                    let better = best.is_none_or(|(_, b)| if *categorical { v < b } else { v > b });
                    if better {
                        best = Some((c, v));
                    }
                }
            }
            if let Some((combination, value)) = best {
                selections.push(Selection {
                    attribute: name.clone(),
                    categorical: *categorical,
                    combination,
                    value,
                });
            }
        }

        let mut comparisons = Vec::new();
        if let Some(base) = baseline {
            for sel in &selections {
                if sel.combination == base {
                    continue;
                }
                comparisons.push(Comparison {
                    test: "wilcoxon:ndcg@10".into(),
                    baseline: base,
                    other: sel.combination,
                    result: self.compare_ndcg(base, sel.combination)?,
                });
                let (test, result) = if sel.categorical {
                    let a = self.concat(base, |s| pick(&s.correct, &sel.attribute))?;
                    let b = self.concat(sel.combination, |s| pick(&s.correct, &sel.attribute))?;
                    ("mcnemar", mcnemar_test(&a, &b, ALPHA)?)
                } else {
                    let a = self.concat(base, |s| pick(&s.abs_error, &sel.attribute))?;
                    let b = self.concat(sel.combination, |s| pick(&s.abs_error, &sel.attribute))?;
                    ("t-test", paired_t_test(&a, &b, ALPHA)?)
                };
                comparisons.push(Comparison {
                    test: format!("{test}:{}", sel.attribute),
                    baseline: base,
                    other: sel.combination,
                    result,
                });
            }
        }

        let aggregates = (0..self.combinations.len())
            .map(|c| {
                let lambdas = &self.combinations[c];
                let model = self
                    .successes(c)
                    .first()
                    .map(|s| s.model_name.clone())
                    .unwrap_or_default();
                let marks: Vec<String> = comparisons
                    .iter()
                    .filter(|k| k.other == c && k.result.significant)
                    .map(|k| k.test.clone())
                    .collect();
                AggregateRow {
                    dataset: dataset.into(),
                    model,
                    lambda_gender: lambda_of(lambdas, "gender"),
                    lambda_age: lambda_of(lambdas, "age"),
                    report: self.report(c),
                    significance: marks.join(";"),
                }
            })
            .collect();
        Ok(GridSummary {
            aggregates,
            selections,
            baseline,
            comparisons,
        })
    }

    /// Concatenates a per-user column over the folds both runs completed.
    fn concat<T: Clone>(
        &self,
        combination: usize,
        column: impl Fn(&RunSummary) -> Option<&Vec<T>>,
    ) -> Result<Vec<T>> {
        let mut out = Vec::new();
        for s in self.successes(combination) {
            out.extend(column(s).cloned().ok_or_else(|| {
                Error::Data("missing per-user column for significance test".into())
            })?);
        }
        Ok(out)
    }

    fn compare_ndcg(&self, a: usize, b: usize) -> Result<TestResult> {
        let folds_a: Vec<usize> = self.successes(a).iter().map(|s| s.metrics.fold).collect();
        let folds_b: Vec<usize> = self.successes(b).iter().map(|s| s.metrics.fold).collect();
        if folds_a != folds_b {
            return Err(Error::Data(
                "paired comparison needs the same completed folds".into(),
            ));
        }
        let x = self.concat(a, |s| Some(&s.ndcg))?;
        let y = self.concat(b, |s| Some(&s.ndcg))?;
        wilcoxon_signed_rank(&x, &y, ALPHA)
    }
}

fn pick<'a, T>(cols: &'a [(String, Vec<T>)], name: &str) -> Option<&'a Vec<T>> {
    cols.iter().find(|(n, _)| n == name).map(|(_, v)| v)
}

impl GridSummary {
    /// CSV of the selections and their tests against the baseline.
    pub fn to_csv(&self, combinations: &[Vec<(String, f64)>]) -> String {
        let mut s = String::from(
            "selection,attribute,model,lambda_gender,lambda_age,ndcg@10_mean,recall@10_mean,value_mean,\
test,baseline_lambda_gender,baseline_lambda_age,statistic,p_value,significant,degenerate,n\n",
        );
        for sel in &self.selections {
            let row = &self.aggregates[sel.combination];
            let rule = if sel.categorical { "min_bacc" } else { "max_mae" };
            let head = format!(
                "{rule},{},{},{},{},{},{},{:.4}",
                sel.attribute,
                row.model,
                row.lambda_gender,
                row.lambda_age,
                row.report.ndcg().map(|m| format!("{:.4}", m.mean)).unwrap_or_default(),
                row.report.recall().map(|m| format!("{:.4}", m.mean)).unwrap_or_default(),
                sel.value,
            );
            let tests: Vec<&Comparison> = self
                .comparisons
                .iter()
                .filter(|c| c.other == sel.combination)
                .filter(|c| c.test.starts_with("wilcoxon") || c.test.ends_with(&sel.attribute))
                .collect();
            if tests.is_empty() {
                let _ = writeln!(s, "{head},,,,,,,,");
            }
            for c in tests {
                let base = &combinations[c.baseline];
                let r = &c.result;
                let _ = writeln!(
                    s,
                    "{head},{},{},{},{:.6},{:.6e},{},{},{}",
                    c.test,
                    lambda_of(base, "gender"),
                    lambda_of(base, "age"),
                    r.statistic,
                    r.p_value,
                    r.significant,
                    r.degenerate,
                    r.n
                );
            }
        }
        s
    }
}
