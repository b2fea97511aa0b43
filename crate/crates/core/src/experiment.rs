//! Strategy-by-seed experiment grids over shared splits.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{save_jsonl, Pool, Taxonomy};
use crate::error::{Error, Result};
use crate::eval::{self, ClassCountTable, MetricsReport};
use crate::learner::{ActiveLearner, LearnerSpec};
use crate::orchestrate::{Run, RunConfig, RunState, ScriptedAnnotator};
use crate::strategy::Strategy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentMatrix {
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    /// Shared settings; `strategy` and `seed` are overridden per cell.
    pub config: RunConfig,
    /// Cells run concurrently; 0 means one per available core.
    pub parallelism: usize,
}

impl Default for ExperimentMatrix {
    fn default() -> Self {
        ExperimentMatrix {
            strategies: Strategy::ALL.to_vec(),
            seeds: (0..5).collect(),
            config: RunConfig::default(),
            parallelism: 0,
        }
    }
}

impl ExperimentMatrix {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("matrix needs at least one strategy and one seed"));
        }
        self.config.check()
    }

    pub fn cells(&self) -> Vec<(Strategy, u64)> {
        self.strategies
            .iter()
            .flat_map(|&s| self.seeds.iter().map(move |&seed| (s, seed)))
            .collect()
    }
}

/// Splits and oracle answers every cell shares.
#[derive(Clone, Copy)]
pub struct MatrixInputs<'a> {
    pub taxonomy: &'a Taxonomy,
    pub unlabeled: &'a Pool,
    pub bootstrap: &'a Pool,
    pub test: &'a Pool,
    pub answers: &'a HashMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub strategy: Strategy,
    pub seed: u64,
    pub acquired: usize,
    pub class_counts: Option<Vec<u64>>,
    pub class_count_stddev: Option<f64>,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyAggregate {
    pub strategy: Strategy,
    pub completed: usize,
    pub failed: usize,
    pub mean_class_count_stddev: Option<f64>,
    pub mean_macro_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixResult {
    pub cells: Vec<CellResult>,
    pub aggregate: Vec<StrategyAggregate>,
}

/// Runs one cell to budget, then scores a native learner trained on the
/// final `L` against `test`.
pub fn run_cell(cfg: RunConfig, inputs: MatrixInputs<'_>) -> Result<(RunState, MetricsReport)> {
    let mut run = Run::init(cfg, inputs.taxonomy.clone(), inputs.unlabeled.clone(), inputs.bootstrap.clone(), None)?;
    run.run_until_budget(&mut ScriptedAnnotator::new(inputs.answers.clone()))?;
    let metrics = match &run.state().config.learner {
        LearnerSpec::Native { .. } => eval::evaluate_model(run.learner(), inputs.test, inputs.taxonomy)?,
        LearnerSpec::Remote { .. } => {
            let mut native = ActiveLearner::new(&LearnerSpec::default(), run.vocabulary().clone(), inputs.taxonomy);
            native.fit(&run.state().l, inputs.taxonomy)?;
            eval::evaluate_model(&native, inputs.test, inputs.taxonomy)?
        }
    };
    Ok((run.into_state(), metrics))
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs every cell; a failing cell is recorded and excluded from the
/// aggregate. With `out_dir`, each cell's acquired split and state are
/// written under `<strategy>_seed<seed>`.
pub fn run_matrix(matrix: &ExperimentMatrix, inputs: MatrixInputs<'_>, out_dir: Option<&Path>) -> Result<MatrixResult> {
    matrix.validate()?;
    let cells = matrix.cells();
    let workers = match matrix.parallelism {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        p => p,
    }
    .min(cells.len());

    let run_one = |(strategy, seed): (Strategy, u64)| -> CellResult {
        let cfg = RunConfig {
            strategy,
            seed,
            ..matrix.config.clone()
        };
        let outcome = run_cell(cfg, inputs).and_then(|(state, metrics)| {
            if let Some(dir) = out_dir {
                let cell_dir = dir.join(format!("{}_seed{seed}", strategy.name()));
                std::fs::create_dir_all(&cell_dir).map_err(|e| Error::io(&cell_dir, e))?;
                save_jsonl(&state.acquired(), cell_dir.join(format!("{}.jsonl", strategy.name())))?;
                let p = cell_dir.join("metrics.json");
                std::fs::write(&p, serde_json::to_string_pretty(&metrics)?).map_err(|e| Error::io(&p, e))?;
            }
            Ok((state, metrics))
        });
        match outcome {
            Ok((state, metrics)) => {
                let table = ClassCountTable::of(&state.acquired(), inputs.taxonomy);
                CellResult {
                    strategy,
                    seed,
                    acquired: state.acquired().len(),
                    class_count_stddev: table.stddev,
                    class_counts: Some(table.total),
                    accuracy: Some(metrics.accuracy),
                    macro_f1: Some(metrics.macro_f1),
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("cell {strategy}/{seed} failed: {e}");
                CellResult {
                    strategy,
                    seed,
                    acquired: 0,
                    class_counts: None,
                    class_count_stddev: None,
                    accuracy: None,
                    macro_f1: None,
                    error: Some(e.to_string()),
                }
            }
        }
    };

    let mut results: Vec<Option<CellResult>> = vec![None; cells.len()];
    std::thread::scope(|scope| {
        let run_one = &run_one;
        let cells = &cells;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..cells.len())
                        .step_by(workers)
                        .map(|i| (i, run_one(cells[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("matrix worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    let cells: Vec<CellResult> = results.into_iter().map(|r| r.expect("every cell ran")).collect();

    let aggregate = matrix
        .strategies
        .iter()
        .map(|&s| {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| c.strategy == s).collect();
            let ok: Vec<&&CellResult> = mine.iter().filter(|c| c.error.is_none()).collect();
            StrategyAggregate {
                strategy: s,
                completed: ok.len(),
                failed: mine.len() - ok.len(),
                mean_class_count_stddev: mean(ok.iter().filter_map(|c| c.class_count_stddev)),
                mean_macro_f1: mean(ok.iter().filter_map(|c| c.macro_f1)),
            }
        })
        .collect();
    Ok(MatrixResult { cells, aggregate })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

impl MatrixResult {
    pub fn aggregate_for(&self, s: Strategy) -> Option<&StrategyAggregate> {
        self.aggregate.iter().find(|a| a.strategy == s)
    }

    /// One row per strategy.
    pub fn write_aggregate_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["strategy", "completed", "failed", "mean_class_count_stddev", "mean_macro_f1"])
            .map_err(csv_err)?;
        for a in &self.aggregate {
            w.write_record([
                a.strategy.name().to_string(),
                a.completed.to_string(),
                a.failed.to_string(),
                opt(a.mean_class_count_stddev),
                opt(a.mean_macro_f1),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// One row per (strategy, seed) cell.
    pub fn write_cells_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["strategy", "seed", "acquired", "class_count_stddev", "accuracy", "macro_f1", "error"])
            .map_err(csv_err)?;
        for c in &self.cells {
            w.write_record([
                c.strategy.name().to_string(),
                c.seed.to_string(),
                c.acquired.to_string(),
                opt(c.class_count_stddev),
                opt(c.accuracy),
                opt(c.macro_f1),
                c.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::LlmConfig;
    use crate::synthetic::{generate, SyntheticSpec};

    #[test]
    fn small_matrix_aggregates_per_strategy() {
        let tax = Taxonomy::safety_default();
        let corpus = generate(
            &SyntheticSpec {
                n_unlabeled: 120,
                n_bootstrap: 12,
                n_dev: 0,
                n_test: 60,
                ..SyntheticSpec::default()
            },
            &tax,
        )
        .unwrap();
        let matrix = ExperimentMatrix {
            strategies: vec![Strategy::Random, Strategy::ClusterAl],
            seeds: vec![1, 2],
            config: RunConfig {
                budget: 20,
                batch: 10,
                clusters: 4,
                variations: 2,
                llm: LlmConfig::mock(),
                ..RunConfig::default()
            },
            parallelism: 2,
        };
        let inputs = MatrixInputs {
            taxonomy: &tax,
            unlabeled: &corpus.unlabeled,
            bootstrap: &corpus.bootstrap,
            test: &corpus.test,
            answers: &corpus.answers,
        };
        let dir = tempfile::tempdir().unwrap();
        let res = run_matrix(&matrix, inputs, Some(dir.path())).unwrap();
        assert_eq!(res.cells.len(), 4);
        assert_eq!(res.aggregate.len(), 2);
        assert!(res.cells.iter().all(|c| c.error.is_none() && c.acquired == 60));
        res.write_aggregate_csv(dir.path().join("agg.csv")).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("agg.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(dir.path().join("cluster_al_seed2/cluster_al.jsonl").exists());

        let again = run_matrix(&matrix, inputs, None).unwrap();
        assert_eq!(again.cells, res.cells);
    }

    #[test]
    fn failing_cells_are_recorded() {
        let tax = Taxonomy::safety_default();
        let corpus = generate(&SyntheticSpec { n_unlabeled: 30, n_bootstrap: 6, n_dev: 0, n_test: 6, ..SyntheticSpec::default() }, &tax).unwrap();
        let matrix = ExperimentMatrix {
            strategies: vec![Strategy::Topn],
            seeds: vec![0],
            config: RunConfig { budget: 10, batch: 10, variations: 0, llm: LlmConfig::mock(), ..RunConfig::default() },
            parallelism: 1,
        };
        let empty = HashMap::new();
        let inputs = MatrixInputs {
            taxonomy: &tax,
            unlabeled: &corpus.unlabeled,
            bootstrap: &corpus.bootstrap,
            test: &corpus.test,
            answers: &empty,
        };
        let res = run_matrix(&matrix, inputs, None).unwrap();
        assert!(res.cells[0].error.as_deref().unwrap().contains("no scripted answer"));
        assert_eq!(res.aggregate[0].failed, 1);
        assert_eq!(res.aggregate[0].mean_macro_f1, None);
    }
}
