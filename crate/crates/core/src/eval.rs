//! Classification metrics, class-distribution statistics and run reports.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Origin, Pool, PoolKind, Taxonomy};
use crate::error::{Error, Result};
use crate::learner::{ActiveLearner, ProbabilityModel};
use crate::orchestrate::RunState;

/// Rows are gold classes, columns predicted, both in taxonomy order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(taxonomy: &Taxonomy) -> Self {
        let n = taxonomy.len();
        ConfusionMatrix {
            classes: taxonomy.classes().to_vec(),
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_indices(taxonomy: &Taxonomy, gold: &[usize], pred: &[usize]) -> Result<Self> {
        if gold.len() != pred.len() {
            return Err(Error::invalid(format!("{} gold labels but {} predictions", gold.len(), pred.len())));
        }
        let mut cm = ConfusionMatrix::new(taxonomy);
        let n = taxonomy.len();
        for (&g, &p) in gold.iter().zip(pred) {
            if g >= n || p >= n {
                return Err(Error::invalid(format!("class index out of range for {n} classes")));
            }
            cm.counts[g][p] += 1;
        }
        Ok(cm)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let diag: u64 = (0..self.len()).map(|i| self.counts[i][i]).sum();
        diag as f64 / total as f64
    }

    /// CSV with a header row of predicted classes and one row per gold class.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["gold\\predicted".to_string()];
        header.extend(self.classes.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (c, row) in self.classes.iter().zip(&self.counts) {
            let mut rec = vec![c.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::invalid(format!("csv: {e}")))
    }
}

/// Builds a confusion matrix from class names.
pub fn confusion(taxonomy: &Taxonomy, gold: &[&str], pred: &[&str]) -> Result<ConfusionMatrix> {
    let g = gold.iter().map(|l| taxonomy.require(l)).collect::<Result<Vec<_>>>()?;
    let p = pred.iter().map(|l| taxonomy.require(l)).collect::<Result<Vec<_>>>()?;
    ConfusionMatrix::from_indices(taxonomy, &g, &p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Percentage of this class's gold instances that were misclassified;
    /// absent when the class has no gold instances.
    pub error_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and macro-averaged precision, recall and F1. Any 0/0 counts
/// as 0, and the mean runs over every taxonomy class.
pub fn macro_prf1(cm: &ConfusionMatrix) -> Prf1 {
    let per_class: Vec<ClassMetrics> = (0..cm.len())
        .map(|c| {
            let tp = cm.counts[c][c];
            let support = cm.support(c);
            let precision = ratio(tp, cm.predicted(c));
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                class: cm.classes[c].clone(),
                precision,
                recall,
                f1,
                support,
                error_rate: (support > 0).then(|| 100.0 * (support - tp) as f64 / support as f64),
            }
        })
        .collect();
    let n = per_class.len().max(1) as f64;
    Prf1 {
        macro_precision: per_class.iter().map(|m| m.precision).sum::<f64>() / n,
        macro_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / n,
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / n,
        per_class,
    }
}

/// Sample standard deviation (divisor `n - 1`).
pub fn sample_stddev(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::invalid("standard deviation needs at least 2 values"));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok((ss / (n - 1.0)).sqrt())
}

/// Sample standard deviation of per-class counts.
pub fn class_count_stddev(counts: &[u64]) -> Result<f64> {
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    sample_stddev(&xs)
}

/// Sample standard deviation of per-class error percentages over classes
/// with gold support. Unsupported classes are skipped.
pub fn error_rate_stddev(cm: &ConfusionMatrix) -> Result<f64> {
    let rates: Vec<f64> = macro_prf1(cm).per_class.iter().filter_map(|m| m.error_rate).collect();
    if rates.is_empty() {
        return Err(Error::invalid("no class has gold instances"));
    }
    sample_stddev(&rates)
}

/// Cohen's kappa between two labelings of the same items.
pub fn cohen_kappa(a: &[&str], b: &[&str]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("kappa needs two non-empty labelings of equal length"));
    }
    let n = a.len() as f64;
    let mut labels: Vec<&str> = a.iter().chain(b).copied().collect();
    labels.sort_unstable();
    labels.dedup();
    let idx = |l: &str| labels.binary_search(&l).expect("collected");
    let mut ma = vec![0.0; labels.len()];
    let mut mb = vec![0.0; labels.len()];
    let mut agree = 0.0;
    for (x, y) in a.iter().zip(b) {
        ma[idx(x)] += 1.0;
        mb[idx(y)] += 1.0;
        if x == y {
            agree += 1.0;
        }
    }
    let po = agree / n;
    let pe: f64 = ma.iter().zip(&mb).map(|(x, y)| (x / n) * (y / n)).sum();
    if (1.0 - pe).abs() < 1e-15 {
        return if po == 1.0 {
            Ok(1.0)
        } else {
            Err(Error::invalid("kappa is undefined: chance agreement is 1"))
        };
    }
    Ok((po - pe) / (1.0 - pe))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: u64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub error_rate_stddev: Option<f64>,
    /// Classes left out of `error_rate_stddev` for lack of gold instances.
    pub excluded_classes: Vec<String>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Self {
        let prf = macro_prf1(&cm);
        MetricsReport {
            n: cm.total(),
            accuracy: cm.accuracy(),
            macro_precision: prf.macro_precision,
            macro_recall: prf.macro_recall,
            macro_f1: prf.macro_f1,
            error_rate_stddev: error_rate_stddev(&cm).ok(),
            excluded_classes: prf.per_class.iter().filter(|m| m.support == 0).map(|m| m.class.clone()).collect(),
            per_class: prf.per_class,
            confusion: cm,
        }
    }
}

/// Scores `model` on a labeled pool.
pub fn evaluate_model(model: &dyn ProbabilityModel, pool: &Pool, taxonomy: &Taxonomy) -> Result<MetricsReport> {
    if pool.kind() != PoolKind::Labeled {
        return Err(Error::invalid("evaluation split must be labeled"));
    }
    if pool.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let texts: Vec<&str> = pool.texts().collect();
    let probs = model.predict_texts(&texts)?;
    let gold = pool
        .iter()
        .map(|i| taxonomy.require(i.label.as_deref().unwrap_or_default()))
        .collect::<Result<Vec<_>>>()?;
    let pred: Vec<usize> = probs.iter().map(|p| p.argmax()).collect();
    Ok(MetricsReport::from_confusion(ConfusionMatrix::from_indices(taxonomy, &gold, &pred)?))
}

/// Acquired-instance counts per class, in taxonomy order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCountTable {
    pub classes: Vec<String>,
    pub human: Vec<u64>,
    pub generated: Vec<u64>,
    pub total: Vec<u64>,
    /// Sample standard deviation of `total`.
    pub stddev: Option<f64>,
}

impl ClassCountTable {
    pub fn of(acquired: &Pool, taxonomy: &Taxonomy) -> Self {
        let mut human = vec![0; taxonomy.len()];
        let mut generated = vec![0; taxonomy.len()];
        for inst in acquired.iter() {
            let Some(c) = inst.label.as_deref().and_then(|l| taxonomy.index_of(l)) else {
                continue;
            };
            match inst.origin {
                Origin::Human => human[c] += 1,
                Origin::Generated => generated[c] += 1,
                Origin::Bootstrap => {}
            }
        }
        let total: Vec<u64> = human.iter().zip(&generated).map(|(a, b)| a + b).collect();
        let stddev = if total.iter().sum::<u64>() == 0 {
            None
        } else {
            class_count_stddev(&total).ok()
        };
        ClassCountTable {
            classes: taxonomy.classes().to_vec(),
            human,
            generated,
            total,
            stddev,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub iteration: u32,
    pub train_size: usize,
    pub human: usize,
    pub generated: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub budget: usize,
    pub batch: usize,
    pub clusters: usize,
    pub variations: usize,
    pub seed: u64,
    pub iterations: u32,
    pub remaining_budget: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: RunSummary,
    pub class_counts: ClassCountTable,
    pub test: MetricsReport,
    /// Row `i` is a learner trained on everything labeled before
    /// iteration `i`; row 0 is the bootstrap learner.
    pub trajectory: Vec<TrajectoryRow>,
}

/// Evaluates the run's learner on `test` and replays its training-set
/// growth for the trajectory.
pub fn report(state: &RunState, learner: &ActiveLearner, test: &Pool) -> Result<RunReport> {
    let tax = &state.taxonomy;
    let test_metrics = evaluate_model(learner, test, tax)?;
    let vocab = std::sync::Arc::new(state.vocabulary.clone());
    let mut trajectory = Vec::new();
    for it in 0..=state.iteration {
        let subset = Pool::from_instances(
            PoolKind::Labeled,
            state
                .l
                .iter()
                .filter(|i| i.origin == Origin::Bootstrap || i.iteration.is_some_and(|s| s < it))
                .cloned(),
        )?;
        let row_metrics = if it == state.iteration {
            test_metrics.clone()
        } else {
            let mut l = ActiveLearner::new(&state.config.learner, vocab.clone(), tax);
            l.fit(&subset, tax)?;
            evaluate_model(&l, test, tax)?
        };
        trajectory.push(TrajectoryRow {
            iteration: it,
            train_size: subset.len(),
            human: subset.iter().filter(|i| i.origin == Origin::Human).count(),
            generated: subset.iter().filter(|i| i.origin == Origin::Generated).count(),
            accuracy: row_metrics.accuracy,
            macro_f1: row_metrics.macro_f1,
        });
    }
    let c = &state.config;
    Ok(RunReport {
        run: RunSummary {
            strategy: c.strategy.name().to_string(),
            budget: c.budget,
            batch: c.batch,
            clusters: c.clusters,
            variations: c.variations,
            seed: c.seed,
            iterations: state.iteration,
            remaining_budget: state.remaining_budget,
        },
        class_counts: ClassCountTable::of(&state.acquired(), tax),
        test: test_metrics,
        trajectory,
    })
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, json: impl AsRef<Path>, markdown: Option<&Path>) -> Result<()> {
        let json = json.as_ref();
        std::fs::write(json, self.to_json()?).map_err(|e| Error::io(json, e))?;
        if let Some(md) = markdown {
            std::fs::write(md, self.to_markdown()).map_err(|e| Error::io(md, e))?;
        }
        Ok(())
    }

    pub fn to_markdown(&self) -> String {
        let r = &self.run;
        let mut s = String::new();
        let _ = writeln!(s, "# Run report: {}\n", r.strategy);
        let _ = writeln!(
            s,
            "B={} N={} m={} k={} seed={} iterations={} remaining budget={}\n",
            r.budget, r.batch, r.clusters, r.variations, r.seed, r.iterations, r.remaining_budget
        );

        let cc = &self.class_counts;
        let _ = writeln!(s, "## Acquired class counts\n");
        let _ = writeln!(s, "| | {} | Std |", cc.classes.join(" | "));
        let _ = writeln!(s, "|---|{}---|", "---|".repeat(cc.classes.len()));
        let std = cc.stddev.map_or("-".to_string(), |v| format!("{v:.1}"));
        for (name, row) in [("human", &cc.human), ("generated", &cc.generated)] {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(s, "| {name} | {} | |", cells.join(" | "));
        }
        let cells: Vec<String> = cc.total.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "| **total** | {} | {std} |\n", cells.join(" | "));

        let t = &self.test;
        let _ = writeln!(s, "## Test metrics\n");
        let _ = writeln!(s, "n={} accuracy={:.4} macro-P={:.4} macro-R={:.4} macro-F1={:.4}", t.n, t.accuracy, t.macro_precision, t.macro_recall, t.macro_f1);
        match t.error_rate_stddev {
            Some(v) => {
                let _ = writeln!(s, "error-rate std (per-class error %, sample std)={v:.2}\n");
            }
            None => {
                let _ = writeln!(s, "error-rate std: n/a\n");
            }
        }
        let _ = writeln!(s, "| class | P | R | F1 | support | error % |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for m in &t.per_class {
            let err = m.error_rate.map_or("-".into(), |e| format!("{e:.1}"));
            let _ = writeln!(s, "| {} | {:.4} | {:.4} | {:.4} | {} | {err} |", m.class, m.precision, m.recall, m.f1, m.support);
        }
        let _ = writeln!(s, "\n### Confusion matrix (rows gold, columns predicted)\n");
        let _ = writeln!(s, "| | {} |", t.confusion.classes.join(" | "));
        let _ = writeln!(s, "|---|{}", "---|".repeat(t.confusion.len()));
        for (c, row) in t.confusion.classes.iter().zip(&t.confusion.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(s, "| {c} | {} |", cells.join(" | "));
        }

        let _ = writeln!(s, "\n## Trajectory\n");
        let _ = writeln!(s, "| iteration | train size | human | generated | accuracy | macro-F1 |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for row in &self.trajectory {
            let _ = writeln!(
                s,
                "| iteration {} | {} | {} | {} | {:.4} | {:.4} |",
                row.iteration, row.train_size, row.human, row.generated, row.accuracy, row.macro_f1
            );
        }
        s
    }
}
