//! Command-line interface.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{dedup_key, load_jsonl, save_jsonl, Instance, Pool, PoolKind, Taxonomy};
use crate::error::{Error, Result};
use crate::eval::{self, cohen_kappa, MetricsReport};
use crate::experiment::{run_matrix, ExperimentMatrix, MatrixInputs};
use crate::featurize::Vocabulary;
use crate::http::RetryPolicy;
use crate::learner::{ActiveLearner, LearnerSpec, RemoteTrainConfig};
use crate::orchestrate::{
    parse_checkpoint, Annotator, AnnotatorKind, InteractiveAnnotator, Run, RunConfig, ScriptedAnnotator,
};
use crate::service::{self, ServiceConfig};
use crate::strategy::Strategy;
use crate::synthetic::{self, SyntheticSpec};

#[derive(Parser, Debug)]
#[command(name = "alguide", version, about = "Clustering-based active learning with LLM-generated variations")]
pub struct Cli {
    /// Run configuration (JSON); command-line flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log at debug level.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Normalize text or JSONL files into a canonical corpus.
    Ingest(IngestArgs),
    /// Draw seeded bootstrap/dev/test splits; the rest becomes the pool.
    BootstrapSplit(SplitArgs),
    /// Run the acquisition loop to budget.
    Run(RunArgs),
    /// Train learners on acquired splits and score them on a test split.
    Evaluate(EvaluateArgs),
    /// Run a strategy-by-seed grid over shared splits.
    Matrix(MatrixArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Render a report for a checkpointed run.
    Report(ReportArgs),
    /// Write a synthetic corpus with skewed class priors.
    Synth(SynthArgs),
    /// Cohen's kappa between two label files.
    Kappa(KappaArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Keep texts that duplicate an earlier one.
    #[arg(long)]
    pub keep_duplicates: bool,
    /// Write labels carried by JSONL inputs as an answer file.
    #[arg(long)]
    pub answers: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Answer file labeling every sampled id.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 150)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 150)]
    pub dev: usize,
    #[arg(long, default_value_t = 2700)]
    pub test: usize,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnnotatorArg {
    Scripted,
    Interactive,
}

#[derive(Args, Debug, Default)]
pub struct Overrides {
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Total human labels (B).
    #[arg(long)]
    pub budget: Option<usize>,
    /// Labels per iteration (N).
    #[arg(long)]
    pub batch: Option<usize>,
    /// Cluster count (m).
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Variations per human label (k).
    #[arg(long)]
    pub variations: Option<usize>,
    /// Use the deterministic offline LLM stand-in.
    #[arg(long)]
    pub mock_llm: bool,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    #[arg(long)]
    pub bootstrap: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Labeled split scored after every retrain.
    #[arg(long)]
    pub monitor: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "scripted")]
    pub annotator: AnnotatorArg,
    /// Answer file for the scripted annotator.
    #[arg(long)]
    pub answers: Option<PathBuf>,
    /// Continue from a checkpoint instead of initializing.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many iterations.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Training splits; each is named after its file stem.
    #[arg(long = "split", required = true)]
    pub splits: Vec<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Model-server base URLs trained in addition to the native learner.
    #[arg(long = "transfer")]
    pub transfer: Vec<String>,
    /// Skip the native learner.
    #[arg(long)]
    pub no_native: bool,
    /// Retries for remote learners.
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MatrixArgs {
    #[arg(long)]
    pub unlabeled: PathBuf,
    #[arg(long)]
    pub bootstrap: PathBuf,
    #[arg(long)]
    pub answers: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<Strategy>>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 0)]
    pub parallelism: usize,
    #[arg(short, long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, default_value = "alguide-data")]
    pub data_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub markdown: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub unlabeled: usize,
    #[arg(long, default_value_t = 60)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 150)]
    pub dev: usize,
    #[arg(long, default_value_t = 600)]
    pub test: usize,
}

#[derive(Args, Debug)]
pub struct KappaArgs {
    pub a: PathBuf,
    pub b: PathBuf,
}

/// Parses `args` and runs the command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::invalid(e.to_string()))?;
    execute(cli)
}

pub fn execute(cli: Cli) -> Result<()> {
    let base = load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::BootstrapSplit(a) => bootstrap_split(&a, base.seed),
        Command::Run(a) => run(a, base),
        Command::Evaluate(a) => evaluate(&a, &base),
        Command::Matrix(a) => matrix(&a, base),
        Command::Serve(a) => service::serve_blocking(ServiceConfig::new(a.data_dir).with_env_token(), a.addr),
        Command::Report(a) => report(&a),
        Command::Synth(a) => synth(&a, base.seed),
        Command::Kappa(a) => kappa(&a),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let raw = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let mut de = serde_json::Deserializer::from_str(&raw);
            serde_path_to_error::deserialize(&mut de)
                .map_err(|e| Error::invalid(format!("{}: field `{}`: {}", p.display(), e.path(), e.inner())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply(cfg: &mut RunConfig, o: &Overrides) {
    if let Some(s) = o.strategy {
        cfg.strategy = s;
    }
    if let Some(b) = o.budget {
        cfg.budget = b;
    }
    if let Some(n) = o.batch {
        cfg.batch = n;
    }
    if let Some(m) = o.clusters {
        cfg.clusters = m;
    }
    if let Some(k) = o.variations {
        cfg.variations = k;
    }
    if o.mock_llm {
        cfg.llm.mock = true;
    }
}

fn taxonomy(path: Option<&Path>) -> Result<Taxonomy> {
    path.map_or_else(|| Ok(Taxonomy::safety_default()), Taxonomy::load)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

#[derive(serde::Deserialize)]
struct RawLine {
    #[serde(default)]
    id: Option<String>,
    text: String,
    #[serde(default)]
    label: Option<String>,
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let mut pool = Pool::new(PoolKind::Unlabeled);
    let mut labels = Vec::new();
    let mut seen: HashMap<String, String> = HashMap::new();
    let mut duplicates = Vec::new();
    for path in &a.inputs {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("item").to_string();
        for (n, bytes) in raw.split(|&b| b == b'\n').enumerate() {
            let line = std::str::from_utf8(bytes).map_err(|_| Error::Parse {
                line: n + 1,
                message: format!("{}: not valid UTF-8", path.display()),
            })?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (id, text, label) = if line.trim_start().starts_with('{') {
                let r: RawLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                    line: n + 1,
                    message: format!("{}: {e}", path.display()),
                })?;
                (r.id.unwrap_or_else(|| format!("{stem}-{:06}", n + 1)), r.text, r.label)
            } else {
                (format!("{stem}-{:06}", n + 1), line.trim().to_string(), None)
            };
            if text.trim().is_empty() {
                continue;
            }
            let key = dedup_key(&text);
            if let Some(first) = seen.get(&key) {
                duplicates.push((id.clone(), first.clone()));
                if !a.keep_duplicates {
                    continue;
                }
            } else {
                seen.insert(key, id.clone());
            }
            if let Some(l) = label {
                labels.push((id.clone(), l));
            }
            pool.insert(Instance::unlabeled(id, text))?;
        }
    }
    if pool.is_empty() {
        return Err(Error::invalid("no usable lines in the input"));
    }
    save_jsonl(&pool, &a.output)?;
    if let Some(ans) = &a.answers {
        let map: HashMap<String, String> = labels.into_iter().collect();
        synthetic::write_answers(&pool, &map, ans)?;
    }
    for (dup, first) in &duplicates {
        eprintln!("duplicate: {dup} repeats {first}");
    }
    println!(
        "ingested {} instances ({} duplicates {})",
        pool.len(),
        duplicates.len(),
        if a.keep_duplicates { "kept" } else { "dropped" }
    );
    Ok(())
}

fn bootstrap_split(a: &SplitArgs, seed: u64) -> Result<()> {
    let tax = taxonomy(a.taxonomy.as_deref())?;
    let corpus = load_jsonl(&a.corpus, &tax)?;
    let need = a.bootstrap + a.dev + a.test;
    if need > corpus.len() {
        return Err(Error::invalid(format!(
            "split sizes sum to {need} but the corpus has {} instances",
            corpus.len()
        )));
    }
    let answers = ScriptedAnnotator::from_file(&a.labels)?;
    let mut ids: Vec<String> = corpus.ids().map(str::to_string).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sampled = &ids[..need];
    let missing: Vec<&str> = sampled
        .iter()
        .filter(|id| !answers.answers().contains_key(*id))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Annotation(format!("no label for sampled ids: {}", missing.join(", "))));
    }
    let labeled = |range: &[String]| -> Result<Pool> {
        let mut p = Pool::new(PoolKind::Labeled);
        for id in range {
            let inst = corpus.get(id).expect("sampled from corpus");
            let label = &answers.answers()[id];
            tax.require(label)?;
            p.insert(Instance::labeled(id.clone(), inst.text.clone(), label.clone()))?;
        }
        Ok(p)
    };
    let bootstrap = labeled(&ids[..a.bootstrap])?;
    let dev = labeled(&ids[a.bootstrap..a.bootstrap + a.dev])?;
    let test = labeled(&ids[a.bootstrap + a.dev..need])?;
    let taken: HashSet<&String> = sampled.iter().collect();
    let rest = Pool::from_instances(
        PoolKind::Unlabeled,
        corpus.iter().filter(|i| !taken.contains(&i.id)).cloned(),
    )?;
    ensure_dir(&a.out)?;
    save_jsonl(&bootstrap, a.out.join("bootstrap.jsonl"))?;
    save_jsonl(&dev, a.out.join("dev.jsonl"))?;
    save_jsonl(&test, a.out.join("test.jsonl"))?;
    save_jsonl(&rest, a.out.join("unlabeled.jsonl"))?;
    println!(
        "bootstrap {} dev {} test {} unlabeled {}",
        bootstrap.len(),
        dev.len(),
        test.len(),
        rest.len()
    );
    Ok(())
}

fn run(a: RunArgs, mut cfg: RunConfig) -> Result<()> {
    ensure_dir(&a.out)?;
    let mut run = match &a.resume {
        Some(ck) => Run::resume(ck)?,
        None => {
            apply(&mut cfg, &a.overrides);
            cfg.annotator = match a.annotator {
                AnnotatorArg::Scripted => AnnotatorKind::Scripted,
                AnnotatorArg::Interactive => AnnotatorKind::Interactive,
            };
            let tax = taxonomy(a.taxonomy.as_deref())?;
            let need = |p: &Option<PathBuf>, flag: &str| {
                p.clone().ok_or_else(|| Error::invalid(format!("--{flag} is required unless --resume is given")))
            };
            let u = load_jsonl(need(&a.unlabeled, "unlabeled")?, &tax)?;
            let b = load_jsonl(need(&a.bootstrap, "bootstrap")?, &tax)?;
            let monitor = a.monitor.as_ref().map(|p| load_jsonl(p, &tax)).transpose()?;
            Run::init(cfg, tax, u, b, monitor)?
        }
    };
    let mut annotator: Box<dyn Annotator> = match a.annotator {
        AnnotatorArg::Scripted => {
            let path = a
                .answers
                .as_ref()
                .ok_or_else(|| Error::invalid("--answers is required for the scripted annotator"))?;
            Box::new(ScriptedAnnotator::from_file(path)?)
        }
        AnnotatorArg::Interactive => Box::new(InteractiveAnnotator::stdio()),
    };
    let checkpoint = a.out.join("checkpoint.json");
    let mut done = 0;
    while run.can_continue() && a.max_iterations.is_none_or(|m| done < m) {
        run.run_iteration(annotator.as_mut())?;
        run.checkpoint(&checkpoint)?;
        done += 1;
        let st = run.state();
        log::info!(
            "iteration {} done: remaining budget {}, |L| = {}",
            st.iteration,
            st.remaining_budget,
            st.l.len()
        );
    }
    if done == 0 {
        run.run_until_budget(annotator.as_mut())?;
    }
    run.checkpoint(&checkpoint)?;
    run.write_events(a.out.join("events.jsonl"))?;
    let st = run.state();
    let acquired = st.acquired();
    let split = a.out.join(format!("{}.jsonl", st.config.strategy.name()));
    save_jsonl(&acquired, &split)?;
    println!(
        "{}: {} iterations, {} human + {} generated = {} acquired -> {}",
        st.config.strategy,
        st.iteration,
        st.human_count(),
        st.generated_count(),
        acquired.len(),
        split.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalCell {
    split: String,
    learner: String,
    metrics: Option<MetricsReport>,
    error: Option<String>,
}

fn train_and_score(spec: &LearnerSpec, train: &Pool, test: &Pool, tax: &Taxonomy) -> Result<MetricsReport> {
    let vocab = std::sync::Arc::new(Vocabulary::fit(train)?);
    let mut learner = ActiveLearner::new(spec, vocab, tax);
    learner.fit(train, tax)?;
    eval::evaluate_model(&learner, test, tax)
}

fn evaluate(a: &EvaluateArgs, cfg: &RunConfig) -> Result<()> {
    let tax = taxonomy(a.taxonomy.as_deref())?;
    if !a.test.is_file() {
        return Err(Error::invalid(format!("test split not found: {}", a.test.display())));
    }
    let test = load_jsonl(&a.test, &tax)?;
    let mut learners: Vec<(String, LearnerSpec)> = Vec::new();
    if !a.no_native {
        let native = match &cfg.learner {
            spec @ LearnerSpec::Native { .. } => spec.clone(),
            LearnerSpec::Remote { .. } => LearnerSpec::default(),
        };
        learners.push(("native".into(), native));
    }
    for url in &a.transfer {
        learners.push((
            url.clone(),
            LearnerSpec::Remote {
                endpoint: url.clone(),
                config: RemoteTrainConfig {
                    seed: cfg.seed,
                    ..RemoteTrainConfig::default()
                },
                retry: RetryPolicy {
                    max_retries: a.retries,
                    ..RetryPolicy::default()
                },
                token_env: "ALGUIDE_MODEL_SERVER_TOKEN".into(),
            },
        ));
    }
    let mut cells = Vec::new();
    for path in &a.splits {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("split").to_string();
        let train = load_jsonl(path, &tax)?;
        for (lname, spec) in &learners {
            let cell = match train_and_score(spec, &train, &test, &tax) {
                Ok(m) => EvalCell {
                    split: name.clone(),
                    learner: lname.clone(),
                    metrics: Some(m),
                    error: None,
                },
                Err(e) => {
                    log::warn!("{name} x {lname}: {e}");
                    EvalCell {
                        split: name.clone(),
                        learner: lname.clone(),
                        metrics: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            cells.push(cell);
        }
    }
    ensure_dir(&a.out)?;
    write_json(&a.out.join("evaluation.json"), &cells)?;

    let mut table = String::from("| learner | split | accuracy | macro-P | macro-R | macro-F1 | error-rate std |\n|---|---|---|---|---|---|---|\n");
    let mut by_learner: BTreeMap<&str, Vec<&EvalCell>> = BTreeMap::new();
    for c in &cells {
        by_learner.entry(c.learner.as_str()).or_default().push(c);
    }
    for (learner, rows) in by_learner {
        for c in rows {
            match &c.metrics {
                Some(m) => table.push_str(&format!(
                    "| {learner} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {} |\n",
                    c.split,
                    m.accuracy,
                    m.macro_precision,
                    m.macro_recall,
                    m.macro_f1,
                    m.error_rate_stddev.map_or("-".into(), |v| format!("{v:.2}"))
                )),
                None => table.push_str(&format!(
                    "| {learner} | {} | failed: {} | | | | |\n",
                    c.split,
                    c.error.as_deref().unwrap_or_default()
                )),
            }
        }
    }
    let md = a.out.join("evaluation.md");
    std::fs::write(&md, &table).map_err(|e| Error::io(&md, e))?;
    let stdout = std::io::stdout();
    let _ = stdout.lock().write_all(table.as_bytes());
    Ok(())
}

fn matrix(a: &MatrixArgs, mut cfg: RunConfig) -> Result<()> {
    apply(&mut cfg, &a.overrides);
    let tax = taxonomy(a.taxonomy.as_deref())?;
    let u = load_jsonl(&a.unlabeled, &tax)?;
    let b = load_jsonl(&a.bootstrap, &tax)?;
    let test = load_jsonl(&a.test, &tax)?;
    let answers = ScriptedAnnotator::from_file(&a.answers)?;
    let m = ExperimentMatrix {
        strategies: a.strategies.clone().unwrap_or_else(|| Strategy::ALL.to_vec()),
        seeds: a.seeds.clone(),
        config: cfg,
        parallelism: a.parallelism,
    };
    ensure_dir(&a.out)?;
    let inputs = MatrixInputs {
        taxonomy: &tax,
        unlabeled: &u,
        bootstrap: &b,
        test: &test,
        answers: answers.answers(),
    };
    let res = run_matrix(&m, inputs, Some(&a.out))?;
    res.write_aggregate_csv(a.out.join("aggregate.csv"))?;
    res.write_cells_csv(a.out.join("cells.csv"))?;
    for agg in &res.aggregate {
        println!(
            "{:<10} completed {} failed {} mean std {} mean macro-F1 {}",
            agg.strategy.name(),
            agg.completed,
            agg.failed,
            agg.mean_class_count_stddev.map_or("-".into(), |v| format!("{v:.2}")),
            agg.mean_macro_f1.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let raw = std::fs::read_to_string(&a.checkpoint).map_err(|e| Error::io(&a.checkpoint, e))?;
    let state = parse_checkpoint(&raw)?;
    let test = load_jsonl(&a.test, &state.taxonomy)?;
    let run = Run::from_state(state)?;
    let rep = eval::report(run.state(), run.learner(), &test)?;
    rep.save(&a.out, a.markdown.as_deref())?;
    println!(
        "macro-F1 {:.4} accuracy {:.4} over {} test instances",
        rep.test.macro_f1, rep.test.accuracy, rep.test.n
    );
    Ok(())
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let spec = SyntheticSpec {
        n_unlabeled: a.unlabeled,
        n_bootstrap: a.bootstrap,
        n_dev: a.dev,
        n_test: a.test,
        seed,
        ..SyntheticSpec::default()
    };
    let corpus = synthetic::generate(&spec, &Taxonomy::safety_default())?;
    corpus.write(&a.out)?;
    println!("wrote synthetic corpus to {}", a.out.display());
    Ok(())
}

fn kappa(a: &KappaArgs) -> Result<()> {
    let left = ScriptedAnnotator::from_file(&a.a)?;
    let right = ScriptedAnnotator::from_file(&a.b)?;
    let mut ids: Vec<&String> = left.answers().keys().filter(|id| right.answers().contains_key(*id)).collect();
    ids.sort();
    let x: Vec<&str> = ids.iter().map(|id| left.answers()[*id].as_str()).collect();
    let y: Vec<&str> = ids.iter().map(|id| right.answers()[*id].as_str()).collect();
    let k = cohen_kappa(&x, &y)?;
    println!("kappa {k:.4} over {} shared items", ids.len());
    Ok(())
}
