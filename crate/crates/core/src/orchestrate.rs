//! The budgeted acquisition loop.
//!
//! One iteration: select `N` instances, obtain their human labels, move them
//! into `L`, generate up to `k` label-preserving variations of each, retrain
//! the learner on all of `L`, and charge `N` against the budget. Iterations
//! repeat while at least `N` budget remains.
//!
//! [`Run`] owns the serializable [`RunState`] plus the live learner and
//! clients. Runs can be driven whole ([`Run::run_until_budget`]) or step by
//! step ([`Run::select_batch`], [`Run::apply_labels`], [`Run::generate`],
//! [`Run::retrain`], [`Run::finish_iteration`]), which is how the service
//! parks a run while humans label.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cluster::{self, kmeans_fit};
use crate::corpus::{dedup_key, promote, Instance, Origin, Pool, PoolKind, Taxonomy};
use crate::error::{Error, Result};
use crate::eval;
use crate::featurize::{EmbeddingClient, EmbeddingConfig, FeatureVector, Vocabulary};
use crate::generate::{filter_variations, parse_variations, render, LlmClient, LlmConfig, Prompt, RelationMode, Template};
use crate::learner::{ActiveLearner, LearnerSpec, LearnerState, ProbabilityModel};
use crate::strategy::{self, Selection, Strategy};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorKind {
    #[default]
    Scripted,
    Interactive,
    Service,
}

/// The space clustering and coreset distances are computed in.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VectorSpace {
    #[default]
    Tfidf,
    Remote(EmbeddingConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: Strategy,
    /// Total human labels (B).
    pub budget: usize,
    /// Human labels per iteration (N).
    pub batch: usize,
    /// Cluster count for `cluster_al` (m).
    pub clusters: usize,
    /// LLM variations per human label (k); 0 disables generation.
    pub variations: usize,
    pub seed: u64,
    pub annotator: AnnotatorKind,
    pub llm: LlmConfig,
    pub learner: LearnerSpec,
    pub template: Template,
    pub relation: RelationMode,
    pub relation_threshold: f64,
    pub vectors: VectorSpace,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    /// Re-cluster the remaining pool at the start of every iteration.
    pub refresh_clusters: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            strategy: Strategy::ClusterAl,
            budget: 100,
            batch: 20,
            clusters: 20,
            variations: 5,
            seed: 0,
            annotator: AnnotatorKind::Scripted,
            llm: LlmConfig::default(),
            learner: LearnerSpec::default(),
            template: Template::safety_default(),
            relation: RelationMode::Inherit,
            relation_threshold: 0.9,
            vectors: VectorSpace::Tfidf,
            kmeans_max_iter: cluster::DEFAULT_MAX_ITER,
            kmeans_tol: cluster::DEFAULT_TOL,
            refresh_clusters: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        FieldError {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl RunConfig {
    /// All constraint violations, one per offending field.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        if self.budget == 0 {
            errs.push(FieldError::new("budget", "must be positive"));
        }
        if self.batch == 0 {
            errs.push(FieldError::new("batch", "must be positive"));
        }
        if self.batch > self.budget {
            errs.push(FieldError::new("batch", format!("batch N={} exceeds budget B={}", self.batch, self.budget)));
        }
        if self.clusters == 0 {
            errs.push(FieldError::new("clusters", "must be positive"));
        }
        if let Err(e) = self.llm.validate() {
            errs.push(FieldError::new("llm", e.to_string()));
        }
        if let LearnerSpec::Native { params } = &self.learner {
            if let Err(e) = params.validate() {
                errs.push(FieldError::new("learner.params", e.to_string()));
            }
        }
        if !(0.0..=1.0).contains(&self.relation_threshold) {
            errs.push(FieldError::new("relation_threshold", "must lie in [0, 1]"));
        }
        if self.kmeans_max_iter == 0 {
            errs.push(FieldError::new("kmeans_max_iter", "must be positive"));
        }
        if !(self.kmeans_tol >= 0.0) {
            errs.push(FieldError::new("kmeans_tol", "must be >= 0"));
        }
        errs
    }

    pub fn check(&self) -> Result<()> {
        match self.validate().first() {
            None => Ok(()),
            Some(e) => Err(Error::invalid(format!("{}: {}", e.field, e.message))),
        }
    }

    /// The template with `k` set to the configured variation count.
    fn effective_template(&self) -> Result<Template> {
        if self.variations == 0 {
            Ok(self.template.clone())
        } else {
            self.template.clone().with_k(self.variations)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub m: usize,
    pub sizes: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub summary: ClusterSummary,
    pub assignment: BTreeMap<String, usize>,
}

/// One audit-log entry. `seq` is a logical clock: strictly increasing,
/// starting at 0, so identical runs produce identical logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub iteration: u32,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Initialized {
        unlabeled: usize,
        labeled: usize,
        vocabulary: usize,
        clusters: Option<ClusterSummary>,
    },
    Clustered {
        summary: ClusterSummary,
    },
    Selected {
        strategy: Strategy,
        ids: Vec<String>,
        scores: BTreeMap<String, f64>,
    },
    Labeled {
        id: String,
        label: String,
    },
    Generated {
        parent_id: String,
        requested: usize,
        parsed: usize,
        accepted: Vec<String>,
        deficit: usize,
        duplicates: usize,
        vetoed: usize,
    },
    GenerationFailed {
        parent_id: String,
        error: String,
    },
    Retrained {
        train_size: usize,
        loss: Option<f64>,
    },
    Evaluated {
        split: String,
        accuracy: f64,
        macro_f1: f64,
    },
    IterationCompleted {
        remaining_budget: usize,
        human_total: usize,
        generated_total: usize,
    },
    Skipped {
        reason: String,
    },
}

/// Everything needed to continue a run, as persisted in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config: RunConfig,
    pub taxonomy: Taxonomy,
    pub u: Pool,
    pub l: Pool,
    pub remaining_budget: usize,
    pub iteration: u32,
    pub initial_unlabeled: usize,
    pub clustering: Option<ClusterState>,
    pub vocabulary: Vocabulary,
    pub learner: LearnerState,
    /// Optional labeled split evaluated after every retrain.
    pub monitor: Option<Pool>,
    pub history: Vec<Event>,
}

impl RunState {
    pub fn human_count(&self) -> usize {
        self.l.iter().filter(|i| i.origin == Origin::Human).count()
    }

    pub fn generated_count(&self) -> usize {
        self.l.iter().filter(|i| i.origin == Origin::Generated).count()
    }

    /// Human and generated instances acquired during the run.
    pub fn acquired(&self) -> Pool {
        Pool::from_instances(
            PoolKind::Labeled,
            self.l.iter().filter(|i| i.origin != Origin::Bootstrap).cloned(),
        )
        .expect("subset of a valid pool")
    }

    pub fn finished(&self) -> bool {
        self.remaining_budget < self.config.batch || self.u.is_empty()
    }

    /// Checks every boundary invariant of the run.
    pub fn check_invariants(&self) -> Result<()> {
        let cfg = &self.config;
        let spent = self.iteration as usize * cfg.batch;
        if spent > cfg.budget || self.remaining_budget != cfg.budget - spent {
            return Err(Error::Invariant(format!(
                "remaining budget {} != B - iteration*N = {} - {}*{}",
                self.remaining_budget, cfg.budget, self.iteration, cfg.batch
            )));
        }
        let humans = self.human_count();
        if humans != spent {
            return Err(Error::Invariant(format!("{humans} human labels after spending {spent}")));
        }
        if self.u.len() + humans != self.initial_unlabeled {
            return Err(Error::Invariant("unlabeled pool size not conserved".into()));
        }
        if let Some(id) = self.u.ids().find(|id| self.l.contains(id)) {
            return Err(Error::Invariant(format!("`{id}` is in both U and L")));
        }
        self.l.validate(&self.taxonomy)?;
        let mut keys: HashMap<String, (&str, Origin)> = HashMap::new();
        for inst in self.l.iter() {
            if inst.origin == Origin::Generated {
                let parent = self.l.get(inst.parent_id.as_deref().unwrap_or_default()).expect("validated");
                if parent.label != inst.label {
                    return Err(Error::Invariant(format!("`{}` does not carry its parent's label", inst.id)));
                }
                if inst.iteration.is_none() {
                    return Err(Error::Invariant(format!("`{}` has no iteration stamp", inst.id)));
                }
            }
            if inst.origin == Origin::Human && inst.iteration.is_none_or(|it| it >= self.iteration) {
                return Err(Error::Invariant(format!("`{}` has a bad iteration stamp", inst.id)));
            }
            let key = dedup_key(&inst.text);
            if let Some((other, origin)) = keys.get(&key) {
                if *origin == Origin::Generated || inst.origin == Origin::Generated {
                    return Err(Error::Invariant(format!("`{}` duplicates `{other}`", inst.id)));
                }
            }
            keys.insert(key, (&inst.id, inst.origin));
        }
        for w in self.history.windows(2) {
            if w[1].seq != w[0].seq + 1 {
                return Err(Error::Invariant("event log is not contiguous".into()));
            }
        }
        Ok(())
    }
}

/// Supplies human labels.
pub trait Annotator {
    /// Label for `item`. `rejected` carries the previous answer when that
    /// answer was outside the taxonomy.
    fn annotate(&mut self, item: &Instance, taxonomy: &Taxonomy, rejected: Option<&str>) -> Result<String>;

    /// Whether an out-of-taxonomy answer should be asked again rather than
    /// failing the iteration.
    fn reprompts(&self) -> bool {
        false
    }
}

/// Answers from a file of `{"id": .., "label": ..}` lines.
#[derive(Clone, Debug, Default)]
pub struct ScriptedAnnotator {
    answers: HashMap<String, String>,
}

#[derive(Deserialize)]
struct Answer {
    id: String,
    label: Option<String>,
}

impl ScriptedAnnotator {
    pub fn new(answers: HashMap<String, String>) -> Self {
        ScriptedAnnotator { answers }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut answers = HashMap::new();
        for (n, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let a: Answer = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            if let Some(label) = a.label {
                answers.insert(a.id, label);
            }
        }
        Ok(ScriptedAnnotator { answers })
    }

    pub fn answers(&self) -> &HashMap<String, String> {
        &self.answers
    }
}

impl Annotator for ScriptedAnnotator {
    fn annotate(&mut self, item: &Instance, _taxonomy: &Taxonomy, _rejected: Option<&str>) -> Result<String> {
        self.answers
            .get(&item.id)
            .cloned()
            .ok_or_else(|| Error::Annotation(format!("no scripted answer for `{}`", item.id)))
    }
}

/// Prompts on a terminal (or any reader/writer pair).
pub struct InteractiveAnnotator<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> InteractiveAnnotator<R, W> {
    pub fn new(input: R, output: W) -> Self {
        InteractiveAnnotator { input, output }
    }
}

impl InteractiveAnnotator<std::io::StdinLock<'static>, std::io::Stdout> {
    pub fn stdio() -> Self {
        InteractiveAnnotator::new(std::io::stdin().lock(), std::io::stdout())
    }
}

impl<R: BufRead, W: Write> Annotator for InteractiveAnnotator<R, W> {
    fn annotate(&mut self, item: &Instance, taxonomy: &Taxonomy, rejected: Option<&str>) -> Result<String> {
        let io = |e| Error::Annotation(format!("terminal: {e}"));
        if let Some(bad) = rejected {
            writeln!(self.output, "`{bad}` is not a class, try again.").map_err(io)?;
        }
        writeln!(self.output, "\n[{}] {}", item.id, item.text).map_err(io)?;
        for (i, c) in taxonomy.classes().iter().enumerate() {
            writeln!(self.output, "  {}. {c}", i + 1).map_err(io)?;
        }
        write!(self.output, "label> ").map_err(io)?;
        self.output.flush().map_err(io)?;
        let mut line = String::new();
        if self.input.read_line(&mut line).map_err(io)? == 0 {
            return Err(Error::Annotation("input closed".into()));
        }
        let answer = line.trim();
        Ok(match answer.parse::<usize>() {
            Ok(i) if (1..=taxonomy.len()).contains(&i) => taxonomy.classes()[i - 1].clone(),
            _ => answer.to_string(),
        })
    }

    fn reprompts(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Step {
    Idle,
    AwaitingLabels(Vec<String>),
    Labeled(Vec<String>),
    Generated,
    Retrained,
}

/// Deterministic per-iteration seed for one random stream.
fn derive_seed(seed: u64, iteration: u32, stream: u64) -> u64 {
    let mut z = seed ^ (u64::from(iteration) << 32) ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SELECT: u64 = 1;
const STREAM_CLUSTER: u64 = 2;

enum Vectorizer {
    Tfidf(Arc<Vocabulary>),
    Remote {
        client: EmbeddingClient,
        cache: HashMap<String, FeatureVector>,
    },
}

impl Vectorizer {
    fn vectors(&mut self, items: &[&Instance]) -> Result<Vec<FeatureVector>> {
        match self {
            Vectorizer::Tfidf(v) => Ok(items.iter().map(|i| v.transform(&i.text)).collect()),
            Vectorizer::Remote { client, cache } => {
                let missing: Vec<&Instance> = items.iter().filter(|i| !cache.contains_key(&i.text)).copied().collect();
                for chunk in missing.chunks(64) {
                    let texts: Vec<&str> = chunk.iter().map(|i| i.text.as_str()).collect();
                    for (inst, v) in chunk.iter().zip(client.embed(&texts)?) {
                        cache.insert(inst.text.clone(), v);
                    }
                }
                Ok(items.iter().map(|i| cache[&i.text].clone()).collect())
            }
        }
    }
}

/// A live run.
pub struct Run {
    state: RunState,
    vocab: Arc<Vocabulary>,
    learner: ActiveLearner,
    llm: LlmClient,
    vectorizer: Vectorizer,
    l_keys: HashSet<String>,
    step: Step,
}

impl Run {
    /// Fits the vocabulary on `U ∪ bootstrap`, trains the bootstrap learner
    /// and, for `cluster_al`, clusters `U`.
    pub fn init(cfg: RunConfig, taxonomy: Taxonomy, u: Pool, bootstrap: Pool, monitor: Option<Pool>) -> Result<Run> {
        cfg.check()?;
        if u.kind() != PoolKind::Unlabeled {
            return Err(Error::invalid("U must be an unlabeled pool"));
        }
        if bootstrap.kind() != PoolKind::Labeled || bootstrap.is_empty() {
            return Err(Error::invalid("bootstrap must be a non-empty labeled pool"));
        }
        if u.len() < cfg.budget {
            return Err(Error::invalid(format!(
                "budget exceeds pool: B={} but |U|={}",
                cfg.budget,
                u.len()
            )));
        }
        if let Some(id) = u.ids().find(|id| bootstrap.contains(id)) {
            return Err(Error::invalid(format!("`{id}` is in both U and the bootstrap set")));
        }
        if let Some(m) = &monitor {
            m.validate(&taxonomy)?;
            if m.kind() != PoolKind::Labeled {
                return Err(Error::invalid("monitor split must be labeled"));
            }
        }
        let mut l = Pool::new(PoolKind::Labeled);
        for mut inst in bootstrap.iter().cloned() {
            if inst.origin == Origin::Human {
                inst.origin = Origin::Bootstrap;
            }
            inst.iteration = None;
            l.insert(inst)?;
        }
        l.validate(&taxonomy)?;

        let vocab = Arc::new(Vocabulary::fit_texts(u.texts().chain(l.texts()))?);
        let mut learner = ActiveLearner::new(&cfg.learner, vocab.clone(), &taxonomy);
        let loss = learner.fit(&l, &taxonomy)?;
        let vectorizer = match &cfg.vectors {
            VectorSpace::Tfidf => Vectorizer::Tfidf(vocab.clone()),
            VectorSpace::Remote(c) => Vectorizer::Remote {
                client: EmbeddingClient::new(c.clone()),
                cache: HashMap::new(),
            },
        };
        let l_keys = l.texts().map(dedup_key).collect();
        let state = RunState {
            taxonomy,
            remaining_budget: cfg.budget,
            iteration: 0,
            initial_unlabeled: u.len(),
            clustering: None,
            vocabulary: (*vocab).clone(),
            learner: learner.state(),
            monitor,
            history: Vec::new(),
            u,
            l,
            config: cfg,
        };
        let mut run = Run {
            llm: LlmClient::new(state.config.llm.clone()),
            state,
            vocab,
            learner,
            vectorizer,
            l_keys,
            step: Step::Idle,
        };
        if run.state.config.strategy == Strategy::ClusterAl {
            run.recluster(cluster_seed(&run.state.config, 0))?;
        }
        let init = EventKind::Initialized {
            unlabeled: run.state.u.len(),
            labeled: run.state.l.len(),
            vocabulary: run.vocab.len(),
            clusters: run.state.clustering.as_ref().map(|c| c.summary.clone()),
        };
        run.log(init);
        run.log(EventKind::Retrained {
            train_size: run.state.l.len(),
            loss,
        });
        run.evaluate_monitor()?;
        Ok(run)
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn into_state(self) -> RunState {
        self.state
    }

    pub fn learner(&self) -> &ActiveLearner {
        &self.learner
    }

    pub fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn history(&self) -> &[Event] {
        &self.state.history
    }

    /// Ids awaiting labels, if a selection is outstanding.
    pub fn pending(&self) -> Option<&[String]> {
        match &self.step {
            Step::AwaitingLabels(ids) => Some(ids),
            _ => None,
        }
    }

    pub fn at_boundary(&self) -> bool {
        self.step == Step::Idle
    }

    pub fn can_continue(&self) -> bool {
        self.at_boundary() && !self.state.finished()
    }

    fn log(&mut self, kind: EventKind) {
        let seq = self.state.history.len() as u64;
        self.state.history.push(Event {
            seq,
            iteration: self.state.iteration,
            kind,
        });
    }

    fn expect_step(&self, want: &str, ok: bool) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("run is not ready to {want} (at {:?})", self.step)))
        }
    }

    fn recluster(&mut self, seed: u64) -> Result<()> {
        let cfg = &self.state.config;
        let members: Vec<&Instance> = self.state.u.iter().collect();
        let m = cfg.clusters.min(members.len());
        if m == 0 {
            self.state.clustering = None;
            return Ok(());
        }
        let (max_iter, tol) = (cfg.kmeans_max_iter, cfg.kmeans_tol);
        let vectors = self.vectorizer.vectors(&members)?;
        let fit = kmeans_fit(&vectors, m, seed, max_iter, tol)?;
        let summary = ClusterSummary {
            m,
            sizes: fit.sizes(),
            inertia: fit.inertia,
            iterations: fit.iterations,
        };
        let assignment = fit.by_id(members.iter().map(|i| i.id.as_str()));
        self.state.clustering = Some(ClusterState { summary, assignment });
        Ok(())
    }

    /// Step 1: choose this iteration's batch from `U`.
    pub fn select_batch(&mut self) -> Result<Vec<String>> {
        self.expect_step("select", self.step == Step::Idle)?;
        if self.state.finished() {
            return Err(Error::invalid("budget exhausted"));
        }
        let cfg = self.state.config.clone();
        let n = cfg.batch;
        if cfg.strategy == Strategy::ClusterAl && cfg.refresh_clusters && self.state.iteration > 0 {
            self.recluster(cluster_seed(&cfg, self.state.iteration))?;
            let summary = self.state.clustering.as_ref().map(|c| c.summary.clone());
            if let Some(summary) = summary {
                self.log(EventKind::Clustered { summary });
            }
        }
        let sel: Selection = match cfg.strategy {
            Strategy::Random => {
                strategy::select_random(&self.state.u, n, derive_seed(cfg.seed, self.state.iteration, STREAM_SELECT))
            }
            Strategy::Topn => strategy::select_topn(&self.state.u, &self.learner, n)?,
            Strategy::Coreset => {
                let cands: Vec<&Instance> = self.state.u.iter().collect();
                let centers: Vec<&Instance> = self.state.l.iter().collect();
                let cand_vecs = self.vectorizer.vectors(&cands)?;
                let center_vecs = self.vectorizer.vectors(&centers)?;
                let cands: Vec<(String, FeatureVector)> = cands.iter().map(|i| i.id.clone()).zip(cand_vecs).collect();
                strategy::greedy_k_center(&cands, &center_vecs, n)?
            }
            Strategy::ClusterAl => {
                let empty = BTreeMap::new();
                let assignment = self.state.clustering.as_ref().map_or(&empty, |c| &c.assignment);
                strategy::select_cluster_al(&self.state.u, &self.learner, assignment, n)?
            }
        };
        let ids = sel.chosen.clone();
        self.log(EventKind::Selected {
            strategy: cfg.strategy,
            ids: sel.chosen,
            scores: sel.scores,
        });
        self.step = Step::AwaitingLabels(ids.clone());
        Ok(ids)
    }

    /// Step 2: record human labels for exactly the pending ids.
    pub fn apply_labels(&mut self, labels: &[(String, String)]) -> Result<()> {
        let Step::AwaitingLabels(pending) = &self.step else {
            return self.expect_step("accept labels", false);
        };
        let given: HashMap<&str, &str> = labels.iter().map(|(i, l)| (i.as_str(), l.as_str())).collect();
        if given.len() != labels.len() || given.len() != pending.len() || pending.iter().any(|id| !given.contains_key(id.as_str())) {
            return Err(Error::Annotation("labels must cover exactly the pending selection".into()));
        }
        for (_, label) in labels {
            self.state.taxonomy.require(label)?;
        }
        let pending = pending.clone();
        let iteration = self.state.iteration;
        for id in &pending {
            let label = given[id.as_str()];
            promote(&mut self.state.u, &mut self.state.l, id, label, &self.state.taxonomy)?;
            let inst = self.state.l.get_mut(id).expect("just promoted");
            inst.iteration = Some(iteration);
            self.l_keys.insert(dedup_key(&inst.text));
            self.log(EventKind::Labeled {
                id: id.clone(),
                label: label.to_string(),
            });
        }
        self.step = Step::Labeled(pending);
        Ok(())
    }

    fn annotate_pending(&mut self, annotator: &mut dyn Annotator) -> Result<Vec<(String, String)>> {
        let pending = self.pending().map(<[String]>::to_vec).unwrap_or_default();
        let mut labels = Vec::with_capacity(pending.len());
        for id in pending {
            let item = self.state.u.get(&id).expect("pending ids are in U");
            let mut answer = annotator.annotate(item, &self.state.taxonomy, None)?;
            let mut attempts = 0;
            while !self.state.taxonomy.contains(&answer) {
                attempts += 1;
                if !annotator.reprompts() || attempts > 10 {
                    return Err(Error::UnknownLabel(answer));
                }
                answer = annotator.annotate(item, &self.state.taxonomy, Some(&answer))?;
            }
            labels.push((id, answer));
        }
        Ok(labels)
    }

    /// Step 3: ask the LLM for variations of every label from step 2.
    ///
    /// A failed or unparseable generation is logged and skipped; the human
    /// label stays in `L`.
    pub fn generate(&mut self) -> Result<()> {
        let Step::Labeled(ids) = &self.step else {
            return self.expect_step("generate", false);
        };
        let mut ids = ids.clone();
        ids.sort();
        let cfg = self.state.config.clone();
        if cfg.variations > 0 {
            let template = cfg.effective_template()?;
            let mut prompts = Vec::with_capacity(ids.len());
            for id in &ids {
                let inst = self.state.l.get(id).expect("labeled");
                prompts.push(render(&template, inst, inst.label.as_deref().unwrap_or_default(), &self.state.taxonomy)?);
            }
            let responses = complete_all(&self.llm, &prompts);
            let source = if cfg.llm.mock {
                "mock".to_string()
            } else {
                format!("llm:{}", cfg.llm.model)
            };
            for (id, response) in ids.iter().zip(responses) {
                self.absorb_generation(id, response, &cfg, &source)?;
            }
        }
        self.step = Step::Generated;
        Ok(())
    }

    fn absorb_generation(&mut self, parent_id: &str, response: Result<String>, cfg: &RunConfig, source: &str) -> Result<()> {
        let parsed = match response.and_then(|raw| parse_variations(&raw, cfg.variations)) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("generation for `{parent_id}` skipped: {e}");
                self.log(EventKind::GenerationFailed {
                    parent_id: parent_id.to_string(),
                    error: e.to_string(),
                });
                return Ok(());
            }
        };
        let parent = self.state.l.get(parent_id).expect("labeled").clone();
        let label = parent.label.clone().expect("labeled");
        let model: Option<&dyn ProbabilityModel> = match cfg.relation {
            RelationMode::LearnerConsistent => Some(&self.learner),
            RelationMode::Inherit => None,
        };
        let (variations, stats) = filter_variations(
            &parsed.variations,
            &parent,
            &label,
            &self.l_keys,
            cfg.relation,
            model,
            cfg.relation_threshold,
            &self.state.taxonomy,
        )?;
        let mut accepted = Vec::with_capacity(variations.len());
        for (ordinal, v) in variations.into_iter().enumerate() {
            let id = format!("{parent_id}#g{}", ordinal + 1);
            self.l_keys.insert(dedup_key(&v.text));
            self.state.l.insert(Instance {
                id: id.clone(),
                text: v.text,
                label: Some(v.label),
                origin: Origin::Generated,
                parent_id: Some(v.parent_id),
                iteration: Some(self.state.iteration),
                source: source.to_string(),
            })?;
            accepted.push(id);
        }
        self.log(EventKind::Generated {
            parent_id: parent_id.to_string(),
            requested: cfg.variations,
            parsed: parsed.variations.len(),
            accepted,
            deficit: parsed.deficit,
            duplicates: stats.duplicates + stats.empty,
            vetoed: stats.vetoed,
        });
        Ok(())
    }

    /// Step 4: retrain the learner from scratch on all of `L`.
    pub fn retrain(&mut self) -> Result<()> {
        self.expect_step("retrain", self.step == Step::Generated)?;
        let loss = self.learner.fit(&self.state.l, &self.state.taxonomy)?;
        self.state.learner = self.learner.state();
        self.log(EventKind::Retrained {
            train_size: self.state.l.len(),
            loss,
        });
        self.evaluate_monitor()?;
        self.step = Step::Retrained;
        Ok(())
    }

    /// Step 5: charge the batch against the budget and close the iteration.
    pub fn finish_iteration(&mut self) -> Result<()> {
        self.expect_step("finish the iteration", self.step == Step::Retrained)?;
        self.state.remaining_budget -= self.state.config.batch;
        self.state.iteration += 1;
        let (human_total, generated_total) = (self.state.human_count(), self.state.generated_count());
        self.log(EventKind::IterationCompleted {
            remaining_budget: self.state.remaining_budget,
            human_total,
            generated_total,
        });
        self.step = Step::Idle;
        self.state.check_invariants()
    }

    fn evaluate_monitor(&mut self) -> Result<()> {
        let Some(monitor) = &self.state.monitor else {
            return Ok(());
        };
        let m = eval::evaluate_model(&self.learner, monitor, &self.state.taxonomy)?;
        self.log(EventKind::Evaluated {
            split: "monitor".into(),
            accuracy: m.accuracy,
            macro_f1: m.macro_f1,
        });
        Ok(())
    }

    pub fn run_iteration(&mut self, annotator: &mut dyn Annotator) -> Result<()> {
        self.select_batch()?;
        let labels = match self.annotate_pending(annotator) {
            Ok(l) => l,
            Err(e) => {
                // Back out the selection so the run stays at its boundary.
                self.step = Step::Idle;
                self.state.history.pop();
                return Err(e);
            }
        };
        self.apply_labels(&labels)?;
        self.generate()?;
        self.retrain()?;
        self.finish_iteration()
    }

    /// Iterates while at least one full batch of budget remains. Returns
    /// the number of iterations performed.
    pub fn run_until_budget(&mut self, annotator: &mut dyn Annotator) -> Result<usize> {
        self.expect_step("run", self.at_boundary())?;
        if self.state.finished() {
            let reason = format!(
                "remaining budget {} below batch {} or pool empty",
                self.state.remaining_budget, self.state.config.batch
            );
            log::info!("no iteration run: {reason}");
            if !matches!(self.state.history.last(), Some(Event { kind: EventKind::Skipped { .. }, .. })) {
                self.log(EventKind::Skipped { reason });
            }
            return Ok(0);
        }
        let mut done = 0;
        while !self.state.finished() {
            self.run_iteration(annotator)?;
            done += 1;
        }
        Ok(done)
    }

    /// Writes the full state as one JSON document. Only allowed at an
    /// iteration boundary.
    pub fn checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.expect_step("checkpoint", self.at_boundary())?;
        let path = path.as_ref();
        let file = CheckpointRef {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            state: &self.state,
        };
        let raw = serde_json::to_vec(&file)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, raw).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn resume(path: impl AsRef<Path>) -> Result<Run> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Run::from_state(parse_checkpoint(&raw)?)
    }

    /// Rebuilds the live run around a validated state.
    pub fn from_state(state: RunState) -> Result<Run> {
        state.config.check().map_err(|e| Error::Checkpoint(e.to_string()))?;
        state.check_invariants().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let vocab = Arc::new(state.vocabulary.clone());
        let mut learner = ActiveLearner::new(&state.config.learner, vocab.clone(), &state.taxonomy);
        learner.restore(&state.learner, &state.l, &state.taxonomy)?;
        let vectorizer = match &state.config.vectors {
            VectorSpace::Tfidf => Vectorizer::Tfidf(vocab.clone()),
            VectorSpace::Remote(c) => Vectorizer::Remote {
                client: EmbeddingClient::new(c.clone()),
                cache: HashMap::new(),
            },
        };
        Ok(Run {
            llm: LlmClient::new(state.config.llm.clone()),
            l_keys: state.l.texts().map(dedup_key).collect(),
            state,
            vocab,
            learner,
            vectorizer,
            step: Step::Idle,
        })
    }

    /// Writes the event log as JSONL.
    pub fn write_events(&self, path: impl AsRef<Path>) -> Result<()> {
        write_events(&self.state.history, path)
    }
}

fn cluster_seed(cfg: &RunConfig, iteration: u32) -> u64 {
    if iteration == 0 {
        cfg.seed
    } else {
        derive_seed(cfg.seed, iteration, STREAM_CLUSTER)
    }
}

/// Calls the LLM for every prompt with bounded parallelism; results keep
/// the prompts' order.
fn complete_all(llm: &LlmClient, prompts: &[Prompt]) -> Vec<Result<String>> {
    let workers = llm.config().parallelism.min(prompts.len()).max(1);
    if workers == 1 || llm.config().mock {
        return prompts.iter().map(|p| llm.complete(p)).collect();
    }
    let mut slots: Vec<Option<Result<String>>> = (0..prompts.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..prompts.len())
                        .step_by(workers)
                        .map(|i| (i, llm.complete(&prompts[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("generation worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every prompt answered")).collect()
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    schema_version: u32,
    state: &'a RunState,
}

#[derive(Deserialize)]
struct CheckpointFile {
    state: RunState,
}

/// Parses and validates a checkpoint document.
pub fn parse_checkpoint(raw: &str) -> Result<RunState> {
    let value: serde_json::Value =
        serde_json::from_str(raw).map_err(|e| Error::Checkpoint(format!("not a JSON document: {e}")))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(CHECKPOINT_SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(Error::Checkpoint(format!(
                "schema version {v} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})"
            )))
        }
        None => return Err(Error::Checkpoint("missing schema_version".into())),
    }
    let mut de = serde_json::Deserializer::from_str(raw);
    let file: CheckpointFile = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| Error::Checkpoint(format!("invalid field `{}`: {}", e.path(), e.inner())))?;
    file.state
        .check_invariants()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(file.state)
}

pub fn write_events(events: &[Event], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<Event>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
