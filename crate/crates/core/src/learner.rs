//! The active learner: anything that fits on the labeled pool and emits
//! per-class probabilities.
//!
//! Two backends exist. [`NativeLearner`] is multinomial logistic regression
//! over TF-IDF features trained by full-batch gradient descent.
//! [`RemoteLearner`] speaks the model-server protocol:
//!
//! * `POST /train` `{"instances":[{"text","label"}..],"classes":[..],"config":{..}}`
//! * `POST /predict_proba` `{"texts":[..]}` → `{"probs":[[..],..]}`
//! * `POST /reset` restores the server's base checkpoint

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Pool, Taxonomy};
use crate::error::{Error, Result};
use crate::featurize::{FeatureVector, Vocabulary};
use crate::http::{JsonClient, RetryPolicy};

/// A probability distribution over the taxonomy, in taxonomy order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassProbabilities(Vec<f64>);

impl ClassProbabilities {
    /// Deviations of the row sum up to this are renormalized silently.
    pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;
    /// Deviations beyond this are rejected.
    pub const REJECT_TOLERANCE: f64 = 1e-3;

    pub fn uniform(n: usize) -> Self {
        ClassProbabilities(vec![1.0 / n as f64; n])
    }

    /// Numerically stable softmax.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        ClassProbabilities(exps.into_iter().map(|e| e / total).collect())
    }

    /// Validates a row received over the wire and renormalizes it.
    pub fn from_untrusted(mut probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Protocol("invalid distribution: empty row".into()));
        }
        if probs
            .iter()
            .any(|p| !p.is_finite() || *p < -Self::RENORMALIZE_TOLERANCE || *p > 1.0 + Self::REJECT_TOLERANCE)
        {
            return Err(Error::Protocol(format!("invalid distribution: {probs:?}")));
        }
        probs.iter_mut().for_each(|p| *p = p.max(0.0));
        let sum: f64 = probs.iter().sum();
        let dev = (sum - 1.0).abs();
        if dev > Self::REJECT_TOLERANCE {
            return Err(Error::Protocol(format!("invalid distribution: row sums to {sum}")));
        }
        if dev > Self::RENORMALIZE_TOLERANCE {
            log::warn!("renormalizing probability row summing to {sum}");
        }
        probs.iter_mut().for_each(|p| *p /= sum);
        Ok(ClassProbabilities(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }
}

/// Anything that can score texts with class probabilities.
pub trait ProbabilityModel {
    fn predict_texts(&self, texts: &[&str]) -> Result<Vec<ClassProbabilities>>;
}

/// Weights `[n_classes × n_features]` (row-major) plus a bias per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub n_classes: usize,
    pub n_features: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(n_classes: usize, n_features: usize) -> Self {
        LinearModel {
            n_classes,
            n_features,
            weights: vec![0.0; n_classes * n_features],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn logits(&self, x: &FeatureVector) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                let row = &self.weights[c * self.n_features..(c + 1) * self.n_features];
                self.bias[c] + x.dot_dense(row)
            })
            .collect()
    }

    pub fn predict_proba(&self, x: &FeatureVector) -> Result<ClassProbabilities> {
        if x.dim() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: x.dim(),
            });
        }
        Ok(ClassProbabilities::from_logits(&self.logits(x)))
    }

    fn l2_penalty(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    fn axpy(&self, alpha: f64, dir: &LinearModel) -> LinearModel {
        LinearModel {
            n_classes: self.n_classes,
            n_features: self.n_features,
            weights: self.weights.iter().zip(&dir.weights).map(|(w, d)| w + alpha * d).collect(),
            bias: self.bias.iter().zip(&dir.bias).map(|(b, d)| b + alpha * d).collect(),
        }
    }
}

/// Mean cross-entropy over `batch` plus `(λ/2)‖W‖²` (bias unregularized),
/// with its exact gradient.
pub fn loss_and_gradient(model: &LinearModel, batch: &[(&FeatureVector, usize)], l2_lambda: f64) -> (f64, LinearModel) {
    let mut grad = LinearModel::zeros(model.n_classes, model.n_features);
    let n = batch.len().max(1) as f64;
    let mut ce = 0.0;
    for &(x, y) in batch {
        let logits = model.logits(x);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        ce += log_z - logits[y];
        for c in 0..model.n_classes {
            let p = (logits[c] - log_z).exp();
            let residual = (p - if c == y { 1.0 } else { 0.0 }) / n;
            grad.bias[c] += residual;
            let row = &mut grad.weights[c * model.n_features..(c + 1) * model.n_features];
            for (i, v) in x.iter() {
                row[i] += residual * v;
            }
        }
    }
    for (g, w) in grad.weights.iter_mut().zip(&model.weights) {
        *g += l2_lambda * w;
    }
    (ce / n + 0.5 * l2_lambda * model.l2_penalty(), grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NativeLearnerParams {
    pub l2_lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Kept for configuration symmetry; zero initialization and full-batch
    /// descent make training independent of it.
    pub seed: u64,
}

impl Default for NativeLearnerParams {
    fn default() -> Self {
        NativeLearnerParams {
            l2_lambda: 1e-3,
            learning_rate: 2.0,
            epochs: 150,
            seed: 0,
        }
    }
}

impl NativeLearnerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::invalid("l2_lambda must be finite and >= 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        Ok(())
    }
}

/// Softmax regression fitted on a labeled pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NativeLearner {
    pub model: LinearModel,
    /// Training loss before the first step and after every epoch.
    pub loss_trace: Vec<f64>,
}

impl NativeLearner {
    /// The all-zero model, which predicts the uniform distribution.
    pub fn untrained(n_classes: usize, n_features: usize) -> Self {
        NativeLearner {
            model: LinearModel::zeros(n_classes, n_features),
            loss_trace: Vec::new(),
        }
    }

    pub fn predict_proba(&self, x: &FeatureVector) -> Result<ClassProbabilities> {
        self.model.predict_proba(x)
    }
}

/// Trains from zero weights by full-batch gradient descent.
///
/// A step that would raise the loss is retried with half the learning rate,
/// so the loss trace never increases.
pub fn fit_native(
    l: &Pool,
    vocab: &Vocabulary,
    taxonomy: &Taxonomy,
    params: &NativeLearnerParams,
) -> Result<NativeLearner> {
    params.validate()?;
    if l.is_empty() {
        return Err(Error::invalid("cannot train on an empty labeled pool"));
    }
    let mut xs = Vec::with_capacity(l.len());
    for inst in l.iter() {
        let label = inst
            .label
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("instance `{}` is unlabeled", inst.id)))?;
        xs.push((vocab.transform(&inst.text), taxonomy.require(label)?));
    }
    let batch: Vec<(&FeatureVector, usize)> = xs.iter().map(|(x, y)| (x, *y)).collect();
    Ok(fit_examples(&batch, taxonomy.len(), vocab.len(), params))
}

pub(crate) fn fit_examples(
    batch: &[(&FeatureVector, usize)],
    n_classes: usize,
    n_features: usize,
    params: &NativeLearnerParams,
) -> NativeLearner {
    let mut model = LinearModel::zeros(n_classes, n_features);
    let (mut loss, mut grad) = loss_and_gradient(&model, batch, params.l2_lambda);
    let mut trace = vec![loss];
    let mut lr = params.learning_rate;
    'epochs: for _ in 0..params.epochs {
        loop {
            let candidate = model.axpy(-lr, &grad);
            let (c_loss, c_grad) = loss_and_gradient(&candidate, batch, params.l2_lambda);
            if c_loss <= loss {
                let converged = loss - c_loss <= 1e-12 * loss.max(1.0);
                model = candidate;
                loss = c_loss;
                grad = c_grad;
                trace.push(loss);
                if converged {
                    break 'epochs;
                }
                break;
            }
            lr *= 0.5;
            if lr < 1e-12 {
                break 'epochs;
            }
        }
    }
    NativeLearner {
        model,
        loss_trace: trace,
    }
}

/// A fitted native learner bundled with the vocabulary it was trained on.
#[derive(Clone, Debug)]
pub struct NativeTextModel {
    pub vocab: Arc<Vocabulary>,
    pub learner: NativeLearner,
}

impl ProbabilityModel for NativeTextModel {
    fn predict_texts(&self, texts: &[&str]) -> Result<Vec<ClassProbabilities>> {
        texts
            .iter()
            .map(|t| self.learner.predict_proba(&self.vocab.transform(t)))
            .collect()
    }
}

/// Hyperparameters forwarded to a model server on every `/train` call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteTrainConfig {
    #[serde(default = "default_remote_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_remote_batch")]
    pub batch_size: u32,
    #[serde(default = "default_remote_max_len")]
    pub max_length: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

fn default_remote_lr() -> f64 {
    2e-5
}

fn default_remote_batch() -> u32 {
    16
}

fn default_remote_max_len() -> u32 {
    50
}

impl Default for RemoteTrainConfig {
    fn default() -> Self {
        RemoteTrainConfig {
            learning_rate: default_remote_lr(),
            batch_size: default_remote_batch(),
            max_length: default_remote_max_len(),
            seed: 0,
            extra: BTreeMap::new(),
        }
    }
}

/// Client for the model-server protocol.
pub struct RemoteLearner {
    base_url: String,
    http: JsonClient,
    n_classes: usize,
}

#[derive(Deserialize)]
struct PredictResponse {
    probs: Vec<Vec<f64>>,
}

impl RemoteLearner {
    pub fn new(base_url: impl Into<String>, n_classes: usize, retry: RetryPolicy, token: Option<String>) -> Self {
        RemoteLearner {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            http: JsonClient::new(retry, token),
            n_classes,
        }
    }

    fn url(&self, route: &str) -> String {
        format!("{}/{route}", self.base_url)
    }

    /// The exact `/train` body for a pool.
    pub fn train_request(l: &Pool, taxonomy: &Taxonomy, config: &RemoteTrainConfig) -> serde_json::Value {
        let instances: Vec<_> = l
            .iter()
            .map(|i| serde_json::json!({ "text": i.text, "label": i.label }))
            .collect();
        serde_json::json!({
            "instances": instances,
            "classes": taxonomy.classes(),
            "config": config,
        })
    }

    pub fn train(&self, l: &Pool, taxonomy: &Taxonomy, config: &RemoteTrainConfig) -> Result<String> {
        let body = Self::train_request(l, taxonomy, config);
        self.http.post_ok(&self.url("train"), &body)?;
        Ok(fingerprint(&body))
    }

    pub fn reset(&self) -> Result<()> {
        self.http.post_ok(&self.url("reset"), &serde_json::json!({}))?;
        Ok(())
    }

    pub fn predict(&self, texts: &[&str]) -> Result<Vec<ClassProbabilities>> {
        let value = self
            .http
            .post_ok(&self.url("predict_proba"), &serde_json::json!({ "texts": texts }))?;
        let resp: PredictResponse = serde_json::from_value(value)
            .map_err(|e| Error::Protocol(format!("malformed predict_proba response: {e}")))?;
        if resp.probs.len() != texts.len() {
            return Err(Error::Protocol(format!(
                "length mismatch: sent {} texts, received {} rows",
                texts.len(),
                resp.probs.len()
            )));
        }
        resp.probs
            .into_iter()
            .map(|row| {
                if row.len() != self.n_classes {
                    return Err(Error::Protocol(format!(
                        "invalid distribution: expected {} classes, got {}",
                        self.n_classes,
                        row.len()
                    )));
                }
                ClassProbabilities::from_untrusted(row)
            })
            .collect()
    }
}

impl ProbabilityModel for RemoteLearner {
    fn predict_texts(&self, texts: &[&str]) -> Result<Vec<ClassProbabilities>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        self.predict(texts)
    }
}

pub(crate) fn fingerprint(value: &serde_json::Value) -> String {
    let digest = Sha256::digest(value.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Which learner a run uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Native {
        #[serde(default)]
        params: NativeLearnerParams,
    },
    Remote {
        endpoint: String,
        #[serde(default)]
        config: RemoteTrainConfig,
        #[serde(default)]
        retry: RetryPolicy,
        #[serde(default = "default_model_token_env")]
        token_env: String,
    },
}

fn default_model_token_env() -> String {
    "ALGUIDE_MODEL_SERVER_TOKEN".into()
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec::Native {
            params: NativeLearnerParams::default(),
        }
    }
}

/// Persistable learner state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerState {
    Native { model: LinearModel },
    Remote { fingerprint: String },
}

/// A learner bound to a run's taxonomy and vocabulary.
pub enum ActiveLearner {
    Native {
        params: NativeLearnerParams,
        model: NativeTextModel,
    },
    Remote {
        client: RemoteLearner,
        config: RemoteTrainConfig,
        fingerprint: Option<String>,
    },
}

impl ActiveLearner {
    pub fn new(spec: &LearnerSpec, vocab: Arc<Vocabulary>, taxonomy: &Taxonomy) -> Self {
        match spec {
            LearnerSpec::Native { params } => ActiveLearner::Native {
                params: params.clone(),
                model: NativeTextModel {
                    learner: NativeLearner::untrained(taxonomy.len(), vocab.len()),
                    vocab,
                },
            },
            LearnerSpec::Remote {
                endpoint,
                config,
                retry,
                token_env,
            } => ActiveLearner::Remote {
                client: RemoteLearner::new(
                    endpoint.clone(),
                    taxonomy.len(),
                    retry.clone(),
                    crate::http::bearer_from_env(token_env),
                ),
                config: config.clone(),
                fingerprint: None,
            },
        }
    }

    /// Retrains from scratch on `l`; returns the final training loss when
    /// the backend reports one.
    pub fn fit(&mut self, l: &Pool, taxonomy: &Taxonomy) -> Result<Option<f64>> {
        match self {
            ActiveLearner::Native { params, model } => {
                let fitted = fit_native(l, &model.vocab, taxonomy, params)?;
                let loss = fitted.loss_trace.last().copied();
                model.learner = fitted;
                Ok(loss)
            }
            ActiveLearner::Remote {
                client,
                config,
                fingerprint,
            } => {
                *fingerprint = Some(client.train(l, taxonomy, config)?);
                Ok(None)
            }
        }
    }

    pub fn state(&self) -> LearnerState {
        match self {
            ActiveLearner::Native { model, .. } => LearnerState::Native {
                model: model.learner.model.clone(),
            },
            ActiveLearner::Remote { fingerprint, .. } => LearnerState::Remote {
                fingerprint: fingerprint.clone().unwrap_or_default(),
            },
        }
    }

    /// Restores persisted state. Remote learners are re-trained on `l`
    /// and the resulting fingerprint must match the stored one.
    pub fn restore(&mut self, state: &LearnerState, l: &Pool, taxonomy: &Taxonomy) -> Result<()> {
        match (self, state) {
            (ActiveLearner::Native { model, .. }, LearnerState::Native { model: stored }) => {
                if stored.n_classes != taxonomy.len() || stored.n_features != model.vocab.len() {
                    return Err(Error::Checkpoint("learner shape does not match vocabulary".into()));
                }
                model.learner = NativeLearner {
                    model: stored.clone(),
                    loss_trace: Vec::new(),
                };
                Ok(())
            }
            (learner @ ActiveLearner::Remote { .. }, LearnerState::Remote { fingerprint: stored }) => {
                learner.fit(l, taxonomy)?;
                if let ActiveLearner::Remote { fingerprint, .. } = learner {
                    if fingerprint.as_deref() != Some(stored.as_str()) {
                        return Err(Error::Checkpoint("remote training set fingerprint mismatch".into()));
                    }
                }
                Ok(())
            }
            _ => Err(Error::Checkpoint("learner kind does not match configuration".into())),
        }
    }
}

impl ProbabilityModel for ActiveLearner {
    fn predict_texts(&self, texts: &[&str]) -> Result<Vec<ClassProbabilities>> {
        match self {
            ActiveLearner::Native { model, .. } => model.predict_texts(texts),
            ActiveLearner::Remote { client, .. } => client.predict_texts(texts),
        }
    }
}
