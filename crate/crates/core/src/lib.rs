//! Active-learner guided generation of balanced text-classification datasets.
//!
//! The pipeline clusters an unlabeled pool, asks a human to label the most
//! uncertain instance(s) of each cluster, expands every human label into `k`
//! label-preserving variations produced by a chat-completions LLM, retrains a
//! probabilistic learner on the grown labeled set and repeats until the
//! labeling budget is spent.
//!
//! Module map:
//!
//! * [`corpus`] instances, taxonomy, pools and their JSONL persistence
//! * [`featurize`] TF-IDF vectors and the remote embedding client
//! * [`learner`] native softmax regression and the model-server client
//! * [`cluster`] k-means with k-means++ seeding
//! * [`strategy`] random, top-N entropy, coreset and cluster-AL acquisition
//! * [`generate`] prompt templates, the LLM client, parsing and filtering
//! * [`orchestrate`] the budgeted acquisition loop, checkpoints, event log
//! * [`eval`] classification metrics, bias statistics, agreement, reports
//! * [`service`] REST facade for live runs
//! * [`experiment`] multi-strategy, multi-seed experiment matrices
//! * [`synthetic`] seeded synthetic corpora for offline experiments
//! * [`cli`] the `alguide` command line

pub mod cli;
pub mod cluster;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod featurize;
pub mod generate;
pub mod http;
pub mod learner;
pub mod orchestrate;
pub mod service;
pub mod strategy;
pub mod synthetic;

pub use error::{Error, Result};
pub use http::RetryPolicy;
