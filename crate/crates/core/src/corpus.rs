//! Data model: taxonomy, instances, pools and named splits.
//!
//! Pools persist as JSONL, one object per line with keys in the fixed order
//! `id, text, label, origin, parent_id, iteration, source`. Absent optional
//! fields are written as `null` so every record has the same shape.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered, case-insensitively unique set of class names.
///
/// The position of a class is its index everywhere else in the crate
/// (probability vectors, confusion matrices, report tables).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyFile", into = "TaxonomyFile")]
pub struct Taxonomy {
    classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TaxonomyFile {
    classes: Vec<String>,
}

impl TryFrom<TaxonomyFile> for Taxonomy {
    type Error = Error;

    fn try_from(file: TaxonomyFile) -> Result<Self> {
        Taxonomy::new(file.classes)
    }
}

impl From<Taxonomy> for TaxonomyFile {
    fn from(t: Taxonomy) -> Self {
        TaxonomyFile { classes: t.classes }
    }
}

/// The six safety-scenario classes shipped as the default taxonomy.
pub const SAFETY_CLASSES: [&str; 6] = [
    "Self-Harm",
    "Medical-Advice",
    "Legal-Advice",
    "Financial-Advice",
    "Emergency-Situation",
    "Not-Harmful",
];

impl Taxonomy {
    pub fn new<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        if classes.is_empty() {
            return Err(Error::Taxonomy("no classes".into()));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if c.trim().is_empty() {
                return Err(Error::Taxonomy("empty class name".into()));
            }
            if !seen.insert(c.to_lowercase()) {
                return Err(Error::Taxonomy(format!("duplicate class `{c}`")));
            }
        }
        Ok(Taxonomy { classes })
    }

    pub fn safety_default() -> Self {
        Taxonomy {
            classes: SAFETY_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw = serde_json::to_string_pretty(self)?;
        std::fs::write(path, raw + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    /// Checks membership, producing the crate's unknown-label error.
    pub fn require(&self, label: &str) -> Result<usize> {
        self.index_of(label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy::safety_default()
    }
}

/// Where a labeled instance came from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Bootstrap,
    Human,
    Generated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub origin: Origin,
    #[serde(default)]
    pub parent_id: Option<String>,
    #[serde(default)]
    pub iteration: Option<u32>,
    #[serde(default)]
    pub source: String,
}

impl Instance {
    pub fn unlabeled(id: impl Into<String>, text: impl Into<String>) -> Self {
        Instance {
            id: id.into(),
            text: text.into(),
            label: None,
            origin: Origin::Bootstrap,
            parent_id: None,
            iteration: None,
            source: String::new(),
        }
    }

    pub fn labeled(id: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        Instance {
            label: Some(label.into()),
            ..Instance::unlabeled(id, text)
        }
    }

    pub fn is_labeled(&self) -> bool {
        self.label.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Unlabeled,
    Labeled,
}

/// An insertion-ordered collection of instances with unique ids.
///
/// `Unlabeled` pools hold only instances without a label, `Labeled` pools
/// only instances with one. Iteration order is insertion order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoolRepr", into = "PoolRepr")]
pub struct Pool {
    kind: PoolKind,
    members: IndexMap<String, Instance>,
}

#[derive(Serialize, Deserialize)]
struct PoolRepr {
    kind: PoolKind,
    members: Vec<Instance>,
}

impl TryFrom<PoolRepr> for Pool {
    type Error = Error;

    fn try_from(r: PoolRepr) -> Result<Self> {
        Pool::from_instances(r.kind, r.members)
    }
}

impl From<Pool> for PoolRepr {
    fn from(p: Pool) -> Self {
        PoolRepr {
            kind: p.kind,
            members: p.members.into_values().collect(),
        }
    }
}

impl Pool {
    pub fn new(kind: PoolKind) -> Self {
        Pool {
            kind,
            members: IndexMap::new(),
        }
    }

    pub fn from_instances(kind: PoolKind, instances: impl IntoIterator<Item = Instance>) -> Result<Self> {
        let mut pool = Pool::new(kind);
        for inst in instances {
            pool.insert(inst)?;
        }
        Ok(pool)
    }

    pub fn kind(&self) -> PoolKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.members.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.members.get(id)
    }

    pub(crate) fn get_mut(&mut self, id: &str) -> Option<&mut Instance> {
        self.members.get_mut(id)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &Instance> + '_ {
        self.members.values()
    }

    pub fn ids(&self) -> impl ExactSizeIterator<Item = &str> + '_ {
        self.members.keys().map(String::as_str)
    }

    pub fn texts(&self) -> impl ExactSizeIterator<Item = &str> + '_ {
        self.members.values().map(|i| i.text.as_str())
    }

    /// Appends an instance, enforcing id uniqueness and the kind's label rule.
    pub fn insert(&mut self, inst: Instance) -> Result<()> {
        if inst.text.is_empty() {
            return Err(Error::invalid(format!("instance `{}` has empty text", inst.id)));
        }
        match (self.kind, inst.label.is_some()) {
            (PoolKind::Unlabeled, true) => {
                return Err(Error::invalid(format!(
                    "instance `{}` carries a label but the pool is unlabeled",
                    inst.id
                )))
            }
            (PoolKind::Labeled, false) => {
                return Err(Error::invalid(format!(
                    "instance `{}` has no label but the pool is labeled",
                    inst.id
                )))
            }
            _ => {}
        }
        if self.members.contains_key(&inst.id) {
            return Err(Error::DuplicateId(inst.id));
        }
        self.members.insert(inst.id.clone(), inst);
        Ok(())
    }

    /// Removes an instance, preserving the order of the remaining members.
    pub fn remove(&mut self, id: &str) -> Option<Instance> {
        self.members.shift_remove(id)
    }

    /// Checks every label against the taxonomy and every generated
    /// instance's parent link within this pool.
    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<()> {
        for inst in self.members.values() {
            if let Some(label) = &inst.label {
                taxonomy.require(label)?;
            }
            if inst.origin == Origin::Generated {
                let parent = inst
                    .parent_id
                    .as_deref()
                    .and_then(|p| self.members.get(p))
                    .ok_or_else(|| {
                        Error::Invariant(format!("generated instance `{}` has no resolvable parent", inst.id))
                    })?;
                if parent.origin == Origin::Generated {
                    return Err(Error::Invariant(format!(
                        "generated instance `{}` descends from another generated instance",
                        inst.id
                    )));
                }
            } else if inst.parent_id.is_some() {
                return Err(Error::Invariant(format!(
                    "non-generated instance `{}` has a parent",
                    inst.id
                )));
            }
        }
        Ok(())
    }

    /// Per-class label counts in taxonomy order.
    pub fn class_counts(&self, taxonomy: &Taxonomy) -> Vec<u64> {
        let mut counts = vec![0u64; taxonomy.len()];
        for inst in self.members.values() {
            if let Some(i) = inst.label.as_deref().and_then(|l| taxonomy.index_of(l)) {
                counts[i] += 1;
            }
        }
        counts
    }
}

/// Reads a pool from JSONL, inferring its kind from label presence.
///
/// Empty files yield an empty unlabeled pool. Files mixing labeled and
/// unlabeled records are rejected.
pub fn load_jsonl(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Pool> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut instances = Vec::new();
    let mut kind: Option<(PoolKind, usize)> = None;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: Instance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if let Some(label) = &inst.label {
            taxonomy.require(label).map_err(|_| Error::Parse {
                line: lineno,
                message: format!("unknown label `{label}`"),
            })?;
        }
        let this_kind = if inst.is_labeled() {
            PoolKind::Labeled
        } else {
            PoolKind::Unlabeled
        };
        match kind {
            None => kind = Some((this_kind, lineno)),
            Some((k, first)) if k != this_kind => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("mixed labeled and unlabeled records (first record on line {first} differs)"),
                })
            }
            _ => {}
        }
        instances.push((lineno, inst));
    }
    let kind = kind.map_or(PoolKind::Unlabeled, |(k, _)| k);
    let mut pool = Pool::new(kind);
    for (lineno, inst) in instances {
        pool.insert(inst).map_err(|e| match e {
            Error::DuplicateId(id) => Error::Parse {
                line: lineno,
                message: format!("duplicate id `{id}`"),
            },
            other => Error::Parse {
                line: lineno,
                message: other.to_string(),
            },
        })?;
    }
    Ok(pool)
}

/// Writes one record per line in the canonical key order.
pub fn save_jsonl(pool: &Pool, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for inst in pool.iter() {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Moves `id` from the unlabeled pool into the labeled pool as a human label.
pub fn promote(u: &mut Pool, l: &mut Pool, id: &str, label: &str, taxonomy: &Taxonomy) -> Result<()> {
    taxonomy.require(label)?;
    if l.contains(id) {
        return Err(Error::AlreadyLabeled(id.to_string()));
    }
    let mut inst = u.remove(id).ok_or_else(|| Error::NotFound(id.to_string()))?;
    inst.label = Some(label.to_string());
    inst.origin = Origin::Human;
    inst.parent_id = None;
    l.insert(inst)
}

/// Case-folded, whitespace-collapsed form used for duplicate detection.
pub fn dedup_key(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Bootstrap, development and test pools plus one acquired train split per
/// strategy name.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitSet {
    pub bootstrap: Pool,
    pub dev: Pool,
    pub test: Pool,
    #[serde(default)]
    pub train: BTreeMap<String, Pool>,
}

impl SplitSet {
    /// Fails if any id appears in two different splits.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
        let named = [("bootstrap", &self.bootstrap), ("dev", &self.dev), ("test", &self.test)]
            .into_iter()
            .chain(self.train.iter().map(|(k, v)| (k.as_str(), v)));
        for (name, pool) in named {
            for id in pool.ids() {
                if let Some(prev) = seen.insert(id, name) {
                    return Err(Error::Invariant(format!("id `{id}` appears in both `{prev}` and `{name}`")));
                }
            }
        }
        Ok(())
    }
}
