//! Seeded synthetic corpora with skewed class priors.
//!
//! Every class owns a pseudo-word vocabulary. A document mixes words from
//! its own class, a shared background vocabulary and a neighbouring class,
//! so classes overlap enough that the learner has something to learn.

use std::collections::HashMap;
use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{save_jsonl, Instance, Pool, PoolKind, SplitSet, Taxonomy};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_unlabeled: usize,
    pub n_bootstrap: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Class priors in taxonomy order; normalized on use.
    pub priors: Vec<f64>,
    pub class_vocab: usize,
    pub shared_vocab: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Word-source mix: own class, shared background, neighbouring class.
    pub p_class: f64,
    pub p_shared: f64,
    pub p_neighbour: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_unlabeled: 2000,
            n_bootstrap: 60,
            n_dev: 150,
            n_test: 600,
            priors: vec![0.30, 0.25, 0.20, 0.15, 0.08, 0.02],
            class_vocab: 40,
            shared_vocab: 120,
            min_words: 6,
            max_words: 14,
            p_class: 0.35,
            p_shared: 0.5,
            p_neighbour: 0.15,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<()> {
        if self.priors.len() != taxonomy.len() {
            return Err(Error::invalid(format!(
                "{} priors for {} classes",
                self.priors.len(),
                taxonomy.len()
            )));
        }
        if self.priors.iter().any(|p| !(*p >= 0.0)) || self.priors.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("priors must be non-negative with a positive sum"));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::invalid("need 0 < min_words <= max_words"));
        }
        if self.class_vocab == 0 || self.shared_vocab == 0 {
            return Err(Error::invalid("vocabularies must be non-empty"));
        }
        let mix = [self.p_class, self.p_shared, self.p_neighbour];
        if mix.iter().any(|p| !(*p >= 0.0)) || mix.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("word-source mix must be non-negative with a positive sum"));
        }
        Ok(())
    }
}

/// A generated corpus: the unlabeled pool, its hidden gold labels and
/// labeled bootstrap/dev/test splits.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub taxonomy: Taxonomy,
    pub unlabeled: Pool,
    pub answers: HashMap<String, String>,
    pub bootstrap: Pool,
    pub dev: Pool,
    pub test: Pool,
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "pa", "do", "fe", "gu", "hi", "ja", "ko", "le", "mu", "no",
    "pi", "ra", "se", "tu", "wa",
];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect()
}

fn vocabulary(rng: &mut ChaCha8Rng, size: usize, taken: &mut std::collections::HashSet<String>) -> Vec<String> {
    let mut words = Vec::with_capacity(size);
    while words.len() < size {
        let mut w = pseudo_word(rng);
        if taken.contains(&w) {
            w = format!("{w}{}", taken.len());
        }
        if taken.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

struct Sampler {
    class_words: Vec<Vec<String>>,
    shared: Vec<String>,
    classes: WeightedIndex<f64>,
    source: WeightedIndex<f64>,
    min_words: usize,
    max_words: usize,
}

impl Sampler {
    fn new(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, n_classes: usize) -> Result<Self> {
        let mut taken = std::collections::HashSet::new();
        let class_words = (0..n_classes).map(|_| vocabulary(rng, spec.class_vocab, &mut taken)).collect();
        let shared = vocabulary(rng, spec.shared_vocab, &mut taken);
        let bad = |e| Error::invalid(format!("weights: {e}"));
        Ok(Sampler {
            class_words,
            shared,
            classes: WeightedIndex::new(&spec.priors).map_err(bad)?,
            source: WeightedIndex::new([spec.p_class, spec.p_shared, spec.p_neighbour]).map_err(bad)?,
            min_words: spec.min_words,
            max_words: spec.max_words,
        })
    }

    fn document(&self, rng: &mut ChaCha8Rng) -> (usize, String) {
        let c = self.classes.sample(rng);
        let k = self.class_words.len();
        let neighbour = (c + 1) % k;
        let n = rng.random_range(self.min_words..=self.max_words);
        let mut words: Vec<&str> = Vec::with_capacity(n + 1);
        // At least one class word so every document is attributable.
        words.push(self.class_words[c].choose(rng).expect("non-empty"));
        for _ in 1..n {
            let pool = match self.source.sample(rng) {
                0 => &self.class_words[c],
                1 => &self.shared,
                _ => &self.class_words[neighbour],
            };
            words.push(pool.choose(rng).expect("non-empty"));
        }
        (c, words.join(" "))
    }
}

/// Generates a corpus under `taxonomy`. Ids are unique across all splits.
pub fn generate(spec: &SyntheticSpec, taxonomy: &Taxonomy) -> Result<SyntheticCorpus> {
    spec.validate(taxonomy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sampler = Sampler::new(spec, &mut rng, taxonomy.len())?;
    let classes = taxonomy.classes();

    let mut unlabeled = Pool::new(PoolKind::Unlabeled);
    let mut answers = HashMap::new();
    for i in 0..spec.n_unlabeled {
        let (c, text) = sampler.document(&mut rng);
        let id = format!("u{i:05}");
        answers.insert(id.clone(), classes[c].clone());
        unlabeled.insert(Instance::unlabeled(id, text))?;
    }
    let labeled = |prefix: &str, n: usize, rng: &mut ChaCha8Rng| -> Result<Pool> {
        let mut pool = Pool::new(PoolKind::Labeled);
        for i in 0..n {
            let (c, text) = sampler.document(rng);
            pool.insert(Instance::labeled(format!("{prefix}{i:05}"), text, classes[c].clone()))?;
        }
        Ok(pool)
    };
    let bootstrap = labeled("b", spec.n_bootstrap, &mut rng)?;
    let dev = labeled("d", spec.n_dev, &mut rng)?;
    let test = labeled("t", spec.n_test, &mut rng)?;
    Ok(SyntheticCorpus {
        taxonomy: taxonomy.clone(),
        unlabeled,
        answers,
        bootstrap,
        dev,
        test,
    })
}

impl SyntheticCorpus {
    pub fn splits(&self) -> SplitSet {
        SplitSet {
            bootstrap: self.bootstrap.clone(),
            dev: self.dev.clone(),
            test: self.test.clone(),
            train: Default::default(),
        }
    }

    /// Writes `unlabeled.jsonl`, `answers.jsonl`, `bootstrap.jsonl`,
    /// `dev.jsonl`, `test.jsonl` and `taxonomy.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_jsonl(&self.unlabeled, dir.join("unlabeled.jsonl"))?;
        save_jsonl(&self.bootstrap, dir.join("bootstrap.jsonl"))?;
        save_jsonl(&self.dev, dir.join("dev.jsonl"))?;
        save_jsonl(&self.test, dir.join("test.jsonl"))?;
        self.taxonomy.save(dir.join("taxonomy.json"))?;
        write_answers(&self.unlabeled, &self.answers, dir.join("answers.jsonl"))
    }
}

/// Writes scripted-annotator answers in pool order.
pub fn write_answers(pool: &Pool, answers: &HashMap<String, String>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for id in pool.ids() {
        if let Some(label) = answers.get(id) {
            out.push_str(&serde_json::to_string(&serde_json::json!({ "id": id, "label": label }))?);
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_unlabeled: 500,
            n_test: 100,
            seed: 4,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn sizes_and_determinism() {
        let tax = Taxonomy::safety_default();
        let a = generate(&small(), &tax).unwrap();
        let b = generate(&small(), &tax).unwrap();
        assert_eq!(a.unlabeled, b.unlabeled);
        assert_eq!(a.test, b.test);
        assert_eq!(a.unlabeled.len(), 500);
        assert_eq!(a.answers.len(), 500);
        assert_eq!(a.bootstrap.len(), 60);
        a.splits().check_disjoint().unwrap();
        let c = generate(&SyntheticSpec { seed: 5, ..small() }, &tax).unwrap();
        assert_ne!(a.unlabeled, c.unlabeled);
    }

    #[test]
    fn priors_are_respected() {
        let tax = Taxonomy::safety_default();
        let corpus = generate(&SyntheticSpec::default(), &tax).unwrap();
        let mut counts = vec![0usize; 6];
        for label in corpus.answers.values() {
            counts[tax.index_of(label).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip([0.30, 0.25, 0.20, 0.15, 0.08, 0.02]) {
            let frac = *c as f64 / 2000.0;
            assert!((frac - p).abs() < 0.03, "{counts:?}");
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let tax = Taxonomy::safety_default();
        assert!(generate(&SyntheticSpec { priors: vec![1.0; 3], ..small() }, &tax).is_err());
        assert!(generate(&SyntheticSpec { min_words: 9, max_words: 3, ..small() }, &tax).is_err());
    }

    #[test]
    fn write_round_trip() {
        let tax = Taxonomy::safety_default();
        let corpus = generate(&SyntheticSpec { n_unlabeled: 20, n_bootstrap: 5, n_dev: 5, n_test: 5, ..small() }, &tax).unwrap();
        let dir = tempfile::tempdir().unwrap();
        corpus.write(dir.path()).unwrap();
        let u = crate::corpus::load_jsonl(dir.path().join("unlabeled.jsonl"), &tax).unwrap();
        assert_eq!(u, corpus.unlabeled);
        let ann = crate::orchestrate::ScriptedAnnotator::from_file(dir.path().join("answers.jsonl")).unwrap();
        assert_eq!(ann.answers(), &corpus.answers);
    }
}
