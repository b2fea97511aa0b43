//! Acquisition strategies: which unlabeled instances go to the annotator.
//!
//! Every selector is deterministic. Ties are broken by lexicographic
//! instance id (the smaller id wins a slot).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Pool;
use crate::error::{Error, Result};
use crate::featurize::{distance, FeatureVector};
use crate::learner::{ClassProbabilities, ProbabilityModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Topn,
    Coreset,
    ClusterAl,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Random, Strategy::Topn, Strategy::Coreset, Strategy::ClusterAl];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Topn => "topn",
            Strategy::Coreset => "coreset",
            Strategy::ClusterAl => "cluster_al",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`; expected one of random, topn, coreset, cluster_al")))
    }
}

/// Chosen ids in selection order, with the score that earned each slot
/// (entropy or covering distance; empty for random sampling).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: Vec<String>,
    pub scores: BTreeMap<String, f64>,
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &ClassProbabilities) -> f64 {
    -p.as_slice()
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Descending score, then ascending id.
fn by_score_desc(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Uniform sample without replacement.
pub fn select_random(u: &Pool, n: usize, seed: u64) -> Selection {
    let ids: Vec<&str> = u.ids().collect();
    let n = n.min(ids.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, ids.len(), n)
        .into_iter()
        .map(|i| ids[i].to_string())
        .collect();
    Selection {
        chosen,
        scores: BTreeMap::new(),
    }
}

/// Entropy of every pool member under `model`, in pool order.
pub fn entropy_scores(u: &Pool, model: &dyn ProbabilityModel) -> Result<Vec<(String, f64)>> {
    let texts: Vec<&str> = u.texts().collect();
    let probs = model.predict_texts(&texts)?;
    if probs.len() != texts.len() {
        return Err(Error::Protocol("model returned the wrong number of rows".into()));
    }
    Ok(u.ids().map(String::from).zip(probs.iter().map(entropy)).collect())
}

/// The `n` highest-scoring ids.
pub fn rank_top(scores: &[(String, f64)], n: usize) -> Selection {
    let mut sorted = scores.to_vec();
    sorted.sort_by(by_score_desc);
    sorted.truncate(n);
    Selection {
        chosen: sorted.iter().map(|(id, _)| id.clone()).collect(),
        scores: sorted.into_iter().collect(),
    }
}

pub fn select_topn(u: &Pool, model: &dyn ProbabilityModel, n: usize) -> Result<Selection> {
    Ok(rank_top(&entropy_scores(u, model)?, n))
}

/// Greedy k-center with the labeled vectors as fixed centers.
///
/// Each round picks the candidate farthest from every center chosen so far
/// (labeled vectors included); its score is that covering distance.
pub fn greedy_k_center(candidates: &[(String, FeatureVector)], centers: &[FeatureVector], n: usize) -> Result<Selection> {
    if centers.is_empty() {
        return Err(Error::invalid("coreset selection needs at least one labeled center"));
    }
    let mut min_dist: Vec<f64> = candidates
        .iter()
        .map(|(_, v)| centers.iter().map(|c| distance(v, c)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut taken = vec![false; candidates.len()];
    let mut sel = Selection::default();
    for _ in 0..n.min(candidates.len()) {
        let mut best: Option<usize> = None;
        for i in 0..candidates.len() {
            if taken[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    let better = min_dist[i] > min_dist[b]
                        || (min_dist[i] == min_dist[b] && candidates[i].0 < candidates[b].0);
                    Some(if better { i } else { b })
                }
            };
        }
        let pick = best.expect("fewer picks than candidates");
        taken[pick] = true;
        let (id, v) = &candidates[pick];
        sel.chosen.push(id.clone());
        sel.scores.insert(id.clone(), min_dist[pick]);
        for (i, (_, w)) in candidates.iter().enumerate() {
            if !taken[i] {
                min_dist[i] = min_dist[i].min(distance(v, w));
            }
        }
    }
    Ok(sel)
}

/// Coreset selection over pools, vectorizing with `vectorize`.
pub fn select_coreset(
    u: &Pool,
    l: &Pool,
    n: usize,
    vectorize: impl Fn(&str) -> FeatureVector,
) -> Result<Selection> {
    let candidates: Vec<(String, FeatureVector)> = u.iter().map(|i| (i.id.clone(), vectorize(&i.text))).collect();
    let centers: Vec<FeatureVector> = l.iter().map(|i| vectorize(&i.text)).collect();
    greedy_k_center(&candidates, &centers, n)
}

/// Per-cluster quota of maximum-entropy instances.
///
/// With `m'` clusters that still have members, every cluster contributes up
/// to `ceil(n / m')` of its highest-entropy members. An overfull batch drops
/// its lowest-entropy picks; a short one is topped up from the rest of the
/// pool in descending entropy order. Ids absent from `cluster_of` are only
/// eligible for the top-up.
pub fn cluster_quota(scores: &[(String, f64)], cluster_of: &BTreeMap<String, usize>, n: usize) -> Selection {
    let n = n.min(scores.len());
    if n == 0 {
        return Selection::default();
    }
    let mut groups: BTreeMap<usize, Vec<(String, f64)>> = BTreeMap::new();
    for (id, s) in scores {
        if let Some(&c) = cluster_of.get(id) {
            groups.entry(c).or_default().push((id.clone(), *s));
        }
    }
    let mut picked: Vec<(String, f64)> = Vec::new();
    if !groups.is_empty() {
        let quota = n.div_ceil(groups.len());
        for members in groups.values_mut() {
            members.sort_by(by_score_desc);
            picked.extend(members.iter().take(quota).cloned());
        }
    }
    picked.sort_by(by_score_desc);
    picked.truncate(n);
    if picked.len() < n {
        let have: BTreeSet<String> = picked.iter().map(|(id, _)| id.clone()).collect();
        let mut rest: Vec<(String, f64)> = scores.iter().filter(|(id, _)| !have.contains(id)).cloned().collect();
        rest.sort_by(by_score_desc);
        picked.extend(rest.into_iter().take(n - have.len()));
        picked.sort_by(by_score_desc);
    }
    Selection {
        chosen: picked.iter().map(|(id, _)| id.clone()).collect(),
        scores: picked.into_iter().collect(),
    }
}

pub fn select_cluster_al(
    u: &Pool,
    model: &dyn ProbabilityModel,
    cluster_of: &BTreeMap<String, usize>,
    n: usize,
) -> Result<Selection> {
    Ok(cluster_quota(&entropy_scores(u, model)?, cluster_of, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Instance, PoolKind};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use super::Strategy;

    fn probs(v: &[f64]) -> ClassProbabilities {
        ClassProbabilities::from_untrusted(v.to_vec()).unwrap()
    }

    #[test]
    fn entropy_values() {
        assert_abs_diff_eq!(entropy(&ClassProbabilities::uniform(6)), 6f64.ln(), epsilon = 1e-12);
        assert_eq!(entropy(&probs(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0])), 0.0);
        assert_abs_diff_eq!(entropy(&probs(&[0.5, 0.5, 0.0, 0.0, 0.0, 0.0])), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn strategy_names_roundtrip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        let err = "bald".parse::<Strategy>().unwrap_err().to_string();
        assert!(err.contains("cluster_al") && err.contains("coreset"));
    }

    fn u_pool(n: usize) -> Pool {
        Pool::from_instances(PoolKind::Unlabeled, (0..n).map(|i| Instance::unlabeled(format!("u{i:03}"), format!("t{i}"))))
            .unwrap()
    }

    #[test]
    fn random_is_seeded() {
        let u = u_pool(100);
        let a = select_random(&u, 10, 5);
        assert_eq!(a, select_random(&u, 10, 5));
        assert_eq!(a.chosen.len(), 10);
        let all = select_random(&u, 500, 1);
        let set: BTreeSet<_> = all.chosen.iter().collect();
        assert_eq!(set.len(), 100);
    }

    struct Fixed(BTreeMap<String, ClassProbabilities>);

    impl ProbabilityModel for Fixed {
        fn predict_texts(&self, texts: &[&str]) -> Result<Vec<ClassProbabilities>> {
            Ok(texts.iter().map(|t| self.0[*t].clone()).collect())
        }
    }

    #[test]
    fn topn_prefers_uncertain() {
        let u = Pool::from_instances(
            PoolKind::Unlabeled,
            [Instance::unlabeled("a", "a"), Instance::unlabeled("b", "b"), Instance::unlabeled("c", "c")],
        )
        .unwrap();
        let model = Fixed(BTreeMap::from([
            ("a".into(), probs(&[1.0, 0.0])),
            ("b".into(), probs(&[0.5, 0.5])),
            ("c".into(), probs(&[0.0, 1.0])),
        ]));
        assert_eq!(select_topn(&u, &model, 1).unwrap().chosen, vec!["b"]);
        assert_eq!(select_topn(&u, &model, 3).unwrap().chosen, vec!["b", "a", "c"]);
    }

    fn p1(x: f64) -> FeatureVector {
        FeatureVector::from_pairs(1, [(0, x)]).unwrap()
    }

    #[test]
    fn coreset_one_dimensional() {
        let cands = vec![("p1".to_string(), p1(1.0)), ("p2".to_string(), p1(2.0)), ("p10".to_string(), p1(10.0))];
        let sel = greedy_k_center(&cands, &[p1(0.0)], 2).unwrap();
        assert_eq!(sel.chosen, vec!["p10", "p2"]);
        assert_eq!(sel.scores["p10"], 10.0);
        assert_eq!(sel.scores["p2"], 2.0);
        assert!(greedy_k_center(&cands, &[], 1).is_err());
    }

    #[test]
    fn cluster_quota_examples() {
        // Two clusters of two; one uniform and one confident member each.
        let h = 2f64.ln();
        let scores = vec![("a".into(), h), ("b".into(), 0.0), ("c".into(), 0.0), ("d".into(), h)];
        let cl = BTreeMap::from([("a".into(), 0), ("b".into(), 0), ("c".into(), 1), ("d".into(), 1)]);
        assert_eq!(cluster_quota(&scores, &cl, 2).chosen, vec!["a", "d"]);

        let singles: BTreeMap<String, usize> = scores.iter().enumerate().map(|(i, (id, _))| (id.clone(), i)).collect();
        assert_eq!(cluster_quota(&scores, &singles, 4).chosen.len(), 4);
    }

    #[test]
    fn cluster_quota_with_emptied_cluster() {
        // Cluster 2 lost all its members; quota becomes ceil(3/2) = 2.
        let scores: Vec<(String, f64)> =
            [("a", 0.9), ("b", 0.8), ("c", 0.1), ("d", 0.7), ("e", 0.6), ("f", 0.05)].iter().map(|(i, s)| (i.to_string(), *s)).collect();
        let cl: BTreeMap<String, usize> =
            [("a", 0), ("b", 0), ("c", 0), ("d", 1), ("e", 1), ("f", 1), ("gone", 2)].iter().map(|(i, c)| (i.to_string(), *c)).collect();
        let sel = cluster_quota(&scores, &cl, 3);
        // Per-cluster picks {a, b} and {d, e}; trimming drops e.
        assert_eq!(sel.chosen, vec!["a", "b", "d"]);
    }

    #[test]
    fn cluster_quota_fills_shortfall() {
        let scores: Vec<(String, f64)> = [("a", 0.2), ("b", 0.9), ("c", 0.8), ("d", 0.7)].iter().map(|(i, s)| (i.to_string(), *s)).collect();
        let cl: BTreeMap<String, usize> = [("a", 0), ("b", 1), ("c", 1), ("d", 1)].iter().map(|(i, c)| (i.to_string(), *c)).collect();
        // n = 4, two clusters, quota 2: {a} + {b, c} then top up with d.
        let sel = cluster_quota(&scores, &cl, 4);
        assert_eq!(sel.chosen, vec!["b", "c", "d", "a"]);
    }

    proptest! {
        #[test]
        fn one_cluster_equals_topn(raw in proptest::collection::vec(0u8..5, 1..15), n in 1usize..15) {
            let scores: Vec<(String, f64)> = raw.iter().enumerate().map(|(i, &s)| (format!("i{i:02}"), f64::from(s) / 4.0)).collect();
            let cl: BTreeMap<String, usize> = scores.iter().map(|(id, _)| (id.clone(), 0)).collect();
            prop_assert_eq!(cluster_quota(&scores, &cl, n), rank_top(&scores, n));
        }

        #[test]
        fn quota_selection_is_unique_subset(raw in proptest::collection::vec((0u8..5, 0usize..4), 1..20), n in 1usize..25) {
            let scores: Vec<(String, f64)> = raw.iter().enumerate().map(|(i, &(s, _))| (format!("i{i:02}"), f64::from(s))).collect();
            let cl: BTreeMap<String, usize> = raw.iter().enumerate().map(|(i, &(_, c))| (format!("i{i:02}"), c)).collect();
            let sel = cluster_quota(&scores, &cl, n);
            let set: BTreeSet<_> = sel.chosen.iter().collect();
            prop_assert_eq!(set.len(), sel.chosen.len());
            prop_assert_eq!(sel.chosen.len(), n.min(scores.len()));
        }

        #[test]
        fn entropy_is_permutation_invariant(raw in proptest::collection::vec(0.0..1.0f64, 2..8), rot in 0usize..8) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let mut q = p.clone();
            let k = rot % q.len();
            q.rotate_left(k);
            let a = entropy(&ClassProbabilities::from_untrusted(p).unwrap());
            let b = entropy(&ClassProbabilities::from_untrusted(q).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
