//! Question similarity within a rollout group.
//!
//! Similarity is sentence BLEU (order 4, add-one smoothed precisions,
//! standard brevity penalty), symmetrized by averaging both directions.
//! Groups are clustered by average linkage and the diversity penalty of a
//! question grows with the size of its cluster.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub const MAX_NGRAM_ORDER: usize = 4;

/// Lowercases, splits on whitespace, and emits every punctuation
/// character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        let key: Vec<&str> = gram.iter().map(AsRef::as_ref).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

/// Directed sentence BLEU of `candidate` against a single `reference`.
///
/// The maximum order is `min(4, |candidate|, |reference|)`; every order's
/// clipped precision is smoothed as `(matches + 1) / (total + 1)`.
pub fn sentence_bleu<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> f64 {
    let c = candidate.len();
    let r = reference.len();
    if c == 0 || r == 0 {
        return 0.0;
    }
    let order = MAX_NGRAM_ORDER.min(c).min(r);
    let mut log_sum = 0.0;
    for n in 1..=order {
        let cand = ngram_counts(candidate, n);
        let refs = ngram_counts(reference, n);
        let matches: usize = cand
            .iter()
            .map(|(gram, &count)| count.min(refs.get(gram).copied().unwrap_or(0)))
            .sum();
        let total = c - n + 1;
        log_sum += ((matches as f64 + 1.0) / (total as f64 + 1.0)).ln();
    }
    let brevity = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    brevity * (log_sum / order as f64).exp()
}

pub fn symmetric_similarity<T: AsRef<str>>(a: &[T], b: &[T]) -> f64 {
    (sentence_bleu(a, b) + sentence_bleu(b, a)) / 2.0
}

/// Symmetric pairwise similarities with a unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Builds a matrix from its strict upper triangle, given row by row.
    /// Panics unless exactly `n(n-1)/2` values are supplied.
    pub fn from_upper(n: usize, upper: &[f64]) -> Self {
        assert_eq!(upper.len(), n * n.saturating_sub(1) / 2, "upper triangle size");
        let mut values = vec![0.0; n * n];
        let mut k = 0;
        for i in 0..n {
            values[i * n + i] = 1.0;
            for j in i + 1..n {
                values[i * n + j] = upper[k];
                values[j * n + i] = upper[k];
                k += 1;
            }
        }
        Self { n, values }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut upper = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                upper.push(f(i, j));
            }
        }
        Self::from_upper(n, &upper)
    }

    /// Pairwise symmetric BLEU between tokenized texts.
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        let tokens: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t.as_ref())).collect();
        Self::from_fn(tokens.len(), |i, j| symmetric_similarity(&tokens[i], &tokens[j]))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Cluster labels, contiguous from 0 in order of each cluster's lowest member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    pub cluster_sizes: BTreeMap<usize, usize>,
}

impl Clustering {
    pub fn from_assignment(assignment: Vec<usize>) -> Self {
        let mut cluster_sizes = BTreeMap::new();
        for &id in &assignment {
            *cluster_sizes.entry(id).or_insert(0) += 1;
        }
        Self {
            assignment,
            cluster_sizes,
        }
    }

    pub fn size_of(&self, index: usize) -> usize {
        self.cluster_sizes[&self.assignment[index]]
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_sizes.len()
    }

    /// Members of each cluster, as sorted index lists ordered by id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.cluster_count()];
        for (i, &id) in self.assignment.iter().enumerate() {
            members[id].push(i);
        }
        members
    }
}

/// Absorbs summation-order rounding so that mathematically equal linkages
/// tie and a linkage exactly at the threshold merges.
const LINKAGE_EPS: f64 = 1e-12;

/// Agglomerative clustering with average linkage.
///
/// Starting from singletons, repeatedly merges the pair of clusters with the
/// highest mean pairwise similarity while that mean is at least `tau`. A
/// cluster is identified by its lowest member index; ties go to the
/// lexicographically smallest pair of ids.
pub fn average_linkage_cluster(sim: &SimilarityMatrix, tau: f64) -> Clustering {
    let n = sim.len();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut total = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        total += sim.get(i, j);
                    }
                }
                let mean = total / (clusters[a].len() * clusters[b].len()) as f64;
                // clusters stay sorted by lowest member, so scan order is id
                // order; means within LINKAGE_EPS count as ties
                if best.is_none_or(|(m, _, _)| mean > m + LINKAGE_EPS) {
                    best = Some((mean, a, b));
                }
            }
        }
        match best {
            Some((mean, a, b)) if mean >= tau - LINKAGE_EPS => {
                let merged = clusters.remove(b);
                clusters[a].extend(merged);
                clusters[a].sort_unstable();
            }
            _ => break,
        }
    }
    let mut assignment = vec![0; n];
    for (id, members) in clusters.iter().enumerate() {
        for &i in members {
            assignment[i] = id;
        }
    }
    Clustering::from_assignment(assignment)
}

/// `lambda_d * |cluster of index| / group_size`.
pub fn diversity_penalty(clustering: &Clustering, index: usize, group_size: usize, lambda_d: f64) -> f64 {
    lambda_d * clustering.size_of(index) as f64 / group_size as f64
}
