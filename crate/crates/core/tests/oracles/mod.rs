//! Independent reference computations used to check the library.
//!
//! Nothing here calls into the code under test: BLEU is recomputed with
//! nested slice loops, IoU by counting grid cells, clustering by exhaustive
//! search over every greedy merge order in exact integer arithmetic.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use rand::Rng;

// ---------------------------------------------------------------- BLEU

fn count_occurrences(haystack: &[String], gram: &[String]) -> usize {
    if gram.len() > haystack.len() {
        return 0;
    }
    (0..=haystack.len() - gram.len())
        .filter(|&i| &haystack[i..i + gram.len()] == gram)
        .count()
}

/// Sentence BLEU, order min(4, |c|, |r|), add-one smoothing, brevity penalty.
pub fn reference_bleu(candidate: &[String], reference: &[String]) -> f64 {
    let c = candidate.len();
    let r = reference.len();
    if c == 0 || r == 0 {
        return 0.0;
    }
    let order = 4.min(c).min(r);
    let mut product = 1.0_f64;
    for n in 1..=order {
        let mut seen: Vec<&[String]> = Vec::new();
        let mut matches = 0usize;
        for i in 0..=c - n {
            let gram = &candidate[i..i + n];
            if seen.contains(&gram) {
                continue;
            }
            seen.push(gram);
            let in_candidate = count_occurrences(candidate, gram);
            let in_reference = count_occurrences(reference, gram);
            matches += in_candidate.min(in_reference);
        }
        let total = c - n + 1;
        product *= (matches as f64 + 1.0) / (total as f64 + 1.0);
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * product.powf(1.0 / order as f64)
}

// ----------------------------------------------------------------- IoU

pub const GRID_STEP: f64 = 0.01;

/// IoU by counting 0.01 s cells (by centre) over `[0, horizon]`.
pub fn grid_iou(a: (f64, f64), b: (f64, f64), horizon: f64) -> f64 {
    let cells = (horizon / GRID_STEP).round() as usize;
    let inside = |seg: (f64, f64), x: f64| seg.0 <= x && x <= seg.1;
    let mut intersection = 0usize;
    let mut union = 0usize;
    for k in 0..cells {
        let centre = (k as f64 + 0.5) * GRID_STEP;
        let in_a = inside(a, centre);
        let in_b = inside(b, centre);
        intersection += usize::from(in_a && in_b);
        union += usize::from(in_a || in_b);
    }
    if union == 0 {
        // both segments shorter than a cell: fall back to exact equality
        return if a == b { 1.0 } else { 0.0 };
    }
    intersection as f64 / union as f64
}

// ---------------------------------------------------------- clustering

/// Similarities stored as integer tenths, so linkages compare exactly.
pub struct TenthsMatrix {
    pub n: usize,
    pub values: Vec<u32>,
}

impl TenthsMatrix {
    pub fn from_upper(n: usize, upper: &[u32]) -> Self {
        let mut values = vec![0; n * n];
        let mut k = 0;
        for i in 0..n {
            values[i * n + i] = 10;
            for j in i + 1..n {
                values[i * n + j] = upper[k];
                values[j * n + i] = upper[k];
                k += 1;
            }
        }
        Self { n, values }
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.values[i * self.n + j]
    }

    pub fn as_f64(&self, i: usize, j: usize) -> f64 {
        f64::from(self.get(i, j)) / 10.0
    }
}

pub type Partition = BTreeSet<BTreeSet<usize>>;

/// Linkage as an exact fraction (sum of tenths, pair count).
fn linkage(m: &TenthsMatrix, a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> (u64, u64) {
    let sum: u64 = a
        .iter()
        .flat_map(|&i| b.iter().map(move |&j| (i, j)))
        .map(|(i, j)| u64::from(m.get(i, j)))
        .sum();
    (sum, (a.len() * b.len()) as u64 * 10)
}

fn frac_cmp(x: (u64, u64), y: (u64, u64)) -> std::cmp::Ordering {
    (x.0 * y.1).cmp(&(y.0 * x.1))
}

/// Threshold as a fraction `num / den`.
fn best_pairs(m: &TenthsMatrix, clusters: &[BTreeSet<usize>]) -> Option<((u64, u64), Vec<(usize, usize)>)> {
    let mut best: Option<((u64, u64), Vec<(usize, usize)>)> = None;
    for a in 0..clusters.len() {
        for b in a + 1..clusters.len() {
            let l = linkage(m, &clusters[a], &clusters[b]);
            match &mut best {
                None => best = Some((l, vec![(a, b)])),
                Some((bl, pairs)) => match frac_cmp(l, *bl) {
                    std::cmp::Ordering::Greater => best = Some((l, vec![(a, b)])),
                    std::cmp::Ordering::Equal => pairs.push((a, b)),
                    std::cmp::Ordering::Less => {}
                },
            }
        }
    }
    best
}

fn sorted_clusters(p: &Partition) -> Vec<BTreeSet<usize>> {
    let mut v: Vec<BTreeSet<usize>> = p.iter().cloned().collect();
    v.sort_by_key(|c| *c.iter().next().expect("non-empty cluster"));
    v
}

/// Every partition reachable by merging a maximal-linkage pair while the
/// maximum is at least `tau = num/den`, over all tie branches.
pub fn exhaustive_fixed_points(m: &TenthsMatrix, tau: (u64, u64)) -> HashSet<Partition> {
    let start: Partition = (0..m.n).map(|i| BTreeSet::from([i])).collect();
    let mut terminals = HashSet::new();
    let mut visited = HashSet::new();
    let mut stack = vec![start];
    while let Some(p) = stack.pop() {
        if !visited.insert(p.clone()) {
            continue;
        }
        let clusters = sorted_clusters(&p);
        match best_pairs(m, &clusters) {
            Some((l, pairs)) if frac_cmp(l, tau) != std::cmp::Ordering::Less => {
                for (a, b) in pairs {
                    let mut next = p.clone();
                    next.remove(&clusters[a]);
                    next.remove(&clusters[b]);
                    next.insert(clusters[a].union(&clusters[b]).copied().collect());
                    stack.push(next);
                }
            }
            _ => {
                terminals.insert(p);
            }
        }
    }
    terminals
}

/// The branch that always takes the tied pair with the smallest
/// (lowest-member, lowest-member) ids.
pub fn canonical_fixed_point(m: &TenthsMatrix, tau: (u64, u64)) -> Partition {
    let mut p: Partition = (0..m.n).map(|i| BTreeSet::from([i])).collect();
    loop {
        let clusters = sorted_clusters(&p);
        match best_pairs(m, &clusters) {
            Some((l, pairs)) if frac_cmp(l, tau) != std::cmp::Ordering::Less => {
                let (a, b) = pairs[0];
                p.remove(&clusters[a]);
                p.remove(&clusters[b]);
                p.insert(clusters[a].union(&clusters[b]).copied().collect());
            }
            _ => return p,
        }
    }
}

pub fn partition_of(assignment: &[usize]) -> Partition {
    let mut groups: std::collections::BTreeMap<usize, BTreeSet<usize>> = Default::default();
    for (i, &id) in assignment.iter().enumerate() {
        groups.entry(id).or_default().insert(i);
    }
    groups.into_values().collect()
}

// ------------------------------------------------------------ binomial

pub fn binomial_pmf(n: u64, k: u64, p: f64) -> f64 {
    let mut coeff = 1.0_f64;
    for i in 0..k {
        coeff *= (n - i) as f64 / (i + 1) as f64;
    }
    coeff * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// P(Binomial(m, p) / m in [lo, hi]).
pub fn binomial_band_probability(m: u64, p: f64, lo: f64, hi: f64) -> f64 {
    (0..=m)
        .filter(|&k| {
            let s = k as f64 / m as f64;
            lo <= s && s <= hi
        })
        .map(|k| binomial_pmf(m, k, p))
        .sum()
}

// ---------------------------------------------------------------- fuzz

/// Applies one random byte-level or token-level mutation.
pub fn mutate<R: Rng>(text: &str, rng: &mut R) -> String {
    const FRAGMENTS: &[&str] = &[
        "<", ">", "</", "{", "}", "\\boxed{", "<segment>", "</segment>", "<type>", "</type>",
        "<question>", "</question>", "<answer>", "</answer>", "s", "-", "--", "\u{2013}", ".",
        "0", "9", "1e9", " ", "\n", "é", "\u{1F600}", "NaN", "-3",
    ];
    let chars: Vec<char> = text.chars().collect();
    let pos = if chars.is_empty() { 0 } else { rng.gen_range(0..=chars.len()) };
    let mut out: Vec<char> = chars.clone();
    match rng.gen_range(0..6) {
        0 if !chars.is_empty() => {
            let end = (pos + rng.gen_range(1..6)).min(chars.len());
            out.drain(pos.min(chars.len())..end);
        }
        1 => {
            let frag = FRAGMENTS[rng.gen_range(0..FRAGMENTS.len())];
            out.splice(pos..pos, frag.chars());
        }
        2 if !chars.is_empty() => {
            let i = rng.gen_range(0..chars.len());
            out[i] = char::from_u32(rng.gen_range(0x20..0x7f)).unwrap_or('?');
        }
        3 if chars.len() > 2 => {
            let a = rng.gen_range(0..chars.len());
            let b = rng.gen_range(0..chars.len());
            out.swap(a, b);
        }
        4 => {
            let start = rng.gen_range(0..=chars.len());
            let end = (start + rng.gen_range(0..20)).min(chars.len());
            let dup: Vec<char> = chars[start..end].to_vec();
            out.splice(pos..pos, dup);
        }
        _ => {
            out = out.iter().map(|c| if rng.gen_bool(0.5) { c.to_ascii_uppercase() } else { *c }).collect();
        }
    }
    out.into_iter().collect()
}

pub fn valid_questioner_outputs() -> Vec<String> {
    vec![
        "<type>numerical</type><question>How many?</question><answer>3</answer>".into(),
        "<type>multiple choice</type>\n<question>What happens right after the red ball hits the wall? A. it stops B. it bounces C. it breaks D. nothing</question>\n<answer>B</answer>".into(),
        "<type>regression</type>\n<question>How far does the cart travel between 2.0s and 5.5s?</question>\n<answer>3.25 m</answer>\n".into(),
        "  <ANSWER>Yes</ANSWER>\n<Question>Does the person open the door before sitting down?</Question>\n<TYPE>Multiple Choice</TYPE>".into(),
        "<question>How many times does the dog jump?</question><type>numerical</type><answer>4</answer>".into(),
    ]
}

pub fn valid_solver_outputs() -> Vec<String> {
    vec![
        "The ball bounces after the collision, so \\boxed{B} <segment>2.5s--5.0s</segment>".into(),
        "Counting the jumps gives \\boxed{4}. <segment>0s-3.5s</segment>".into(),
        "First guess \\boxed{3}, refined to \\boxed{\\frac{7}{2}} <segment>1.0s\u{2013}2.0s</segment>".into(),
        "\\boxed{YES}<SEGMENT> 10.25s -- 12s </SEGMENT>".into(),
        "Step 1: observe. Step 2: measure.\n\\boxed{12.5 m}\n<segment>0s--0s</segment>".into(),
    ]
}
