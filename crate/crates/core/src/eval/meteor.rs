//! METEOR restricted to exact unigram matches.
//!
//! The alignment matches as many tokens as possible one-to-one, then uses the
//! fewest chunks (runs of matches contiguous and in order on both sides).
//! Chunk minimization is a branch-and-bound search seeded with a greedy
//! alignment; a node budget caps pathological inputs, in which case the best
//! alignment found so far is used.

use std::collections::HashMap;

use serde::Serialize;

const NODE_BUDGET: u64 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeteorBreakdown {
    pub matches: usize,
    pub precision: f64,
    pub recall: f64,
    pub fmean: f64,
    pub chunks: usize,
    pub penalty: f64,
    pub score: f64,
}

impl MeteorBreakdown {
    fn zero() -> Self {
        MeteorBreakdown {
            matches: 0,
            precision: 0.0,
            recall: 0.0,
            fmean: 0.0,
            chunks: 0,
            penalty: 0.0,
            score: 0.0,
        }
    }
}

/// Lowercase, drop everything that is neither alphanumeric nor whitespace,
/// split on whitespace.
pub fn tokenize(s: &str) -> Vec<String> {
    let cleaned: String = s
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Chunk count of an alignment given as candidate position → reference position.
pub fn count_chunks(alignment: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for a in alignment {
        match (prev, a) {
            (Some(p), Some(j)) if *j == p + 1 => {}
            (_, Some(_)) => chunks += 1,
            _ => {}
        }
        prev = *a;
    }
    chunks
}

struct Search<'a> {
    cand: &'a [usize],
    ref_positions: &'a [Vec<usize>],
    used: Vec<bool>,
    /// Matches each word id still owes.
    owed: Vec<usize>,
    /// Occurrences of each word id remaining in the candidate suffix.
    left: Vec<usize>,
    current: Vec<Option<usize>>,
    best: Vec<Option<usize>>,
    best_chunks: usize,
    nodes: u64,
}

impl Search<'_> {
    fn run(&mut self, i: usize, chunks: usize) {
        if self.nodes >= NODE_BUDGET {
            return;
        }
        self.nodes += 1;
        // Chunks never decrease along a branch.
        if chunks >= self.best_chunks {
            return;
        }
        if i == self.cand.len() {
            self.best_chunks = chunks;
            self.best = self.current.clone();
            return;
        }
        let w = self.cand[i];
        let prev = if i > 0 { self.current[i - 1] } else { None };
        self.left[w] -= 1;
        if self.owed[w] > 0 {
            // Try the continuing position first, then the rest in order.
            let mut order: Vec<usize> = Vec::with_capacity(self.ref_positions[w].len());
            if let Some(p) = prev {
                if self.ref_positions[w].contains(&(p + 1)) {
                    order.push(p + 1);
                }
            }
            order.extend(self.ref_positions[w].iter().copied().filter(|&j| Some(j) != prev.map(|p| p + 1)));
            for j in order {
                if self.used[j] {
                    continue;
                }
                let new_chunk = usize::from(prev.map(|p| p + 1) != Some(j));
                self.used[j] = true;
                self.owed[w] -= 1;
                self.current[i] = Some(j);
                self.run(i + 1, chunks + new_chunk);
                self.current[i] = None;
                self.owed[w] += 1;
                self.used[j] = false;
            }
        }
        // Skipping is allowed only if the suffix can still pay what is owed.
        if self.left[w] >= self.owed[w] {
            self.run(i + 1, chunks);
        }
        self.left[w] += 1;
    }
}

fn greedy(cand: &[usize], ref_positions: &[Vec<usize>], owed: &[usize], ref_len: usize) -> Vec<Option<usize>> {
    let mut used = vec![false; ref_len];
    let mut owed = owed.to_vec();
    let mut out: Vec<Option<usize>> = vec![None; cand.len()];
    for (i, &w) in cand.iter().enumerate() {
        if w == usize::MAX || owed[w] == 0 {
            continue;
        }
        let prev = if i > 0 { out[i - 1] } else { None };
        let next = prev.map(|p| p + 1).filter(|j| ref_positions[w].contains(j) && !used[*j]);
        let pick = next.or_else(|| ref_positions[w].iter().copied().find(|&j| !used[j]));
        if let Some(j) = pick {
            used[j] = true;
            owed[w] -= 1;
            out[i] = Some(j);
        }
    }
    out
}

/// Maximum-match, minimum-chunk alignment of `cand` against `refr`.
pub fn align(cand: &[String], refr: &[String]) -> Vec<Option<usize>> {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    for t in refr {
        let n = ids.len();
        ids.entry(t.as_str()).or_insert(n);
    }
    let vocab = ids.len();
    let mut ref_positions = vec![Vec::new(); vocab];
    for (j, t) in refr.iter().enumerate() {
        ref_positions[ids[t.as_str()]].push(j);
    }
    let cand_ids: Vec<usize> = cand.iter().map(|t| ids.get(t.as_str()).copied().unwrap_or(usize::MAX)).collect();
    let mut cand_counts = vec![0usize; vocab];
    for &w in &cand_ids {
        if w != usize::MAX {
            cand_counts[w] += 1;
        }
    }
    let owed: Vec<usize> = (0..vocab).map(|w| cand_counts[w].min(ref_positions[w].len())).collect();
    let start = greedy(&cand_ids, &ref_positions, &owed, refr.len());
    let start_chunks = count_chunks(&start);
    // `left` is indexed by word id; unmatched tokens use a spare slot.
    let mut left = cand_counts.clone();
    left.push(cand_ids.iter().filter(|&&w| w == usize::MAX).count());
    let spare = vocab;
    let cand_search: Vec<usize> = cand_ids.iter().map(|&w| if w == usize::MAX { spare } else { w }).collect();
    let mut ref_positions_ext = ref_positions;
    ref_positions_ext.push(Vec::new());
    let mut owed_ext = owed;
    owed_ext.push(0);
    let mut search = Search {
        cand: &cand_search,
        ref_positions: &ref_positions_ext,
        used: vec![false; refr.len()],
        owed: owed_ext,
        left,
        current: vec![None; cand.len()],
        best: start.clone(),
        best_chunks: start_chunks,
        nodes: 0,
    };
    search.run(0, 0);
    search.best
}

pub fn meteor_exact(candidate: &str, reference: &str) -> MeteorBreakdown {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return MeteorBreakdown::zero();
    }
    let alignment = align(&cand, &refr);
    let m = alignment.iter().filter(|a| a.is_some()).count();
    if m == 0 {
        return MeteorBreakdown::zero();
    }
    let chunks = count_chunks(&alignment);
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / refr.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    MeteorBreakdown {
        matches: m,
        precision: p,
        recall: r,
        fmean,
        chunks,
        penalty,
        score: fmean * (1.0 - penalty),
    }
}
