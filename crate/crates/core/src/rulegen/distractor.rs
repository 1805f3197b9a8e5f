//! Frequency-weighted distractor sampling.

use rand::Rng;

use super::seed::rng_from_seed;
use super::GenError;
use crate::ontology::LabelId;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: LabelId,
    pub name: String,
    pub weight: f64,
}

/// Candidate labels for distractors (and negative binary questions). The
/// target clip's labels must already be excluded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistractorPool {
    pub candidates: Vec<Candidate>,
}

impl DistractorPool {
    pub fn new(candidates: Vec<Candidate>) -> Self {
        DistractorPool { candidates }
    }

    /// Number of candidates that can actually be drawn.
    pub fn drawable(&self) -> usize {
        self.candidates
            .iter()
            .filter(|c| c.weight > 0.0 && c.weight.is_finite())
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.drawable() == 0
    }
}

/// Draw `k` distinct names without replacement; each draw picks a remaining
/// candidate with probability proportional to its weight.
pub fn sample_distractors(pool: &DistractorPool, k: usize, seed: u64) -> Result<Vec<String>, GenError> {
    let mut rng = rng_from_seed(seed);
    sample_with(pool, k, &mut rng)
}

pub(crate) fn sample_with<R: Rng>(pool: &DistractorPool, k: usize, rng: &mut R) -> Result<Vec<String>, GenError> {
    let mut remaining: Vec<&Candidate> = pool
        .candidates
        .iter()
        .filter(|c| c.weight > 0.0 && c.weight.is_finite())
        .collect();
    if remaining.len() < k {
        return Err(GenError::InsufficientPool {
            needed: k,
            available: remaining.len(),
        });
    }
    let mut total: f64 = remaining.iter().map(|c| c.weight).sum();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        // Falls back to the last candidate if rounding leaves `target` past the sum.
        let mut pick = remaining.len() - 1;
        for (i, c) in remaining.iter().enumerate() {
            acc += c.weight;
            if target < acc {
                pick = i;
                break;
            }
        }
        let chosen = remaining.remove(pick);
        total -= chosen.weight;
        if remaining.is_empty() {
            total = 0.0;
        } else if total <= 0.0 {
            total = remaining.iter().map(|c| c.weight).sum();
        }
        out.push(chosen.name.clone());
    }
    Ok(out)
}
