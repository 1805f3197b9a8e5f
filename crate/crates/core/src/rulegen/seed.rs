//! Per-item seeding. Every random decision in rule-based generation is drawn
//! from a generator seeded by `(global_seed, audio_id, item_counter)`, so
//! output does not depend on worker count or clip order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::qa::hash_u64;

pub fn clip_rng_seed(global_seed: u64, audio_id: &str, item_counter: u64) -> u64 {
    hash_u64(&[
        b"clip-seed",
        &global_seed.to_le_bytes(),
        audio_id.as_bytes(),
        &item_counter.to_le_bytes(),
    ])
}

/// Independent seed for a named sub-decision of one item.
pub fn substream(seed: u64, tag: &str) -> u64 {
    hash_u64(&[b"substream", &seed.to_le_bytes(), tag.as_bytes()])
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Identifies one generated item within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItemKey {
    pub global_seed: u64,
    pub item_counter: u64,
}

impl ItemKey {
    pub fn new(global_seed: u64, item_counter: u64) -> Self {
        ItemKey {
            global_seed,
            item_counter,
        }
    }

    pub fn seed(&self, audio_id: &str) -> u64 {
        clip_rng_seed(self.global_seed, audio_id, self.item_counter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn stable_and_counter_sensitive() {
        assert_eq!(clip_rng_seed(7, "clipA", 0), clip_rng_seed(7, "clipA", 0));
        assert_ne!(clip_rng_seed(7, "clipA", 0), clip_rng_seed(7, "clipA", 1));
        assert_ne!(clip_rng_seed(7, "clipA", 0), clip_rng_seed(8, "clipA", 0));
    }

    #[test]
    fn frozen_value() {
        // Pinned so that a change to the seeding recipe is noticed: it
        // silently changes every generated dataset.
        assert_eq!(clip_rng_seed(0, "", 0), 900958614711812932);
    }

    #[test]
    fn no_collisions_over_10k_ids() {
        let seeds: HashSet<u64> = (0..10_000)
            .map(|i| clip_rng_seed(7, &format!("clip-{i:05}"), 0))
            .collect();
        assert_eq!(seeds.len(), 10_000);
    }
}
