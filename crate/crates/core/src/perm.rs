//! Seeded random substreams and permutation helpers shared by the global and
//! local statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Comparisons between a permuted and the observed deviation treat values
/// closer than this (scaled by `1 + |observed|`) as ties, so affine rescaling
/// of the input cannot flip a tie through rounding.
pub(crate) const TIE_TOL: f64 = 1e-9;

/// Independent stream `index` under `seed`. The same `(seed, index)` always
/// yields the same sequence, whichever thread consumes it.
pub(crate) fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `(1 + exceed) / (1 + permutations)`.
pub(crate) fn pseudo_p(exceed: usize, permutations: usize) -> f64 {
    (exceed as f64 + 1.0) / (permutations as f64 + 1.0)
}

/// Whether a permuted deviation is at least as extreme as the observed one.
#[inline]
pub(crate) fn as_extreme(perm_dev: f64, obs_dev: f64) -> bool {
    perm_dev >= obs_dev - TIE_TOL * (1.0 + obs_dev)
}

/// Ordered sample of distinct indices from `0..m` without replacement.
///
/// Runs a Fisher-Yates shuffle over a virtual identity array and stops after
/// `out.len()` steps; displaced slots live in a small side table, so the cost
/// is O(k^2) for k draws and independent of `m`.
pub(crate) struct PartialShuffle {
    displaced: Vec<(usize, usize)>,
}

impl PartialShuffle {
    pub(crate) fn new() -> Self {
        Self {
            displaced: Vec::with_capacity(16),
        }
    }

    #[inline]
    fn get(&self, pos: usize) -> usize {
        self.displaced
            .iter()
            .find(|&&(p, _)| p == pos)
            .map_or(pos, |&(_, v)| v)
    }

    #[inline]
    fn set(&mut self, pos: usize, val: usize) {
        match self.displaced.iter_mut().find(|(p, _)| *p == pos) {
            Some(slot) => slot.1 = val,
            None => self.displaced.push((pos, val)),
        }
    }

    pub(crate) fn draw<R: Rng>(&mut self, rng: &mut R, m: usize, out: &mut [usize]) {
        debug_assert!(out.len() <= m);
        self.displaced.clear();
        for t in 0..out.len() {
            let r = rng.random_range(t..m);
            let vt = self.get(t);
            let vr = self.get(r);
            // slot t is never read again; only r needs the swapped value
            self.set(r, vt);
            out[t] = vr;
        }
    }
}
