//! Counter-based noise substreams.
//!
//! Every exogenous node instance draws from its own stream, addressed by
//! `(seed, world, node id, step)` for the key and the plate index for the
//! position inside the stream. Nothing depends on evaluation order, so
//! sequential and parallel sampling produce the same bits.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// 32-bit words reserved per plate index: two `u64` draws.
const WORDS_PER_INSTANCE: u128 = 4;

/// Purpose tag mixed into the key so independent uses of the same
/// coordinates (prior draws, posterior draws, sweep cells) never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    Prior,
    Posterior,
    Derived,
}

impl StreamDomain {
    fn tag(self) -> &'static [u8] {
        match self {
            StreamDomain::Prior => b"scmdyn/prior/v1",
            StreamDomain::Posterior => b"scmdyn/posterior/v1",
            StreamDomain::Derived => b"scmdyn/derived/v1",
        }
    }
}

/// Key material for one noise stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey([u8; 32]);

impl StreamKey {
    pub fn new(domain: StreamDomain, seed: u64, world: u64, node: &str, step: Option<u32>) -> Self {
        let mut h = Sha256::new();
        h.update(domain.tag());
        h.update(seed.to_le_bytes());
        h.update(world.to_le_bytes());
        h.update((node.len() as u64).to_le_bytes());
        h.update(node.as_bytes());
        h.update(step.map_or(u64::MAX, u64::from).to_le_bytes());
        StreamKey(h.finalize().into())
    }
}

/// A seekable stream of uniform pairs, one pair per plate index.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    next_index: u64,
}

impl NoiseStream {
    pub fn new(key: StreamKey) -> Self {
        NoiseStream {
            rng: ChaCha8Rng::from_seed(key.0),
            next_index: 0,
        }
    }

    /// Raw words for plate index `index`. Sequential access avoids the seek.
    pub fn words(&mut self, index: u64) -> (u64, u64) {
        if index != self.next_index {
            self.rng
                .set_word_pos(u128::from(index) * WORDS_PER_INSTANCE);
        }
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        self.next_index = index + 1;
        (a, b)
    }

    /// Two uniforms in the open interval (0, 1) for plate index `index`.
    pub fn uniforms(&mut self, index: u64) -> (f64, f64) {
        let (a, b) = self.words(index);
        (open_unit(a), open_unit(b))
    }
}

/// Maps 52 random bits to the open unit interval, never 0 or 1.
pub fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Derives a child seed from a parent seed and a list of coordinates.
/// Used for sweep cells and repeated trials.
pub fn derive_seed(seed: u64, label: &str, coords: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(StreamDomain::Derived.tag());
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for c in coords {
        h.update(c.to_le_bytes());
    }
    let out: [u8; 32] = h.finalize().into();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seek_matches_sequential() {
        let key = StreamKey::new(StreamDomain::Prior, 7, 3, "U_X", Some(2));
        let mut seq = NoiseStream::new(key);
        let sequential: Vec<_> = (0..50).map(|i| seq.words(i)).collect();
        let mut rnd = NoiseStream::new(key);
        for i in (0..50).rev() {
            assert_eq!(rnd.words(i), sequential[i as usize]);
        }
    }

    #[test]
    fn coordinates_separate_streams() {
        let base = StreamKey::new(StreamDomain::Prior, 1, 0, "U", None);
        assert_ne!(base, StreamKey::new(StreamDomain::Prior, 2, 0, "U", None));
        assert_ne!(base, StreamKey::new(StreamDomain::Prior, 1, 1, "U", None));
        assert_ne!(base, StreamKey::new(StreamDomain::Prior, 1, 0, "V", None));
        assert_ne!(base, StreamKey::new(StreamDomain::Prior, 1, 0, "U", Some(0)));
        assert_ne!(base, StreamKey::new(StreamDomain::Posterior, 1, 0, "U", None));
    }

    #[test]
    fn open_unit_bounds() {
        assert!(open_unit(0) > 0.0);
        assert!(open_unit(u64::MAX) < 1.0);
    }

    #[test]
    fn derived_seeds_differ_by_coordinate() {
        assert_ne!(derive_seed(1, "cell", &[0, 1]), derive_seed(1, "cell", &[1, 0]));
        assert_eq!(derive_seed(1, "cell", &[0, 1]), derive_seed(1, "cell", &[0, 1]));
    }
}
