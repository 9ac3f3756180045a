//! Seed derivation and small shared helpers.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of a run seeded with `seed`, independent of how
/// items are scheduled across threads.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

/// A named RNG stream (`"init"`, `"dropout"`, `"shuffle"`, ...) for a run seed.
pub fn rng_stream(seed: u64, name: &str) -> ChaCha8Rng {
    let h = Sha256::digest(name.as_bytes());
    let tag = u64::from_le_bytes(h[..8].try_into().unwrap());
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Writes via a sibling temp file and a rename, so readers never see a
/// partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_distinct_and_stable() {
        let a: u64 = rng_stream(7, "init").random();
        let b: u64 = rng_stream(7, "dropout").random();
        let a2: u64 = rng_stream(7, "init").random();
        assert_ne!(a, b);
        assert_eq!(a, a2);
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
    }

    #[test]
    fn compensated_sum_keeps_small_terms() {
        let mut k = KahanSum::default();
        k.add(1.0);
        for _ in 0..10_000 {
            k.add(1e-16);
        }
        k.add(-1.0);
        assert!((k.value() - 1e-12).abs() < 1e-24);
    }
}
