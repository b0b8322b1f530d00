//! P identities × K images mini-batch sampling.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerConfig {
    pub p: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { p: 8, k: 4, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }
}

/// Indices of one `P·K` batch over a dataset with the given identity labels.
///
/// `P` distinct identities are drawn, then `K` images of each: without
/// replacement when the identity has at least `K` images, with replacement
/// otherwise. The result depends only on `(labels, cfg, call)`.
pub fn sample_batch(labels: &[usize], cfg: &SamplerConfig, call: u64) -> Result<Vec<usize>> {
    if cfg.p == 0 || cfg.k == 0 {
        return Err(Error::Config("P and K must be positive".into()));
    }
    let mut by_id: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_id.entry(l).or_default().push(i);
    }
    if by_id.len() < cfg.p {
        return Err(Error::Dataset(alloc::format!("sampler needs {} identities, dataset has {}", cfg.p, by_id.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(call);
    let ids: Vec<&Vec<usize>> = by_id.values().collect();
    let chosen: Vec<&&Vec<usize>> = ids.choose_multiple(&mut rng, cfg.p).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size());
    for members in chosen {
        if members.len() >= cfg.k {
            let mut pool = (*members).clone();
            pool.shuffle(&mut rng);
            batch.extend_from_slice(&pool[..cfg.k]);
        } else {
            for _ in 0..cfg.k {
                batch.push(*members.choose(&mut rng).expect("identity has images"));
            }
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<usize> {
        let mut l: Vec<usize> = (0..10).flat_map(|id| core::iter::repeat_n(id, 5)).collect();
        l.extend([10, 10]);
        l
    }

    #[test]
    fn batch_shape_and_histogram() {
        let cfg = SamplerConfig { p: 8, k: 4, seed: 1 };
        let l = labels();
        let b = sample_batch(&l, &cfg, 0).unwrap();
        assert_eq!(b.len(), 32);
        let mut hist = BTreeMap::new();
        for &i in &b {
            *hist.entry(l[i]).or_insert(0) += 1;
        }
        assert_eq!(hist.len(), 8);
        assert!(hist.values().all(|&c| c == 4));
    }

    #[test]
    fn small_identity_is_resampled() {
        let l = [0, 0, 1, 1, 1, 1, 1];
        let b = sample_batch(&l, &SamplerConfig { p: 2, k: 4, seed: 3 }, 5).unwrap();
        assert_eq!(b.iter().filter(|&&i| l[i] == 0).count(), 4);
        let ones: Vec<_> = b.iter().filter(|&&i| l[i] == 1).collect();
        assert_eq!(ones.len(), 4);
    }

    #[test]
    fn determinism_and_errors() {
        let l = labels();
        let cfg = SamplerConfig { p: 3, k: 2, seed: 9 };
        assert_eq!(sample_batch(&l, &cfg, 4).unwrap(), sample_batch(&l, &cfg, 4).unwrap());
        assert_ne!(sample_batch(&l, &cfg, 4).unwrap(), sample_batch(&l, &cfg, 5).unwrap());
        assert_eq!(sample_batch(&[7], &SamplerConfig { p: 1, k: 1, seed: 0 }, 0).unwrap(), [0]);
        assert!(matches!(sample_batch(&[0, 1], &SamplerConfig { p: 3, k: 1, seed: 0 }, 0), Err(Error::Dataset(_))));
    }
}
