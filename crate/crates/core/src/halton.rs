//! Scrambled Halton draws for simulated likelihoods.
//!
//! Each dimension uses its own prime base. Digits are scrambled with an
//! independent random permutation per digit position, drawn from a ChaCha
//! stream keyed by (seed, dimension), so any point can be computed directly
//! from its index.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

const PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    ScrambledHalton,
    Halton,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaltonSequence {
    bases: Vec<u64>,
    /// perms[dim][digit position][digit]
    perms: Vec<Vec<Vec<u64>>>,
}

fn digit_depth(base: u64) -> usize {
    // enough digits to resolve a double
    (53.0 / (base as f64).log2()).ceil() as usize
}

impl HaltonSequence {
    pub fn new(dims: usize, kind: SequenceKind, seed: u64) -> Result<Self> {
        if dims == 0 || dims > PRIMES.len() {
            return Err(Error::Config(format!(
                "Halton dimension must be in 1..={}, got {dims}",
                PRIMES.len()
            )));
        }
        let bases = PRIMES[..dims].to_vec();
        let perms = bases
            .iter()
            .enumerate()
            .map(|(d, &b)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(d as u64);
                (0..digit_depth(b))
                    .map(|_| {
                        let mut p: Vec<u64> = (0..b).collect();
                        if kind == SequenceKind::ScrambledHalton {
                            p.shuffle(&mut rng);
                        }
                        p
                    })
                    .collect()
            })
            .collect();
        Ok(Self { bases, perms })
    }

    pub fn dims(&self) -> usize {
        self.bases.len()
    }

    /// Point `index` in dimension `dim`, in the open unit interval.
    pub fn value(&self, index: u64, dim: usize) -> f64 {
        let b = self.bases[dim];
        let perms = &self.perms[dim];
        let inv_b = 1.0 / b as f64;
        let mut scale = inv_b;
        let mut n = index;
        let mut x = 0.0;
        for p in perms {
            let digit = n % b;
            n /= b;
            x += p[digit as usize] as f64 * scale;
            scale *= inv_b;
        }
        x.clamp(1e-12, 1.0 - 1e-12)
    }

    pub fn point(&self, index: u64) -> Vec<f64> {
        (0..self.dims()).map(|d| self.value(index, d)).collect()
    }
}

/// Standard-normal draws laid out as `[respondent][draw][dim]`, each
/// respondent taking a contiguous block of the sequence after `skip` points.
pub fn normal_draw_blocks(
    n_respondents: usize,
    n_draws: usize,
    dims: usize,
    skip: u64,
    kind: SequenceKind,
    seed: u64,
) -> Result<Vec<f64>> {
    let seq = HaltonSequence::new(dims, kind, seed)?;
    let normal = Normal::standard();
    let mut out = Vec::with_capacity(n_respondents * n_draws * dims);
    for r in 0..n_respondents {
        for d in 0..n_draws {
            let idx = skip + (r * n_draws + d) as u64;
            for k in 0..dims {
                out.push(normal.inverse_cdf(seq.value(idx, k)));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unscrambled_matches_radical_inverse() {
        let h = HaltonSequence::new(2, SequenceKind::Halton, 0).unwrap();
        let base2 = [0.5, 0.25, 0.75, 0.125, 0.625];
        let base3 = [1.0 / 3.0, 2.0 / 3.0, 1.0 / 9.0, 4.0 / 9.0, 7.0 / 9.0];
        for i in 0..5 {
            assert!((h.value(i as u64 + 1, 0) - base2[i]).abs() < 1e-15);
            assert!((h.value(i as u64 + 1, 1) - base3[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn scrambled_points_are_stratified() {
        // Scrambling per digit permutes the elementary intervals, so the first
        // b^k points still hit every interval of width b^-k exactly once.
        let h = HaltonSequence::new(3, SequenceKind::ScrambledHalton, 42).unwrap();
        for (dim, b) in [(0usize, 2u64), (1, 3), (2, 5)] {
            let n = b.pow(3);
            let mut hits = vec![0; n as usize];
            for i in 0..n {
                let cell = (h.value(i, dim) * n as f64) as usize;
                hits[cell.min(n as usize - 1)] += 1;
            }
            assert!(hits.iter().all(|&c| c == 1), "dim {dim}: {hits:?}");
        }
    }

    #[test]
    fn seeded_and_deterministic() {
        let a = HaltonSequence::new(3, SequenceKind::ScrambledHalton, 7).unwrap();
        let b = HaltonSequence::new(3, SequenceKind::ScrambledHalton, 7).unwrap();
        let c = HaltonSequence::new(3, SequenceKind::ScrambledHalton, 8).unwrap();
        assert_eq!(a.point(123), b.point(123));
        assert_ne!(a.point(123), c.point(123));
    }

    #[test]
    fn normal_draws_have_unit_moments() {
        let d = normal_draw_blocks(10, 1000, 3, 100, SequenceKind::ScrambledHalton, 1).unwrap();
        for k in 0..3 {
            let xs: Vec<f64> = d.iter().skip(k).step_by(3).copied().collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 5e-3, "dim {k} mean {mean}");
            assert!((var - 1.0).abs() < 2e-2, "dim {k} var {var}");
        }
    }
}
