//! Seeded Monte Carlo integration over a covariate sampler.
//!
//! Draws come in fixed blocks, each from its own derived stream, so the
//! sample does not depend on how the work is split. Sums are compensated
//! within and across chunks, so means agree across chunk sizes to rounding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::truth::TruthSpec;
use crate::error::{Error, Result};
use crate::numeric::{sample_sd, KahanSum};
use crate::rng;

/// Draws per independently seeded block.
pub const DRAW_BLOCK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    /// Number of covariate draws.
    pub n: usize,
    pub seed: u64,
    /// Draws per summation chunk.
    pub chunk: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n: 100_000,
            seed: 0,
            chunk: 8192,
        }
    }
}

impl McConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            ..Default::default()
        }
    }

    pub(crate) fn require(&self, min_n: usize) -> Result<()> {
        if self.n < min_n {
            return Err(Error::InvalidInput(format!(
                "Monte Carlo size {} is below the minimum {min_n}",
                self.n
            )));
        }
        if self.chunk == 0 {
            return Err(Error::InvalidInput("chunk size must be positive".into()));
        }
        Ok(())
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McValue {
    pub estimate: f64,
    pub se: f64,
    pub n: usize,
}

impl McValue {
    pub(crate) fn from_contributions(values: &[f64], chunk: usize) -> Self {
        let n = values.len();
        Self {
            estimate: chunked_mean(values, chunk),
            se: if n > 1 {
                sample_sd(values) / (n as f64).sqrt()
            } else {
                0.0
            },
            n,
        }
    }

    /// `|estimate| ≤ k · se`, with a small absolute floor for exact zeros.
    pub fn within(&self, k: f64) -> bool {
        self.estimate.abs() <= k * self.se + 1e-12
    }
}

/// Covariate draws for `mc`, block `b` from `stream(seed, [b])`.
pub fn draw_covariates(truth: &TruthSpec, mc: &McConfig) -> Vec<Vec<f64>> {
    let blocks = mc.n.div_ceil(DRAW_BLOCK);
    let per_block: Vec<Vec<Vec<f64>>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(mc.seed, &[b as u64]);
            let size = DRAW_BLOCK.min(mc.n - b * DRAW_BLOCK);
            (0..size).map(|_| (truth.sampler)(&mut r)).collect()
        })
        .collect();
    per_block.into_iter().flatten().collect()
}

fn combine(parts: impl IntoIterator<Item = KahanSum>) -> f64 {
    let mut acc = KahanSum::default();
    for p in parts {
        acc.add(p.total());
    }
    acc.total()
}

/// Compensated mean, summed chunk by chunk.
pub fn chunked_mean(values: &[f64], chunk: usize) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let parts: Vec<KahanSum> = values
        .par_chunks(chunk.max(1))
        .map(|c| c.iter().copied().collect())
        .collect();
    combine(parts) / values.len() as f64
}

/// Elementwise compensated mean of `len`-vectors produced per draw.
pub(crate) fn chunked_mean_vec<F>(n: usize, len: usize, chunk: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let chunk = chunk.max(1);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let parts: Vec<Vec<KahanSum>> = starts
        .par_iter()
        .map(|&s| {
            let mut acc = vec![KahanSum::default(); len];
            let mut buf = vec![0.0; len];
            for i in s..(s + chunk).min(n) {
                buf.iter_mut().for_each(|v| *v = 0.0);
                f(i, &mut buf);
                for (a, v) in acc.iter_mut().zip(&buf) {
                    a.add(*v);
                }
            }
            acc
        })
        .collect();
    (0..len)
        .map(|k| combine(parts.iter().map(|p| p[k])) / n as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunking_does_not_change_means() {
        let v: Vec<f64> = (0..10_007)
            .map(|i| ((i as f64) * 0.37).sin() * 1e3 + 1e-3)
            .collect();
        let a = chunked_mean(&v, 1);
        for c in [7, 1000, 4096, 20_000] {
            assert!((chunked_mean(&v, c) - a).abs() <= 1e-12 * a.abs().max(1.0));
        }
        let m1 = chunked_mean_vec(v.len(), 2, 3, |i, out| {
            out[0] = v[i];
            out[1] = v[i] * v[i];
        });
        let m2 = chunked_mean_vec(v.len(), 2, 5000, |i, out| {
            out[0] = v[i];
            out[1] = v[i] * v[i];
        });
        assert!((m1[0] - a).abs() <= 1e-12 * a.abs().max(1.0));
        assert!((m1[1] - m2[1]).abs() <= 1e-12 * m1[1].abs());
    }
}
