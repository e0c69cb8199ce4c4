//! Small numeric helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Lower and upper truncation bound applied to estimated probabilities that
/// enter a denominator.
pub const PROB_CLIP: f64 = 0.005;

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

pub fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
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

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut k = KahanSum::default();
        for x in iter {
            k.add(x);
        }
        k
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().copied().collect::<KahanSum>().total() / xs.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_var(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter()
        .map(|x| (x - m) * (x - m))
        .collect::<KahanSum>()
        .total()
        / (n - 1) as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_var(xs).sqrt()
}

pub fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Upper `1 - alpha/2` standard normal quantile.
pub fn z_two_sided(alpha: f64) -> f64 {
    std_normal().inverse_cdf(1.0 - alpha / 2.0)
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Empirical quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = ranks(x);
    let ry = ranks(y);
    let mx = mean(&rx);
    let my = mean(&ry);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Least squares `min sum w (y - X b)^2` solved through a QR factorization
/// of `sqrt(w) X`. Fails when `X` is numerically rank deficient.
pub fn weighted_least_squares(
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    let mut xs = x.clone();
    let mut ys = DVector::from_column_slice(y);
    if let Some(w) = w {
        for i in 0..n {
            let sw = w[i].max(0.0).sqrt();
            ys[i] *= sw;
            for j in 0..p {
                xs[(i, j)] *= sw;
            }
        }
    }
    let dependent = dependent_columns(&xs, 1e-10);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }
    let qr = xs.qr();
    let qty = qr.q().transpose() * ys;
    let r = qr.r();
    r.solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { columns: vec![] })
}

/// Columns that are (numerically) linear combinations of earlier columns,
/// found by modified Gram-Schmidt with a relative tolerance.
pub fn dependent_columns(x: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let (n, p) = x.shape();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(p);
    let mut dependent = Vec::new();
    for j in 0..p {
        let col = x.column(j).into_owned();
        let norm0 = col.norm();
        let mut v = col;
        for b in &basis {
            let proj = b.dot(&v);
            v.axpy(-proj, b, 1.0);
        }
        // second pass for stability
        for b in &basis {
            let proj = b.dot(&v);
            v.axpy(-proj, b, 1.0);
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= tol * norm0.max(1e-300) || norm <= 1e-300 * (n as f64) {
            dependent.push(j);
        } else {
            basis.push(v / norm);
        }
    }
    dependent
}

/// Inverse of a symmetric positive-semidefinite matrix after adding `jitter`
/// to the diagonal. Returns the inverse and the condition number.
pub fn inverse_spd(m: &DMatrix<f64>, jitter: f64) -> (DMatrix<f64>, f64) {
    let mut a = m.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += jitter;
    }
    let eig = SymmetricEigen::new(a.clone());
    let max = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0_f64, |a, b| a.max(b.abs()));
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, |a, b| a.min(b));
    let cond = if min <= 0.0 { f64::INFINITY } else { max / min };
    let inv = match a.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            let mut inv = DMatrix::zeros(a.nrows(), a.ncols());
            for (k, lam) in eig.eigenvalues.iter().enumerate() {
                if *lam > 0.0 {
                    let v = eig.eigenvectors.column(k);
                    inv += (v * v.transpose()) / *lam;
                }
            }
            inv
        }
    };
    (inv, cond)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_logit_roundtrip() {
        for &x in &[-30.0, -2.0, 0.0, 0.7, 15.0] {
            assert!((logit(expit(x)) - x).abs() < 1e-8);
        }
        assert_eq!(expit(0.0), 0.5);
    }

    #[test]
    fn kahan_handles_cancellation() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        let k: KahanSum = xs.iter().copied().collect();
        assert_eq!(k.total(), 2.0);
    }

    #[test]
    fn quantile_type7() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.5);
        assert_eq!(quantile_sorted(&s, 0.25), 1.75);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
    }

    #[test]
    fn spearman_perfect_and_reversed() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 25.0, 100.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn detects_dependent_columns() {
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 1.0, 2.0, 1.0, 2.0, 3.0, 1.0, 3.0, 4.0, 1.0, 4.0, 5.0],
        );
        assert_eq!(dependent_columns(&x, 1e-10), vec![2]);
    }

    #[test]
    fn wls_solves_exact_line() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let b = weighted_least_squares(&x, &[1.0, 3.0, 5.0], Some(&[1.0, 2.0, 3.0])).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 2.0).abs() < 1e-12);
    }
}
