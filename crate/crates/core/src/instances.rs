//! Seeded random instances: `g` and `H₁` with independent standard-normal
//! entries, `H = (H₁ + H₁ᵀ)/2`, `σ = 4`, `f0 = 0`.
//!
//! The stream is ChaCha20 seeded with `seed_from_u64(seed)` on word stream
//! `index`, so each instance is reproducible on its own. Normals come from
//! `rand_distr::StandardNormal` (ziggurat).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::CqrProblem;

pub const GENERATOR: &str = "chacha20/ziggurat-normal/v1";

pub fn rng_for(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `(g, H)` for instance `index` of the stream named by `seed`.
pub fn random_data(n: usize, seed: u64, index: u64) -> (DVector<f64>, DMatrix<f64>) {
    let mut rng = rng_for(seed, index);
    let g = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let h1 = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let h = (&h1 + h1.transpose()) * 0.5;
    (g, h)
}

pub fn random_instance(n: usize, beta: f64, seed: u64, index: u64) -> CqrProblem {
    let (g, h) = random_data(n, seed, index);
    CqrProblem::new(0.0, g, h, beta, 4.0).expect("generated data is finite and symmetric")
}

/// Like [`random_instance`] with `H` shifted so that `λmin(H) = shift ≤ 0`
/// exactly at the computed spectrum.
pub fn shifted_instance(n: usize, beta: f64, shift: f64, seed: u64, index: u64) -> CqrProblem {
    let (g, h) = random_data(n, seed, index);
    let lmin = crate::linalg::sym_eigenvalues(&h).map(|v| v.min()).unwrap_or(0.0);
    let h = h + DMatrix::identity(n, n) * (shift - lmin);
    CqrProblem::new(0.0, g, h, beta, 4.0).expect("generated data is finite and symmetric")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_symmetric() {
        let (g1, h1) = random_data(4, 7, 3);
        let (g2, h2) = random_data(4, 7, 3);
        assert_eq!(g1, g2);
        assert_eq!(h1, h2);
        assert_eq!(h1, h1.transpose());
        let (g3, _) = random_data(4, 7, 4);
        assert_ne!(g1, g3);
    }

    #[test]
    fn normal_moments_within_four_sigma() {
        let mut rng = rng_for(2024, 0);
        let m = 100_000usize;
        let xs: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / m as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let kurt = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / m as f64;
        // Standard errors: 1/√m, √(2/m), √(96/m).
        let mf = m as f64;
        assert!(mean.abs() < 4.0 / mf.sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 4.0 * (2.0 / mf).sqrt(), "var {var}");
        assert!((kurt - 3.0).abs() < 4.0 * (96.0 / mf).sqrt(), "kurtosis {kurt}");
    }

    #[test]
    fn shift_sets_smallest_eigenvalue() {
        let p = shifted_instance(6, -1.0, -0.5, 1, 0);
        let l = crate::linalg::sym_eigenvalues(&p.h).unwrap().min();
        assert!((l + 0.5).abs() < 1e-10);
    }
}
