//! Seeded randomness helpers: Haar-distributed unitaries and random tensor
//! network states for perturbations and stress tests.

use ndarray::prelude::*;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::qr_thin;

/// Deterministic RNG for a given seed; the same seed reproduces the same
/// stream on every platform.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One standard complex Gaussian sample (Box–Muller).
pub fn complex_gaussian(rng: &mut impl Rng) -> C64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    C64::new(r * theta.cos(), r * theta.sin()) / std::f64::consts::SQRT_2
}

/// Haar-random unitary of the given dimension: QR of a Ginibre matrix with
/// the R-diagonal phases folded back in.
pub fn haar_unitary(dim: usize, rng: &mut impl Rng) -> Array2<C64> {
    let g = Array2::from_shape_fn((dim, dim), |_| complex_gaussian(rng));
    let (q, r) = qr_thin(&g).expect("QR of a Ginibre matrix");
    let mut u = q;
    for j in 0..dim {
        let d = r[[j, j]];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..dim {
            u[[i, j]] *= phase;
        }
    }
    u
}

/// Haar-random state vector of the given dimension.
pub fn haar_state(dim: usize, rng: &mut impl Rng) -> Array1<C64> {
    let mut v = Array1::from_shape_fn(dim, |_| complex_gaussian(rng));
    let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    v.mapv_inplace(|x| x / norm);
    v
}
