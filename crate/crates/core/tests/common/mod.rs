//! Shared helpers for the integration suites: an independent closed-form
//! spectral-radius oracle and a seeded random cocycle corpus.

use aperiodic_lab::cocycle::{Mat, PeriodicCocycle};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Closed-form eigenvalue moduli (quadratic formula / Cardano): the
/// independent oracle for spectral radii, no iterative eigensolver involved.
pub fn eigen_moduli_oracle(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut moduli = if d == 2 {
        let tr = m[(0, 0)] + m[(1, 1)];
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let disc = tr * tr - 4.0 * det;
        if disc >= 0.0 {
            let r = disc.sqrt();
            vec![((tr + r) / 2.0).abs(), ((tr - r) / 2.0).abs()]
        } else {
            let modulus = det.abs().sqrt();
            vec![modulus, modulus]
        }
    } else {
        let c2 = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let minor = |a: usize, b: usize| m[(a, a)] * m[(b, b)] - m[(a, b)] * m[(b, a)];
        let c1 = minor(0, 1) + minor(0, 2) + minor(1, 2);
        let c0 = m.determinant();
        let p = c1 - c2 * c2 / 3.0;
        let q = -2.0 * c2 * c2 * c2 / 27.0 + c2 * c1 / 3.0 - c0;
        let shift = c2 / 3.0;
        let disc = (q / 2.0) * (q / 2.0) + (p / 3.0) * (p / 3.0) * (p / 3.0);
        if disc > 0.0 {
            let sq = disc.sqrt();
            let real = (-q / 2.0 + sq).cbrt() + (-q / 2.0 - sq).cbrt() + shift;
            let pair_prod = if real.abs() > 1e-300 { c0 / real } else { 0.0 };
            let pm = pair_prod.abs().sqrt();
            vec![real.abs(), pm, pm]
        } else {
            let r = (-p / 3.0).max(0.0).sqrt();
            let arg = if r > 0.0 {
                (3.0 * q / (2.0 * p * r)).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            let phi = arg.acos() / 3.0;
            (0..3)
                .map(|k| {
                    (2.0 * r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift)
                        .abs()
                })
                .collect()
        }
    };
    moduli.sort_by(|a, b| b.partial_cmp(a).unwrap());
    moduli
}

/// Spectral radius of the period product by the closed-form oracle, with the
/// product accumulated by plain multiplication.
pub fn spectral_radius_oracle(c: &PeriodicCocycle) -> f64 {
    let d = c.dim();
    let mut p = DMatrix::<f64>::identity(d, d);
    for a in c.matrices() {
        p = a.inner() * p;
    }
    eigen_moduli_oracle(&p)[0]
}

/// Seeded corpus of random invertible cocycles: d ∈ {2, 3}, period ≤ 8,
/// entries bounded by e².
pub fn random_cocycles(count: usize, seed: u64) -> Vec<PeriodicCocycle> {
    let bound = (2.0f64).exp();
    let bound = bound * bound; // e²
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let dim = if rng.random_bool(0.5) { 2 } else { 3 };
        let period = rng.random_range(1..=8usize);
        let mut mats = Vec::with_capacity(period);
        let mut ok = true;
        for _ in 0..period {
            let entries: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-bound..bound)).collect();
            let m = DMatrix::from_row_slice(dim, dim, &entries);
            if m.determinant().abs() <= 0.05 {
                ok = false;
                break;
            }
            mats.push(Mat::new(m).unwrap());
        }
        if !ok {
            continue;
        }
        let c = PeriodicCocycle::new(dim, mats).unwrap();
        // keep the period product comfortably regular for the eigen solver
        let mut p = DMatrix::<f64>::identity(dim, dim);
        for a in c.matrices() {
            p = a.inner() * p;
        }
        if p.determinant().abs() > 1e-10 {
            out.push(c);
        }
    }
    out
}
