//! Periodic matrix cocycles: exact Lyapunov exponents, Jacobian rates,
//! subadditive norm bounds and dominated-splitting tests.
//!
//! A cocycle here is an ordered list of invertible d×d matrices (d ∈ {2, 3})
//! read as the derivative of a diffeomorphism along a periodic orbit: the
//! matrix at index 0 is applied first. All operations are pure functions of
//! immutable inputs.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Iteration cap for long product estimates (`n·m ≤ ITERATION_BUDGET`).
pub const ITERATION_BUDGET: usize = 1_000_000;

/// Relative tolerance under which two eigenvalue moduli are treated as one
/// spectral group. Coinciding stable eigenvalues must land in one group.
pub const MODULUS_GROUP_TOL: f64 = 1e-9;

/// Tolerance on |modulus − 1| for hyperbolicity of a period product.
pub const HYPERBOLICITY_TOL: f64 = 1e-9;

const DET_TOL: f64 = 1e-12;
const INVARIANCE_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CocycleError {
    #[error("matrix dimension {0} not supported (need 2 or 3)")]
    BadDimension(usize),
    #[error("matrix is singular within tolerance (|det| = {0:.3e})")]
    Singular(f64),
    #[error("matrix list is empty")]
    Empty,
    #[error("matrix {index} has dimension {found}, cocycle has dimension {expected}")]
    MixedDimensions {
        index: usize,
        found: usize,
        expected: usize,
    },
    #[error("period product is singular within tolerance; invalid cocycle")]
    SingularProduct,
    #[error("period product has an eigenvalue of modulus 1 within {HYPERBOLICITY_TOL:e}; not hyperbolic")]
    NotHyperbolic,
    #[error("splitting candidate is not invariant: transport residual {residual:.3e} at index {index}")]
    NonInvariantSplitting { index: usize, residual: f64 },
    #[error("splitting candidate dimensions are inconsistent with the cocycle")]
    BadSplitting,
    #[error("iteration budget exceeded: {requested} steps > {ITERATION_BUDGET}")]
    IterationBudget { requested: usize },
    #[error("eigenvalue solver failed to converge")]
    EigenFailure,
    #[error("empty spectra list")]
    EmptySpectra,
}

/// An invertible d×d real matrix, d ∈ {2, 3}.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    m: DMatrix<f64>,
}

impl Mat {
    pub fn new(m: DMatrix<f64>) -> Result<Self, CocycleError> {
        let d = m.nrows();
        if d != m.ncols() || !(d == 2 || d == 3) {
            return Err(CocycleError::BadDimension(d.max(m.ncols())));
        }
        let det = m.determinant();
        if det.abs() <= DET_TOL {
            return Err(CocycleError::Singular(det.abs()));
        }
        Ok(Self { m })
    }

    /// Row-major construction.
    pub fn from_rows(dim: usize, entries: &[f64]) -> Result<Self, CocycleError> {
        if entries.len() != dim * dim {
            return Err(CocycleError::BadDimension(dim));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            m: DMatrix::identity(dim, dim),
        }
    }

    pub fn diag(entries: &[f64]) -> Result<Self, CocycleError> {
        let d = entries.len();
        let mut m = DMatrix::zeros(d, d);
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = e;
        }
        Self::new(m)
    }

    /// Planar rotation by `theta` (dim 2).
    pub fn rotation2(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            m: DMatrix::from_row_slice(2, 2, &[c, -s, s, c]),
        }
    }

    /// Rotation by `theta` in the (x, y) plane of a 3-dimensional chart,
    /// fixing the third axis.
    pub fn rotation3_about_axis(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            m: DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn det(&self) -> f64 {
        self.m.determinant()
    }

    pub fn inner(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.m
    }

    pub fn inverse(&self) -> Mat {
        Mat {
            m: self
                .m
                .clone()
                .try_inverse()
                .expect("invariant: Mat is invertible"),
        }
    }

    /// Operator (spectral) norm.
    pub fn operator_norm(&self) -> f64 {
        sigma_max(&self.m)
    }

    /// Row-major entry dump, the wire format of the JSON interface.
    pub fn to_row_major(&self) -> Vec<f64> {
        let d = self.dim();
        let mut v = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                v.push(self.m[(i, j)]);
            }
        }
        v
    }
}

fn sigma_max(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

fn sigma_min(m: &DMatrix<f64>) -> f64 {
    m.singular_values().min()
}

/// Complex eigenvalues of a small real matrix via the Schur decomposition.
fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, CocycleError> {
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or(CocycleError::EigenFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Ordered derivative data along a periodic orbit.
///
/// Serialized as `{dim, period, matrices}` with row-major matrix entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "CocycleRepr", into = "CocycleRepr")]
pub struct PeriodicCocycle {
    dim: usize,
    matrices: Vec<Mat>,
}

#[derive(Serialize, Deserialize)]
struct CocycleRepr {
    dim: usize,
    period: usize,
    matrices: Vec<Vec<f64>>,
}

impl TryFrom<CocycleRepr> for PeriodicCocycle {
    type Error = CocycleError;
    fn try_from(r: CocycleRepr) -> Result<Self, CocycleError> {
        if r.matrices.len() != r.period {
            return Err(CocycleError::Empty);
        }
        let mats = r
            .matrices
            .iter()
            .map(|rows| Mat::from_rows(r.dim, rows))
            .collect::<Result<Vec<_>, _>>()?;
        PeriodicCocycle::new(r.dim, mats)
    }
}

impl From<PeriodicCocycle> for CocycleRepr {
    fn from(c: PeriodicCocycle) -> Self {
        CocycleRepr {
            dim: c.dim,
            period: c.period(),
            matrices: c.matrices.iter().map(Mat::to_row_major).collect(),
        }
    }
}

impl PeriodicCocycle {
    pub fn new(dim: usize, matrices: Vec<Mat>) -> Result<Self, CocycleError> {
        if matrices.is_empty() {
            return Err(CocycleError::Empty);
        }
        if !(dim == 2 || dim == 3) {
            return Err(CocycleError::BadDimension(dim));
        }
        for (index, m) in matrices.iter().enumerate() {
            if m.dim() != dim {
                return Err(CocycleError::MixedDimensions {
                    index,
                    found: m.dim(),
                    expected: dim,
                });
            }
        }
        Ok(Self { dim, matrices })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn period(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrices(&self) -> &[Mat] {
        &self.matrices
    }

    /// Cocycle with the matrix list rotated so index `r` comes first.
    pub fn cyclic_rotation(&self, r: usize) -> Self {
        let m = self.period();
        let mats = (0..m)
            .map(|i| self.matrices[(i + r) % m].clone())
            .collect();
        Self {
            dim: self.dim,
            matrices: mats,
        }
    }

    /// Inverse cocycle: derivative data of the inverse map along the reversed orbit.
    pub fn inverse(&self) -> Self {
        let mats = self.matrices.iter().rev().map(Mat::inverse).collect();
        Self {
            dim: self.dim,
            matrices: mats,
        }
    }
}

/// Full period product `A_{m−1}···A_1·A_0` (index 0 applied first).
pub fn product(c: &PeriodicCocycle) -> Mat {
    let d = c.dim();
    let mut p = DMatrix::identity(d, d);
    for a in c.matrices() {
        p = a.inner() * p;
    }
    Mat { m: p }
}

/// `k`-step product starting at orbit index `start`, with separated log scale
/// to avoid overflow: the true product is `e^{log_scale}·P̂`.
fn scaled_partial_product(c: &PeriodicCocycle, start: usize, k: usize) -> (DMatrix<f64>, f64) {
    let d = c.dim();
    let m = c.period();
    let mut p = DMatrix::identity(d, d);
    let mut log_scale = 0.0f64;
    for j in 0..k {
        p = c.matrices()[(start + j) % m].inner() * &p;
        let s = p.norm();
        if !(1e-120..=1e120).contains(&s) {
            p /= s;
            log_scale += s.ln();
        }
    }
    (p, log_scale)
}

/// Sorted (non-increasing) Lyapunov exponents in log units per iterate.
///
/// In dimension 3 the entries are accessible as (χ⁻, χᶜ, χ⁺); complex
/// eigenvalue pairs of the period product are reported as repeated moduli
/// with the `complex` flag set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExponentSpectrum {
    /// χ_1 ≥ … ≥ χ_d.
    pub values: Vec<f64>,
    /// True when the period product has a non-real eigenvalue pair.
    pub complex: bool,
}

impl ExponentSpectrum {
    pub fn new(mut values: Vec<f64>, complex: bool) -> Self {
        values.sort_by(|a, b| b.partial_cmp(a).unwrap());
        Self { values, complex }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Largest exponent χ⁺.
    pub fn chi_plus(&self) -> f64 {
        self.values[0]
    }

    /// Smallest exponent χ⁻.
    pub fn chi_minus(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Middle exponent χᶜ (dimension 3 only).
    pub fn chi_center(&self) -> Option<f64> {
        (self.values.len() == 3).then(|| self.values[1])
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn raw_exponents(c: &PeriodicCocycle) -> Result<(Vec<f64>, bool), CocycleError> {
    let (p, log_scale) = scaled_partial_product(c, 0, c.period());
    let eigs = eigenvalues(&p)?;
    let m = c.period() as f64;
    let mut complex = false;
    let mut values = Vec::with_capacity(eigs.len());
    for e in &eigs {
        let modulus = e.norm();
        if modulus <= 0.0 {
            return Err(CocycleError::SingularProduct);
        }
        if e.im.abs() > 1e-12 * modulus.max(1.0) {
            complex = true;
        }
        values.push((modulus.ln() + log_scale) / m);
    }
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok((values, complex))
}

/// Exponents of a periodic orbit: χ_j = (1/m)·log|λ_j| over the eigenvalues
/// λ_j of the period product.
///
/// The small eigenvalues of a strongly hyperbolic product are not resolvable
/// from the formed product (they sit below ‖P‖·ε), so the bottom half of the
/// spectrum is read off the inverse cocycle, whose product has exactly the
/// reciprocal eigenvalues with the conditioning mirrored.
pub fn exponents_periodic(c: &PeriodicCocycle) -> Result<ExponentSpectrum, CocycleError> {
    let d = c.dim();
    let (direct, complex_direct) = raw_exponents(c)?;
    let (inverse, complex_inverse) = raw_exponents(&c.inverse())?;
    // mirrored view: χ_j = −(inverse exponents in reverse order)
    let mut values = direct;
    for j in (d - d / 2)..d {
        values[j] = -inverse[d - 1 - j];
    }
    Ok(ExponentSpectrum::new(
        values,
        complex_direct || complex_inverse,
    ))
}

/// Average log-Jacobian per iterate: `(1/m)·Σ log|det A_i|`.
///
/// By the Jacobian identity this equals the sum of the Lyapunov exponents.
pub fn log_jacobian_rate(c: &PeriodicCocycle) -> f64 {
    let m = c.period() as f64;
    c.matrices().iter().map(|a| a.det().abs().ln()).sum::<f64>() / m
}

/// Subadditive upper bounds for χ⁺ at n = 1, …, `n_max`.
///
/// Entry n−1 is the orbit average `(1/(n·m))·mean_i log‖P_i^{(n·m)}‖` over the
/// m cyclic starting points (each orbit point carries measure 1/m). Every
/// entry is ≥ χ⁺ and the doubling subsequence is non-increasing.
pub fn subadditive_top_bounds(
    c: &PeriodicCocycle,
    n_max: usize,
) -> Result<Vec<f64>, CocycleError> {
    let m = c.period();
    if n_max == 0 {
        return Err(CocycleError::Empty);
    }
    let total = n_max * m;
    if total > ITERATION_BUDGET {
        return Err(CocycleError::IterationBudget { requested: total });
    }
    let d = c.dim();
    // one running renormalized product per starting point, extended m steps per n
    let mut prods: Vec<(DMatrix<f64>, f64)> = (0..m)
        .map(|_| (DMatrix::identity(d, d), 0.0f64))
        .collect();
    let mut out = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut acc = 0.0;
        for (start, (p, log_scale)) in prods.iter_mut().enumerate() {
            for j in ((n - 1) * m)..(n * m) {
                *p = c.matrices()[(start + j) % m].inner() * &*p;
                let s = p.norm();
                if !(1e-120..=1e120).contains(&s) {
                    *p /= s;
                    *log_scale += s.ln();
                }
            }
            acc += sigma_max(p).ln() + *log_scale;
        }
        out.push(acc / (m as f64) / ((n * m) as f64));
    }
    Ok(out)
}

/// Single subadditive bound at a given n (same value as the incremental path).
pub fn subadditive_top_bound(c: &PeriodicCocycle, n: usize) -> Result<f64, CocycleError> {
    Ok(*subadditive_top_bounds(c, n)?.last().unwrap())
}

/// Result of the finite-n estimate of χ⁺ through the subadditive sequence.
#[derive(Debug, Clone, Copy)]
pub struct TopExponentEstimate {
    /// The subadditive bound at `n_max`.
    pub estimate: f64,
    pub n_max: usize,
    /// Self-reported constant C with |estimate − χ⁺| ≤ C/n_max against the
    /// exact periodic value.
    pub error_constant: f64,
}

/// Estimate χ⁺ by the subadditive bound at `n_max`, computed in the log
/// domain with periodic renormalization.
pub fn top_exponent_limit_estimate(
    c: &PeriodicCocycle,
    n_max: usize,
) -> Result<TopExponentEstimate, CocycleError> {
    let m = c.period();
    let total = n_max
        .checked_mul(m)
        .ok_or(CocycleError::IterationBudget { requested: usize::MAX })?;
    if total > ITERATION_BUDGET {
        return Err(CocycleError::IterationBudget { requested: total });
    }
    let mut acc = 0.0;
    for start in 0..m {
        let (p, log_scale) = scaled_partial_product(c, start, total);
        acc += sigma_max(&p).ln() + log_scale;
    }
    let estimate = acc / (m as f64) / (total as f64);
    let chi_plus = exponents_periodic(c)?.chi_plus();
    Ok(TopExponentEstimate {
        estimate,
        n_max,
        error_constant: (estimate - chi_plus).abs() * n_max as f64,
    })
}

/// A candidate invariant splitting E ⊕ F along the orbit, each subspace given
/// by orthonormal spanning columns per orbit index.
#[derive(Debug, Clone)]
pub struct SplittingCandidate {
    /// d×dim(E) orthonormal frames, one per orbit index.
    pub e_frames: Vec<DMatrix<f64>>,
    /// d×dim(F) orthonormal frames, one per orbit index.
    pub f_frames: Vec<DMatrix<f64>>,
}

impl SplittingCandidate {
    /// Constant splitting from one pair of frames (repeated along the orbit).
    pub fn constant(e: DMatrix<f64>, f: DMatrix<f64>, period: usize) -> Self {
        Self {
            e_frames: vec![orthonormalize(&e); period],
            f_frames: vec![orthonormalize(&f); period],
        }
    }

    pub fn dim_e(&self) -> usize {
        self.e_frames[0].ncols()
    }

    pub fn dim_f(&self) -> usize {
        self.f_frames[0].ncols()
    }

    /// Largest relative transport residual of A_i·E_i against E_{i+1} (and F).
    pub fn invariance_residual(&self, c: &PeriodicCocycle) -> Result<f64, CocycleError> {
        let m = c.period();
        if self.e_frames.len() != m || self.f_frames.len() != m {
            return Err(CocycleError::BadSplitting);
        }
        let d = c.dim();
        if self.dim_e() + self.dim_f() != d || self.dim_e() == 0 || self.dim_f() == 0 {
            return Err(CocycleError::BadSplitting);
        }
        let mut worst = 0.0f64;
        for i in 0..m {
            for (frames, next) in [
                (&self.e_frames, &self.e_frames[(i + 1) % m]),
                (&self.f_frames, &self.f_frames[(i + 1) % m]),
            ] {
                let img = c.matrices()[i].inner() * &frames[i];
                let proj = next * (next.transpose() * &img);
                let residual = (&img - proj).norm() / img.norm().max(1e-300);
                worst = worst.max(residual);
            }
        }
        Ok(worst)
    }
}

fn orthonormalize(frame: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = frame.clone().qr();
    let q = qr.q();
    // fix signs so the result is deterministic
    q.columns(0, frame.ncols()).into_owned()
}

/// Exact k-domination test: for every base index the largest singular value
/// of the k-step product restricted to E is less than half the smallest
/// singular value restricted to F.
pub fn is_k_dominated(
    c: &PeriodicCocycle,
    s: &SplittingCandidate,
    k: usize,
) -> Result<bool, CocycleError> {
    let residual = s.invariance_residual(c)?;
    if residual > INVARIANCE_TOL {
        let index = 0; // residual is a max; report the first offending index
        for i in 0..c.period() {
            let img = c.matrices()[i].inner() * &s.e_frames[i];
            let next = &s.e_frames[(i + 1) % c.period()];
            let proj = next * (next.transpose() * &img);
            if (&img - proj).norm() / img.norm().max(1e-300) > INVARIANCE_TOL {
                return Err(CocycleError::NonInvariantSplitting { index: i, residual });
            }
        }
        return Err(CocycleError::NonInvariantSplitting { index, residual });
    }
    if k == 0 {
        return Ok(false);
    }
    let m = c.period();
    for i in 0..m {
        let (p, _log_scale) = scaled_partial_product(c, i, k);
        // common scale cancels between the two sides
        let grow_e = sigma_max(&(&p * &s.e_frames[i]));
        let grow_f = sigma_min(&(&p * &s.f_frames[i]));
        if !(grow_e < 0.5 * grow_f) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Eigenvalue moduli of the period product grouped by relative tolerance,
/// sorted ascending. Returns (eigenvalues, group index per eigenvalue,
/// group count, log-scale correction).
fn modulus_groups(
    c: &PeriodicCocycle,
) -> Result<(Vec<Complex<f64>>, Vec<usize>, usize, f64), CocycleError> {
    let (p, log_scale) = scaled_partial_product(c, 0, c.period());
    let mut eigs = eigenvalues(&p)?;
    eigs.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
    let mut group = vec![0usize; eigs.len()];
    let mut g = 0usize;
    for i in 1..eigs.len() {
        let lo = eigs[i - 1].norm();
        let hi = eigs[i].norm();
        if hi - lo > MODULUS_GROUP_TOL * hi.max(lo).max(1e-300) {
            g += 1;
        }
        group[i] = g;
    }
    Ok((eigs, group, g + 1, log_scale))
}

/// Orthonormal basis of the invariant subspace of `p` belonging to the listed
/// eigenvalues: the kernel of the annihilating polynomial, read off the
/// smallest right singular directions.
fn spectral_subspace(p: &DMatrix<f64>, eigs: &[Complex<f64>]) -> DMatrix<f64> {
    let d = p.nrows();
    let scale = sigma_max(p).max(1e-300);
    let mut q = DMatrix::<f64>::identity(d, d);
    let mut done = vec![false; eigs.len()];
    for i in 0..eigs.len() {
        if done[i] {
            continue;
        }
        let lam = eigs[i];
        if lam.im.abs() > 1e-12 * lam.norm().max(1.0) {
            // real quadratic factor for the conjugate pair; mark the partner
            for j in (i + 1)..eigs.len() {
                if !done[j] && (eigs[j] - lam.conj()).norm() < 1e-6 * lam.norm().max(1.0) {
                    done[j] = true;
                    break;
                }
            }
            let factor = p * p - (p * (2.0 * lam.re)) + DMatrix::identity(d, d) * lam.norm_sqr();
            q = factor * q / scale.powi(2);
        } else {
            let factor = p - DMatrix::identity(d, d) * lam.re;
            q = factor * q / scale;
        }
        done[i] = true;
    }
    let g = eigs.len();
    let svd = q.svd(false, true);
    let v_t = svd.v_t.expect("svd with v requested");
    // smallest singular directions span the kernel
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| svd.singular_values[a].partial_cmp(&svd.singular_values[b]).unwrap());
    let mut basis = DMatrix::zeros(d, g);
    for (col, &i) in idx.iter().take(g).enumerate() {
        basis.set_column(col, &v_t.row(i).transpose());
    }
    orthonormalize(&basis)
}

/// Search the spectral splittings of the period product for a k-dominated one.
///
/// Eigenvalues are grouped by modulus (relative tolerance
/// [`MODULUS_GROUP_TOL`]) and each modulus gap induces a candidate splitting
/// E = slow groups, F = fast groups. For a periodic cocycle every dominated
/// splitting is spectral, so the search is exhaustive.
pub fn find_dominated_splitting(
    c: &PeriodicCocycle,
    k: usize,
) -> Result<Option<SplittingCandidate>, CocycleError> {
    let (eigs, group, n_groups, _) = modulus_groups(c)?;
    if n_groups < 2 {
        return Ok(None);
    }
    let (p, _) = scaled_partial_product(c, 0, c.period());
    let m = c.period();
    for split in 1..n_groups {
        let slow: Vec<Complex<f64>> = eigs
            .iter()
            .zip(&group)
            .filter(|(_, &g)| g < split)
            .map(|(e, _)| *e)
            .collect();
        let fast: Vec<Complex<f64>> = eigs
            .iter()
            .zip(&group)
            .filter(|(_, &g)| g >= split)
            .map(|(e, _)| *e)
            .collect();
        let e0 = spectral_subspace(&p, &slow);
        let f0 = spectral_subspace(&p, &fast);
        let mut e_frames = Vec::with_capacity(m);
        let mut f_frames = Vec::with_capacity(m);
        let (mut e, mut f) = (e0, f0);
        for i in 0..m {
            e_frames.push(e.clone());
            f_frames.push(f.clone());
            if i + 1 < m {
                e = orthonormalize(&(c.matrices()[i].inner() * e));
                f = orthonormalize(&(c.matrices()[i].inner() * f));
            }
        }
        let cand = SplittingCandidate { e_frames, f_frames };
        if is_k_dominated(c, &cand, k)? {
            return Ok(Some(cand));
        }
    }
    Ok(None)
}

/// Complex-pair flags of the contracting and expanding eigenvalue groups.
///
/// Errors unless the period product is hyperbolic (no eigenvalue modulus
/// within [`HYPERBOLICITY_TOL`] of 1).
pub fn eigenvalue_flags(c: &PeriodicCocycle) -> Result<(bool, bool), CocycleError> {
    let (p, log_scale) = scaled_partial_product(c, 0, c.period());
    let eigs = eigenvalues(&p)?;
    let mut stable_complex = false;
    let mut unstable_complex = false;
    for e in &eigs {
        let log_mod = e.norm().ln() + log_scale;
        // tolerance on the modulus itself, per the stated contract
        let modulus = log_mod.exp();
        if (modulus - 1.0).abs() <= HYPERBOLICITY_TOL {
            return Err(CocycleError::NotHyperbolic);
        }
        let is_complex = e.im.abs() > 1e-12 * e.norm().max(1.0);
        if modulus < 1.0 {
            stable_complex |= is_complex;
        } else {
            unstable_complex |= is_complex;
        }
    }
    Ok((stable_complex, unstable_complex))
}

/// Finite-stage upper-semicontinuity check: the limsup of the χ⁺ entries
/// (max over the trailing half of the list) must not exceed the limit's χ⁺
/// beyond `tol`.
pub fn semicontinuity_check(
    spectra: &[ExponentSpectrum],
    limit: &ExponentSpectrum,
    tol: f64,
) -> Result<bool, CocycleError> {
    if spectra.is_empty() {
        return Err(CocycleError::EmptySpectra);
    }
    let start = spectra.len() / 2;
    let limsup = spectra[start..]
        .iter()
        .map(ExponentSpectrum::chi_plus)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(limsup <= limit.chi_plus() + tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn diag(entries: &[f64]) -> Mat {
        Mat::diag(entries).unwrap()
    }

    fn cocycle(dim: usize, mats: Vec<Mat>) -> PeriodicCocycle {
        PeriodicCocycle::new(dim, mats).unwrap()
    }

    /// The model saddle block: two coinciding stable rates and one expanding.
    fn saddle_block() -> Mat {
        diag(&[(-1.6f64).exp(), (-1.6f64).exp(), 3.2f64.exp()])
    }

    #[test]
    fn product_identity_cases() {
        let m = Mat::from_rows(2, &[1.0, 2.0, 3.0, 5.0]).unwrap();
        let c = cocycle(2, vec![m.clone()]);
        assert_eq!(product(&c).inner(), m.inner());

        let c = cocycle(2, vec![diag(&[2.0, 0.5]), diag(&[0.5, 2.0])]);
        let p = product(&c);
        assert_abs_diff_eq!(p.inner()[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.inner()[(1, 1)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.inner()[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn product_matches_stepwise_oracle() {
        // random-ish 3-periodic 2×2 cocycle against direct triple multiplication
        let a0 = Mat::from_rows(2, &[1.3, -0.4, 0.2, 0.9]).unwrap();
        let a1 = Mat::from_rows(2, &[0.7, 0.5, -0.6, 1.1]).unwrap();
        let a2 = Mat::from_rows(2, &[2.0, 0.3, 0.1, 0.6]).unwrap();
        let c = cocycle(2, vec![a0.clone(), a1.clone(), a2.clone()]);
        let oracle = a2.inner() * (a1.inner() * a0.inner());
        assert!((product(&c).inner() - oracle).norm() < 1e-14);
    }

    #[test]
    fn exponents_of_model_fixed_point() {
        let c = cocycle(3, vec![saddle_block()]);
        let s = exponents_periodic(&c).unwrap();
        assert_abs_diff_eq!(s.chi_plus(), 3.2, epsilon = 1e-12);
        assert_abs_diff_eq!(s.chi_center().unwrap(), -1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(s.chi_minus(), -1.6, epsilon = 1e-12);
        assert!(!s.complex);
    }

    #[test]
    fn exponents_identity_and_rotation() {
        let c = cocycle(2, vec![Mat::identity(2)]);
        let s = exponents_periodic(&c).unwrap();
        assert_eq!(s.values, vec![0.0, 0.0]);

        let c = cocycle(2, vec![Mat::rotation2(std::f64::consts::PI / 3.0)]);
        let s = exponents_periodic(&c).unwrap();
        assert_abs_diff_eq!(s.chi_plus(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.chi_minus(), 0.0, epsilon = 1e-12);
        assert!(s.complex, "rotation eigenvalues form a complex pair");
    }

    #[test]
    fn jacobian_rate_examples() {
        let c = cocycle(3, vec![saddle_block()]);
        assert_abs_diff_eq!(log_jacobian_rate(&c), 0.0, epsilon = 1e-12);

        let c = cocycle(2, vec![Mat::identity(2)]);
        assert_eq!(log_jacobian_rate(&c), 0.0);

        let c = cocycle(2, vec![diag(&[3.0, 1.0]), diag(&[1.0, 3.0])]);
        assert_abs_diff_eq!(log_jacobian_rate(&c), 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn jacobian_identity_on_fixed_cocycles() {
        for c in [
            cocycle(2, vec![Mat::from_rows(2, &[1.2, 0.7, -0.3, 0.8]).unwrap()]),
            cocycle(
                3,
                vec![
                    Mat::from_rows(3, &[1.0, 0.2, 0.0, -0.1, 0.9, 0.3, 0.0, 0.4, 1.5]).unwrap(),
                    Mat::from_rows(3, &[0.6, 0.0, 0.2, 0.0, 2.0, 0.0, -0.5, 0.0, 0.7]).unwrap(),
                ],
            ),
        ] {
            let s = exponents_periodic(&c).unwrap();
            assert_abs_diff_eq!(s.sum(), log_jacobian_rate(&c), epsilon = 1e-9);
        }
    }

    #[test]
    fn subadditive_bounds_diagonal_model() {
        let c = cocycle(3, vec![saddle_block()]);
        for n in [1usize, 2, 5, 8] {
            let b = subadditive_top_bound(&c, n).unwrap();
            assert_abs_diff_eq!(b, 3.2, epsilon = 1e-12);
        }
        let c = cocycle(2, vec![Mat::identity(2)]);
        assert_abs_diff_eq!(subadditive_top_bound(&c, 5).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn subadditive_doubling_trend_with_rotation() {
        // rotation · diag(2, 1/2): norms strictly above the spectral radius
        let a = Mat::new(Mat::rotation2(1.0).inner() * diag(&[2.0, 0.5]).inner()).unwrap();
        let c = cocycle(2, vec![a]);
        let chi = exponents_periodic(&c).unwrap().chi_plus();
        let bounds = subadditive_top_bounds(&c, 8).unwrap();
        for &b in &bounds {
            assert!(b >= chi - 1e-9);
        }
        // non-increasing along the doubling subsequence n = 1, 2, 4, 8
        assert!(bounds[1] <= bounds[0] + 1e-12);
        assert!(bounds[3] <= bounds[1] + 1e-12);
        assert!(bounds[7] <= bounds[3] + 1e-12);
        // direct norm oracle at n = 2
        let p = product(&c);
        let p2 = p.inner() * p.inner();
        let oracle = sigma_max(&p2).ln() / 2.0;
        assert_abs_diff_eq!(bounds[1], oracle, epsilon = 1e-12);
    }

    #[test]
    fn top_exponent_estimate_converges() {
        // 2-periodic shear cocycle
        let c = cocycle(
            2,
            vec![
                Mat::from_rows(2, &[1.0, 1.0, 0.0, 1.0]).unwrap(),
                Mat::from_rows(2, &[1.0, 0.0, 1.0, 1.0]).unwrap(),
            ],
        );
        let chi = exponents_periodic(&c).unwrap().chi_plus();
        let est = top_exponent_limit_estimate(&c, 10_000).unwrap();
        assert!((est.estimate - chi).abs() <= 1e-3, "gap {}", est.estimate - chi);

        let c = cocycle(3, vec![saddle_block()]);
        let est = top_exponent_limit_estimate(&c, 1).unwrap();
        assert_abs_diff_eq!(est.estimate, 3.2, epsilon = 1e-12);

        let c = cocycle(2, vec![Mat::identity(2)]);
        let est = top_exponent_limit_estimate(&c, 100).unwrap();
        assert_abs_diff_eq!(est.estimate, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn iteration_budget_is_enforced() {
        let c = cocycle(2, vec![Mat::identity(2), Mat::identity(2)]);
        assert!(matches!(
            top_exponent_limit_estimate(&c, 600_000),
            Err(CocycleError::IterationBudget { .. })
        ));
    }

    fn e(dim: usize, cols: &[usize]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(dim, cols.len());
        for (j, &i) in cols.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        m
    }

    #[test]
    fn domination_of_model_splitting() {
        let c = cocycle(3, vec![saddle_block()]);
        // stable plane ⊕ unstable line is 1-dominated
        let s = SplittingCandidate::constant(e(3, &[0, 1]), e(3, &[2]), 1);
        assert!(is_k_dominated(&c, &s, 1).unwrap());
        // a line inside the stable plane is never dominated: equal moduli
        let s = SplittingCandidate::constant(e(3, &[0]), e(3, &[1, 2]), 1);
        for k in 1..=50 {
            assert!(!is_k_dominated(&c, &s, k).unwrap());
        }
        // identity cocycle: nothing dominates
        let c = cocycle(2, vec![Mat::identity(2)]);
        let s = SplittingCandidate::constant(e(2, &[0]), e(2, &[1]), 1);
        for k in [1usize, 3, 10] {
            assert!(!is_k_dominated(&c, &s, k).unwrap());
        }
    }

    #[test]
    fn domination_verdict_is_cyclically_invariant() {
        // rotating the matrix list together with the splitting frames must
        // reproduce the verdict exactly
        let mats = vec![
            diag(&[0.4, 3.0]),
            Mat::new(Mat::rotation2(0.2).inner() * diag(&[0.5, 2.0]).inner()).unwrap(),
            diag(&[0.6, 1.5]),
        ];
        let c = cocycle(2, mats);
        for k in 1..=6 {
            let base = find_dominated_splitting(&c, k).unwrap();
            if let Some(s) = base {
                for r in 1..3 {
                    let rotated = c.cyclic_rotation(r);
                    let m = c.period();
                    let rot_split = SplittingCandidate {
                        e_frames: (0..m).map(|i| s.e_frames[(i + r) % m].clone()).collect(),
                        f_frames: (0..m).map(|i| s.f_frames[(i + r) % m].clone()).collect(),
                    };
                    assert!(
                        is_k_dominated(&rotated, &rot_split, k).unwrap(),
                        "k = {k}, rotation {r}"
                    );
                }
            } else {
                for r in 1..3 {
                    assert!(find_dominated_splitting(&c.cyclic_rotation(r), k).unwrap().is_none());
                }
            }
        }
    }

    #[test]
    fn non_invariant_candidate_is_rejected() {
        let c = cocycle(2, vec![diag(&[2.0, 0.5]), diag(&[0.5, 2.0])]);
        // frames that are not transported into each other
        let s = SplittingCandidate {
            e_frames: vec![e(2, &[0]), orthonormalize(&DMatrix::from_row_slice(2, 1, &[0.8, 0.6]))],
            f_frames: vec![e(2, &[1]), e(2, &[1])],
        };
        assert!(matches!(
            is_k_dominated(&c, &s, 1),
            Err(CocycleError::NonInvariantSplitting { .. })
        ));
    }

    #[test]
    fn find_splitting_on_model_and_degenerate_cases() {
        let c = cocycle(3, vec![saddle_block()]);
        let s = find_dominated_splitting(&c, 1).unwrap().expect("spectral gap");
        assert_eq!(s.dim_e(), 2, "stable plane");
        assert_eq!(s.dim_f(), 1, "unstable line");

        // all moduli equal: conformal rotation, no splitting at any k
        let c = cocycle(2, vec![Mat::rotation2(0.7)]);
        for k in [1usize, 5, 25] {
            assert!(find_dominated_splitting(&c, k).unwrap().is_none());
        }
    }

    #[test]
    fn find_splitting_matches_bruteforce_over_gaps() {
        // moduli (0.9, 1.1, 1.2): the coarse gap dominates only for k ≥ k0
        let c = cocycle(3, vec![diag(&[0.9, 1.1, 1.2])]);
        let k0 = (0.5f64.ln() / (0.9f64 / 1.1).ln()).ceil() as usize; // = 4
        for k in 1..=(k0 + 2) {
            let found = find_dominated_splitting(&c, k).unwrap();
            // brute force over the two spectral splittings
            let s1 = SplittingCandidate::constant(e(3, &[0]), e(3, &[1, 2]), 1);
            let s2 = SplittingCandidate::constant(e(3, &[0, 1]), e(3, &[2]), 1);
            let any = is_k_dominated(&c, &s1, k).unwrap() || is_k_dominated(&c, &s2, k).unwrap();
            assert_eq!(found.is_some(), any, "k = {k}");
            if k < k0 {
                assert!(found.is_none());
            } else {
                assert!(found.is_some());
            }
        }
    }

    #[test]
    fn eigenvalue_flags_cases() {
        let c = cocycle(3, vec![saddle_block()]);
        assert_eq!(eigenvalue_flags(&c).unwrap(), (false, false));

        // contracting rotation ⊕ expansion
        let rot = Mat::rotation3_about_axis(1.0);
        let scale = diag(&[0.5, 0.5, 2.0]);
        let a = Mat::new(rot.inner() * scale.inner()).unwrap();
        let c = cocycle(3, vec![a]);
        assert_eq!(eigenvalue_flags(&c).unwrap(), (true, false));

        let c = cocycle(2, vec![diag(&[1.0, 2.0])]);
        assert!(matches!(eigenvalue_flags(&c), Err(CocycleError::NotHyperbolic)));
    }

    #[test]
    fn semicontinuity_examples() {
        let s32 = ExponentSpectrum::new(vec![3.2, -1.6, -1.6], false);
        let s30 = ExponentSpectrum::new(vec![3.0, -1.5, -1.5], false);
        let constant: Vec<_> = (0..10).map(|_| s32.clone()).collect();
        assert!(semicontinuity_check(&constant, &s32, 1e-9).unwrap());

        // decreasing to 3.2
        let decreasing: Vec<_> = (0..100)
            .map(|n| ExponentSpectrum::new(vec![3.2 + 0.3 * 0.5f64.powi(n), -1.6, -1.6], false))
            .collect();
        assert!(semicontinuity_check(&decreasing, &s32, 1e-9).unwrap());

        // constant 3.2 against claimed limit 3.0 must flag inconsistency
        assert!(!semicontinuity_check(&constant, &s30, 1e-3).unwrap());

        assert!(matches!(
            semicontinuity_check(&[], &s32, 1e-9),
            Err(CocycleError::EmptySpectra)
        ));
    }

    #[test]
    fn serde_roundtrip() {
        let c = cocycle(2, vec![diag(&[2.0, 0.5]), Mat::rotation2(0.3)]);
        let json = serde_json::to_string(&c).unwrap();
        let back: PeriodicCocycle = serde_json::from_str(&json).unwrap();
        assert_eq!(back.period(), 2);
        for (a, b) in c.matrices().iter().zip(back.matrices()) {
            assert_eq!(a.to_row_major(), b.to_row_major());
        }
    }
}
