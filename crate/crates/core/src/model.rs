//! Explicit evaluable saddle diffeomorphisms of a Euclidean chart with exact
//! derivatives.
//!
//! The base map glues a linear saddle `diag(e^{−λ_1}, …, e^{λ_u})` at the
//! origin to the identity outside the unit ball. It is realized as a
//! composition of `n_steps` frozen-coefficient exponential steps
//! `x ↦ exp(h·φ(|x|)·D)·x` of the bumped linear field, where φ is a C¹
//! profile decaying logarithmically in the radius. Each step is a
//! diffeomorphism with closed-form Jacobian; inside a certified core the
//! composition equals the linear part exactly, and outside the bump support
//! it is exactly the identity.
//!
//! An optional connector composes in a radius-preserving twist of the
//! (stable-axis, unstable-axis) plane, supported in an annulus away from the
//! origin. At full amplitude π/2 the twist carries the unstable axis onto the
//! stable one at the profile peak, forcing a homoclinic tangency whose orbit
//! crosses the twist exactly where its derivative is a pure rotation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cocycle::{Mat, PeriodicCocycle};
use crate::profile::{smoothstep, smoothstep_deriv};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unsupported dimension {0}")]
    BadDimension(usize),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("step inversion did not converge at |residual| = {0:.3e}")]
    InverseDiverged(f64),
    #[error(
        "no tangency found: min plane distance {min_plane_distance:.3e}, \
         min crossing angle {min_crossing_angle:?}, searched {pieces_searched} pieces"
    )]
    NoTangency {
        min_plane_distance: f64,
        min_crossing_angle: Option<f64>,
        pieces_searched: usize,
        /// Per-piece minimum plane distance: the residual landscape.
        landscape: Vec<(usize, f64)>,
    },
}

/// C¹ radial bump: φ ≡ 1 on [0, r_in], φ ≡ 0 on [r_out, ∞), interpolated by a
/// cubic smoothstep in log-radius. The log parametrization equalizes the
/// quantity ρ·|φ′(ρ)| ≤ 1.5/ln(r_out/r_in), which is what the derivative
/// budget of the glued saddle sees.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BumpProfile {
    pub r_in: f64,
    pub r_out: f64,
}

impl BumpProfile {
    pub fn new(r_in: f64, r_out: f64) -> Result<Self, ModelError> {
        if !(0.0 < r_in && r_in < r_out && r_out <= 1.0) {
            return Err(ModelError::InvalidParams(format!(
                "need 0 < r_in < r_out ≤ 1, got ({r_in}, {r_out})"
            )));
        }
        Ok(Self { r_in, r_out })
    }

    /// ln(r_out / r_in), the budget-controlling width.
    pub fn log_width(&self) -> f64 {
        (self.r_out / self.r_in).ln()
    }

    pub fn eval(&self, rho: f64) -> f64 {
        if rho <= self.r_in {
            1.0
        } else if rho >= self.r_out {
            0.0
        } else {
            smoothstep((self.r_out / rho).ln() / self.log_width())
        }
    }

    /// dφ/dρ; continuous, zero outside (r_in, r_out).
    pub fn deriv(&self, rho: f64) -> f64 {
        if rho <= self.r_in || rho >= self.r_out {
            0.0
        } else {
            -smoothstep_deriv((self.r_out / rho).ln() / self.log_width()) / (rho * self.log_width())
        }
    }
}

/// Radius-preserving twist of the (stable-axis, unstable-axis) coordinate
/// plane, with a cos² angle profile peaked at `r_peak` and, in dimension 3, a
/// plateau cutoff in the transverse coordinate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TwistConnector {
    /// Radius of maximal rotation; the tangency point sits at (r_peak, 0, 0).
    pub r_peak: f64,
    /// Half-width of the annular support (r_peak − width, r_peak + width).
    pub width: f64,
    /// Peak rotation angle; π/2 carries the unstable axis onto the stable one.
    pub amplitude: f64,
    /// |s| below which the transverse cutoff is exactly 1 (3D only).
    pub s_plateau: f64,
    /// |s| beyond which the twist vanishes (3D only).
    pub s_cutoff: f64,
}

impl TwistConnector {
    pub fn standard() -> Self {
        Self {
            r_peak: 0.10,
            width: 0.05,
            amplitude: std::f64::consts::FRAC_PI_2,
            s_plateau: 0.05,
            s_cutoff: 0.30,
        }
    }

    /// Angle profile η(ρ) ∈ [0, 1], peak 1 at r_peak, C¹ with zero slope at
    /// the peak and the support edges.
    pub fn eta(&self, rho: f64) -> f64 {
        let d = (rho - self.r_peak).abs();
        if d >= self.width {
            0.0
        } else {
            let c = (std::f64::consts::FRAC_PI_2 * d / self.width).cos();
            c * c
        }
    }

    pub fn eta_deriv(&self, rho: f64) -> f64 {
        let d = rho - self.r_peak;
        if d.abs() >= self.width {
            0.0
        } else {
            let t = std::f64::consts::FRAC_PI_2 * d / self.width;
            -std::f64::consts::FRAC_PI_2 / self.width * (2.0 * t).sin()
        }
    }

    /// Transverse cutoff χ(|s|): 1 on the plateau, smoothstep down to 0.
    pub fn s_factor(&self, s: f64) -> f64 {
        let a = s.abs();
        if a <= self.s_plateau {
            1.0
        } else if a >= self.s_cutoff {
            0.0
        } else {
            smoothstep((self.s_cutoff - a) / (self.s_cutoff - self.s_plateau))
        }
    }

    pub fn s_factor_deriv(&self, s: f64) -> f64 {
        let a = s.abs();
        if a <= self.s_plateau || a >= self.s_cutoff {
            0.0
        } else {
            -s.signum() * smoothstep_deriv((self.s_cutoff - a) / (self.s_cutoff - self.s_plateau))
                / (self.s_cutoff - self.s_plateau)
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.r_peak - self.width, self.r_peak + self.width)
    }
}

/// An explicit glued saddle model of the chart ℝ^d, d ∈ {2, 3}.
///
/// The linear part is diag(e^{−λ_stable_1}, [e^{−λ_stable_2},] e^{+λ_unstable});
/// in dimension 3 the stable plane spans coordinates (0, 1) and the unstable
/// axis is coordinate 2, in dimension 2 the pair is (stable, unstable) = (0, 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMap {
    dim: usize,
    /// Contraction rates per stable axis (positive values).
    pub stable_rates: Vec<f64>,
    /// Expansion rate of the unstable axis (positive).
    pub unstable_rate: f64,
    pub bump: BumpProfile,
    pub n_steps: usize,
    pub connector: Option<TwistConnector>,
}

pub const STANDARD_CONTRACTION: f64 = 1.6; // 8/5
pub const STANDARD_EXPANSION_3D: f64 = 3.2; // 16/5
const NEWTON_TOL: f64 = 1e-13;

impl ModelMap {
    /// The three-dimensional model: rates (−8/5, −8/5, 16/5), tangency connector.
    pub fn standard_3d() -> Self {
        Self {
            dim: 3,
            stable_rates: vec![STANDARD_CONTRACTION, STANDARD_CONTRACTION],
            unstable_rate: STANDARD_EXPANSION_3D,
            bump: BumpProfile::new(0.95 * (-4.5f64).exp(), 0.95).unwrap(),
            n_steps: 8,
            connector: Some(TwistConnector::standard()),
        }
    }

    /// The two-dimensional saddle: rates (−8/5, 8/5), tangency connector.
    /// The ±8/5 choice gives Jacobian 0 with exponents beyond ±1.
    pub fn standard_2d() -> Self {
        Self {
            dim: 2,
            stable_rates: vec![STANDARD_CONTRACTION],
            unstable_rate: STANDARD_CONTRACTION,
            bump: BumpProfile::new(0.95 * (-4.5f64).exp(), 0.95).unwrap(),
            n_steps: 8,
            connector: Some(TwistConnector::standard()),
        }
    }

    /// Connector-free glue, the insert used by the tower builder.
    pub fn insert(dim: usize) -> Result<Self, ModelError> {
        let mut m = match dim {
            3 => Self::standard_3d(),
            2 => Self::standard_2d(),
            d => return Err(ModelError::BadDimension(d)),
        };
        m.connector = None;
        Ok(m)
    }

    /// Same geometry, different connector amplitude (as a fraction of π/2).
    pub fn with_connector_fraction(mut self, fraction: f64) -> Self {
        let mut c = self.connector.unwrap_or_else(TwistConnector::standard);
        c.amplitude = fraction * std::f64::consts::FRAC_PI_2;
        self.connector = Some(c);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.dim == 2 || self.dim == 3) {
            return Err(ModelError::BadDimension(self.dim));
        }
        if self.stable_rates.len() != self.dim - 1 {
            return Err(ModelError::InvalidParams(format!(
                "{} stable rates for dimension {}",
                self.stable_rates.len(),
                self.dim
            )));
        }
        if self.stable_rates.iter().any(|&l| l <= 0.0) || self.unstable_rate <= 0.0 {
            return Err(ModelError::InvalidParams("rates must be positive".into()));
        }
        if self.n_steps == 0 {
            return Err(ModelError::InvalidParams("need at least one step".into()));
        }
        if let Some(c) = &self.connector {
            let (lo, _) = c.support();
            if lo <= self.bump.r_in {
                return Err(ModelError::InvalidParams(
                    "connector support reaches the linear core".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Field exponent rates as a diagonal (−λ_1, [−λ_2,] +λ_u).
    fn field_rates(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.dim);
        for (i, &l) in self.stable_rates.iter().enumerate() {
            d[i] = -l;
        }
        d[self.dim - 1] = self.unstable_rate;
        d
    }

    /// Radius below which the map equals its linear part exactly: flow
    /// trajectories started there cannot leave the φ ≡ 1 plateau within unit
    /// time.
    pub fn linear_radius(&self) -> f64 {
        self.bump.r_in * (-self.unstable_rate).exp()
    }

    /// Exact derivative at the origin: the `n_steps`-fold product of the
    /// per-step diagonal exponentials.
    pub fn linear_matrix(&self) -> Mat {
        let h = 1.0 / self.n_steps as f64;
        let rates = self.field_rates();
        let step: Vec<f64> = rates.iter().map(|&r| (h * r).exp()).collect();
        let mut diag = vec![1.0f64; self.dim];
        for _ in 0..self.n_steps {
            for (d, s) in diag.iter_mut().zip(&step) {
                *d *= s;
            }
        }
        Mat::diag(&diag).expect("exponentials are nonzero")
    }

    /// Period-1 cocycle at the fixed point.
    pub fn fixed_point_cocycle(&self) -> PeriodicCocycle {
        PeriodicCocycle::new(self.dim, vec![self.linear_matrix()]).expect("valid by construction")
    }

    // ----- frozen-coefficient exponential steps -----

    fn step(&self, x: &DVector<f64>) -> DVector<f64> {
        let h = 1.0 / self.n_steps as f64;
        let rho = x.norm();
        let phi = self.bump.eval(rho);
        let rates = self.field_rates();
        let mut y = x.clone();
        for i in 0..self.dim {
            y[i] *= (h * phi * rates[i]).exp();
        }
        y
    }

    fn step_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let h = 1.0 / self.n_steps as f64;
        let rho = x.norm();
        let phi = self.bump.eval(rho);
        let dphi = self.bump.deriv(rho);
        let rates = self.field_rates();
        let exps: Vec<f64> = (0..self.dim).map(|i| (h * phi * rates[i]).exp()).collect();
        // DS = E·(I + h·φ′·(Dx)(xᵀ/ρ))
        let mut jac = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            jac[(i, i)] = exps[i];
        }
        if dphi != 0.0 && rho > 0.0 {
            let mut correction = DMatrix::identity(self.dim, self.dim);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    correction[(i, j)] += h * dphi * rates[i] * x[i] * x[j] / rho;
                }
            }
            jac *= correction;
        }
        jac
    }

    fn step_inverse(&self, y: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        // Newton with the exact step Jacobian; the step is near-identity.
        let h = 1.0 / self.n_steps as f64;
        let rates = self.field_rates();
        let rho_y = y.norm();
        let phi0 = self.bump.eval(rho_y);
        let mut x = y.clone();
        for i in 0..self.dim {
            x[i] *= (-h * phi0 * rates[i]).exp();
        }
        for _ in 0..100 {
            let f = self.step(&x) - y;
            let res = f.norm();
            if res < NEWTON_TOL * (1.0 + y.norm()) {
                return Ok(x);
            }
            let jac = self.step_jacobian(&x);
            let delta = jac
                .lu()
                .solve(&f)
                .ok_or(ModelError::InverseDiverged(res))?;
            x -= delta;
        }
        let res = (self.step(&x) - y).norm();
        if res < 1e-9 {
            Ok(x)
        } else {
            Err(ModelError::InverseDiverged(res))
        }
    }

    // ----- twist connector -----

    /// Indices of the twist plane: (first stable axis, unstable axis).
    fn twist_plane(&self) -> (usize, usize) {
        (0, self.dim - 1)
    }

    fn twist(&self, x: &DVector<f64>, sign: f64) -> DVector<f64> {
        let Some(conn) = &self.connector else {
            return x.clone();
        };
        let (i, j) = self.twist_plane();
        let (a, b) = (x[i], x[j]);
        let rho = (a * a + b * b).sqrt();
        let chi = if self.dim == 3 { conn.s_factor(x[1]) } else { 1.0 };
        let beta = sign * conn.amplitude * conn.eta(rho) * chi;
        if beta == 0.0 {
            return x.clone();
        }
        let (s, c) = beta.sin_cos();
        // rotation by −β carries the unstable axis toward the positive stable axis
        let mut y = x.clone();
        y[i] = c * a + s * b;
        y[j] = -s * a + c * b;
        y
    }

    fn twist_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::identity(self.dim, self.dim);
        let Some(conn) = &self.connector else {
            return jac;
        };
        let (i, j) = self.twist_plane();
        let (a, b) = (x[i], x[j]);
        let rho = (a * a + b * b).sqrt();
        let chi = if self.dim == 3 { conn.s_factor(x[1]) } else { 1.0 };
        let eta = conn.eta(rho);
        let beta = conn.amplitude * eta * chi;
        let (s, c) = beta.sin_cos();
        // base rotation R(−β)
        jac[(i, i)] = c;
        jac[(i, j)] = s;
        jac[(j, i)] = -s;
        jac[(j, j)] = c;
        // gradient of β
        let mut grad = DVector::zeros(self.dim);
        if rho > 0.0 {
            let deta = conn.eta_deriv(rho);
            grad[i] = conn.amplitude * deta * chi * a / rho;
            grad[j] = conn.amplitude * deta * chi * b / rho;
        }
        if self.dim == 3 {
            grad[1] = conn.amplitude * eta * conn.s_factor_deriv(x[1]);
        }
        if grad.iter().any(|&g| g != 0.0) {
            // d/dβ of R(−β)v is the quarter-turn of the rotated vector
            let (wi, wj) = (c * a + s * b, -s * a + c * b);
            let (di, dj) = (wj, -wi);
            for k in 0..self.dim {
                jac[(i, k)] += di * grad[k];
                jac[(j, k)] += dj * grad[k];
            }
        }
        jac
    }

    fn twist_inverse(&self, y: &DVector<f64>) -> DVector<f64> {
        // the twist preserves the plane radius and the transverse coordinate,
        // so the angle is known and the inverse is the opposite rotation
        self.twist(y, -1.0)
    }

    // ----- public map interface -----

    /// Evaluate the model at a chart point.
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x.clone();
        for _ in 0..self.n_steps {
            y = self.step(&y);
        }
        self.twist(&y, 1.0)
    }

    /// Exact Jacobian of the implemented formula at `x`.
    pub fn deriv(&self, x: &DVector<f64>) -> Mat {
        let mut y = x.clone();
        let mut jac = DMatrix::identity(self.dim, self.dim);
        for _ in 0..self.n_steps {
            jac = self.step_jacobian(&y) * jac;
            y = self.step(&y);
        }
        jac = self.twist_jacobian(&y) * jac;
        Mat::new(jac).expect("model derivative is invertible")
    }

    /// Inverse map (exact twist inverse, Newton per flow step).
    pub fn eval_inverse(&self, y: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        let mut x = self.twist_inverse(y);
        for _ in 0..self.n_steps {
            x = self.step_inverse(&x)?;
        }
        Ok(x)
    }

    /// log|det Df(x)| and log‖Df(x)⁻¹‖ at one point.
    pub fn budget_at(&self, x: &DVector<f64>) -> (f64, f64) {
        let jac = self.deriv(x);
        let det = jac.det().abs().ln();
        let sigma_min = jac.inner().singular_values().min();
        (det, -(sigma_min.ln()))
    }
}

// ----- budget verification -----

/// A sampling ball of the declared budget region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetBall {
    pub center: Vec<f64>,
    pub radius: f64,
    pub pitch: f64,
}

/// Region W on which the derivative budget is claimed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetRegion {
    pub balls: Vec<BudgetBall>,
}

/// Grid report of the derivative budget over a sampled region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetReport {
    pub max_log_det: f64,
    pub max_log_inv_norm: f64,
    /// 1 − max_log_det.
    pub jacobian_margin: f64,
    /// 2 − max_log_inv_norm.
    pub inverse_margin: f64,
    pub pass: bool,
    pub samples: usize,
    pub worst_det_point: Vec<f64>,
    pub worst_inv_point: Vec<f64>,
    /// Sample points violating a budget line, if any.
    pub violations: Vec<Vec<f64>>,
}

/// Thresholds: log|det Df| < 1 and log‖Df⁻¹‖ < 2.
pub const JACOBIAN_BUDGET: f64 = 1.0;
pub const INVERSE_NORM_BUDGET: f64 = 2.0;

/// Sample the declared region and report the budget maxima and margins.
pub fn verify_budget(model: &ModelMap, region: &BudgetRegion) -> BudgetReport {
    let dim = model.dim();
    let mut max_det = f64::NEG_INFINITY;
    let mut max_inv = f64::NEG_INFINITY;
    let mut worst_det = vec![0.0; dim];
    let mut worst_inv = vec![0.0; dim];
    let mut violations = Vec::new();
    let mut samples = 0usize;
    for ball in &region.balls {
        let steps = (ball.radius / ball.pitch).ceil() as i64;
        let mut idx = vec![-steps; dim];
        'grid: loop {
            let offset: Vec<f64> = idx.iter().map(|&i| i as f64 * ball.pitch).collect();
            let r2: f64 = offset.iter().map(|o| o * o).sum();
            if r2 <= ball.radius * ball.radius {
                let x = DVector::from_iterator(
                    dim,
                    ball.center.iter().zip(&offset).map(|(c, o)| c + o),
                );
                let (ld, li) = model.budget_at(&x);
                samples += 1;
                if ld > max_det {
                    max_det = ld;
                    worst_det = x.iter().copied().collect();
                }
                if li > max_inv {
                    max_inv = li;
                    worst_inv = x.iter().copied().collect();
                }
                if ld >= JACOBIAN_BUDGET || li >= INVERSE_NORM_BUDGET {
                    violations.push(x.iter().copied().collect());
                }
            }
            // advance the multi-index
            for k in 0..dim {
                idx[k] += 1;
                if idx[k] <= steps {
                    continue 'grid;
                }
                idx[k] = -steps;
            }
            break;
        }
    }
    BudgetReport {
        max_log_det: max_det,
        max_log_inv_norm: max_inv,
        jacobian_margin: JACOBIAN_BUDGET - max_det,
        inverse_margin: INVERSE_NORM_BUDGET - max_inv,
        pass: max_det < JACOBIAN_BUDGET && max_inv < INVERSE_NORM_BUDGET,
        samples,
        worst_det_point: worst_det,
        worst_inv_point: worst_inv,
        violations,
    }
}

impl ModelMap {
    /// The homoclinic point of the standard connector: the twist peak carries
    /// the unstable axis onto the stable one at (r_peak, 0, …).
    pub fn homoclinic_point(&self) -> Option<DVector<f64>> {
        let conn = self.connector.as_ref()?;
        if (conn.amplitude - std::f64::consts::FRAC_PI_2).abs() > 1e-12 {
            return None;
        }
        let mut z = DVector::zeros(self.dim);
        z[0] = conn.r_peak;
        Some(z)
    }

    /// Declared budget region: a ball around the fixed point plus thin tubes
    /// along the homoclinic orbit (where the twist derivative is a rotation).
    /// Without a connector the whole chart ball is declared.
    pub fn declared_budget_region(&self) -> BudgetRegion {
        let dim = self.dim();
        match self.homoclinic_point() {
            None => BudgetRegion {
                balls: vec![BudgetBall {
                    center: vec![0.0; dim],
                    radius: 1.05,
                    pitch: if dim == 3 { 0.05 } else { 0.01 },
                }],
            },
            Some(z) => {
                let mut balls = vec![BudgetBall {
                    center: vec![0.0; dim],
                    radius: 1.5 * self.linear_radius(),
                    pitch: self.linear_radius() / 4.0,
                }];
                let tube = |p: &DVector<f64>, radius: f64| BudgetBall {
                    center: p.iter().copied().collect(),
                    radius,
                    pitch: radius / 2.5,
                };
                // forward orbit of z: contraction keeps the full tube benign
                let mut p = z.clone();
                for _ in 0..40 {
                    balls.push(tube(&p, 2.5e-3));
                    p = self.eval(&p);
                    if p.norm() < 0.5 * self.linear_radius() {
                        break;
                    }
                }
                // backward orbit of z: a tube is mapped across the connector
                // annulus by the unstable stretch, so its radius must shrink
                // by the local derivative norm to keep the image near the
                // twist peak where the derivative stays a rotation
                let mut p = z.clone();
                let mut radius = 2.5e-3;
                for _ in 0..40 {
                    balls.push(tube(&p, radius));
                    match self.eval_inverse(&p) {
                        Ok(q) => p = q,
                        Err(_) => break,
                    }
                    let stretch = self.deriv(&p).operator_norm().max(1.0);
                    radius = (radius / stretch).max(2e-5);
                    if p.norm() < 0.5 * self.linear_radius() {
                        break;
                    }
                }
                BudgetRegion { balls }
            }
        }
    }
}

// ----- tangency locator -----

/// Certificate of a homoclinic tangency: a point on both iterated local
/// manifolds where the unstable tangent lies inside the stable tangent space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TangencyCertificate {
    pub point: Vec<f64>,
    /// Unit tangent of the grown unstable curve at the tangency.
    pub tangent: Vec<f64>,
    /// Angle between the tangent and the stable subspace, radians.
    pub angle_residual: f64,
    /// Distance of the point to the (local) stable manifold.
    pub plane_distance: f64,
    /// Number of map iterations applied to the seed arc.
    pub piece_index: usize,
}

/// Grow the unstable manifold from the linear regime and locate the point of
/// closest approach to the stable subspace. With the full-amplitude connector
/// the approach distance vanishes and the contact is tangential.
///
/// The curve is grown by iterating a fundamental-domain arc of the unstable
/// axis with curvature-adaptive subdivision (max segment length 1e-3).
pub fn tangency_locator(model: &ModelMap) -> Result<TangencyCertificate, ModelError> {
    model.validate()?;
    let dim = model.dim();
    let u_axis = dim - 1;
    let max_seg = 1e-3;
    let seed_lo = 0.25 * model.linear_radius();

    let axis_point = |t: f64| {
        let mut x = DVector::zeros(dim);
        x[u_axis] = t;
        x
    };
    // landing radius of an axis point under the base glue (before the twist)
    let base_axis_image = |t: f64| -> f64 {
        let mut x = axis_point(t);
        for _ in 0..model.n_steps {
            x = model.step(&x);
        }
        x[u_axis]
    };
    let seed_hi = base_axis_image(seed_lo);

    // curve piece j: τ ∈ [0, 1] ↦ F^j(axis(seed_lo + τ(seed_hi − seed_lo)))
    // TODO: memoize the iterated arc per piece; the golden-section probes
    // below re-run the full F^j chain from the seed on every evaluation.
    let eval_piece = |j: usize, tau: f64| -> DVector<f64> {
        let mut x = axis_point(seed_lo + tau * (seed_hi - seed_lo));
        for _ in 0..j {
            x = model.eval(&x);
        }
        x
    };
    // exact tangent by the chain rule
    let tangent_piece = |j: usize, tau: f64| -> DVector<f64> {
        let mut x = axis_point(seed_lo + tau * (seed_hi - seed_lo));
        let mut v = DVector::zeros(dim);
        v[u_axis] = 1.0;
        for _ in 0..j {
            v = model.deriv(&x).inner() * &v;
            x = model.eval(&x);
        }
        v
    };
    // distance to the stable subspace = |unstable coordinate|
    let plane_coord = |p: &DVector<f64>| p[u_axis];
    let angle_of = |v: &DVector<f64>| (v[u_axis].abs() / v.norm()).asin();

    let exclusion = 2.0 * model.linear_radius(); // ignore the trivial contact at 0

    // the bend can only happen while the pre-twist landing range still meets
    // the connector annulus; beyond it the curve only re-iterates bent parts
    let stop_radius = match &model.connector {
        Some(c) => c.r_peak + c.width,
        // no connector: nothing can bend the axis, stop once well past any
        // plausible connector zone (the outer glue only slows the crawl)
        None => 0.5 * model.bump.r_out,
    };

    // tangential candidates (angle ≤ 1e-6) and the closest non-crossing approach
    let mut best_tangency: Option<(f64, usize, f64)> = None;
    let mut closest_approach = f64::INFINITY;
    let mut landscape = Vec::new();
    let mut min_crossing_angle: Option<f64> = None;
    let mut pieces = 0usize;
    let mut piece_lo = seed_lo;
    let mut past_stop = 0usize;

    for j in 0..100usize {
        if piece_lo > stop_radius {
            // bent parts keep evolving inside the annulus for a few more
            // iterations; give them a bounded tail
            past_stop += 1;
            if past_stop > 4 {
                break;
            }
        }
        pieces = j + 1;
        piece_lo = base_axis_image(piece_lo);

        // adaptive sampling of the piece: subdivide until segments are short
        let mut taus: Vec<f64> = Vec::new();
        let mut pts: Vec<DVector<f64>> = Vec::new();
        let mut stack = vec![(0.0f64, eval_piece(j, 0.0), 1.0f64, eval_piece(j, 1.0))];
        while let Some((ta, pa, tb, pb)) = stack.pop() {
            if (&pb - &pa).norm() > max_seg && tb - ta > 1e-12 && pts.len() < 300_000 {
                let tm = 0.5 * (ta + tb);
                let pm = eval_piece(j, tm);
                stack.push((tm, pm.clone(), tb, pb));
                stack.push((ta, pa, tm, pm));
            } else {
                // emit the left endpoint; the final right endpoint lands last
                taus.push(ta);
                pts.push(pa);
                if stack.is_empty() {
                    taus.push(tb);
                    pts.push(pb);
                }
            }
        }

        let mut piece_min = f64::INFINITY;
        for i in 0..pts.len() {
            let p = &pts[i];
            let h = plane_coord(p);
            if p.norm() > exclusion {
                if h.abs() < piece_min {
                    piece_min = h.abs();
                }
                closest_approach = closest_approach.min(h.abs());
                // local minimum of |h| over the sample: refine by golden section
                let interior = i > 0 && i + 1 < pts.len();
                let is_local_min = interior
                    && h.abs() <= plane_coord(&pts[i - 1]).abs()
                    && h.abs() <= plane_coord(&pts[i + 1]).abs();
                if is_local_min {
                    let (mut a, mut b) = (taus[i - 1], taus[i + 1]);
                    for _ in 0..200 {
                        let m1 = a + 0.382 * (b - a);
                        let m2 = a + 0.618 * (b - a);
                        let f1 = plane_coord(&eval_piece(j, m1)).abs();
                        let f2 = plane_coord(&eval_piece(j, m2)).abs();
                        if f1 < f2 {
                            b = m2;
                        } else {
                            a = m1;
                        }
                        if b - a < 1e-15 {
                            break;
                        }
                    }
                    let tau = 0.5 * (a + b);
                    let refined = eval_piece(j, tau);
                    let val = plane_coord(&refined).abs();
                    if refined.norm() > exclusion {
                        let ang = angle_of(&tangent_piece(j, tau));
                        if ang <= 1e-6 {
                            // genuinely tangential contact
                            if best_tangency.map_or(true, |(v, _, _)| val < v) {
                                best_tangency = Some((val, j, tau));
                            }
                        } else if val <= 1e-9 {
                            // the curve pierces the plane: a transverse point
                            min_crossing_angle =
                                Some(min_crossing_angle.map_or(ang, |m: f64| m.min(ang)));
                        } else {
                            closest_approach = closest_approach.min(val);
                        }
                    }
                }
                // transverse crossings: sign change between consecutive samples
                if i > 0 {
                    let h0 = plane_coord(&pts[i - 1]);
                    if h0.signum() != h.signum() && h0 != 0.0 && h != 0.0 {
                        let (mut a, mut b) = (taus[i - 1], taus[i]);
                        for _ in 0..100 {
                            let m = 0.5 * (a + b);
                            if plane_coord(&eval_piece(j, m)).signum() == h0.signum() {
                                a = m;
                            } else {
                                b = m;
                            }
                        }
                        let tau = 0.5 * (a + b);
                        let ang = angle_of(&tangent_piece(j, tau));
                        min_crossing_angle =
                            Some(min_crossing_angle.map_or(ang, |m: f64| m.min(ang)));
                    }
                }
            }
        }
        landscape.push((j, piece_min));
    }

    let tol_distance = 1e-9;
    match best_tangency {
        Some((dist, j, tau)) if dist <= tol_distance => {
            let p = eval_piece(j, tau);
            let t = tangent_piece(j, tau);
            let angle = angle_of(&t);
            let t_unit = &t / t.norm();
            Ok(TangencyCertificate {
                point: p.iter().copied().collect(),
                tangent: t_unit.iter().copied().collect(),
                angle_residual: angle,
                plane_distance: dist,
                piece_index: j,
            })
        }
        _ => Err(ModelError::NoTangency {
            min_plane_distance: closest_approach,
            min_crossing_angle,
            pieces_searched: pieces,
            landscape,
        }),
    }
}

// ----- no-domination certificate -----

/// Report excluding dominated splittings above the fixed point and the
/// homoclinic orbit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoDominationReport {
    /// No splitting with one-dimensional weak bundle up to k_max: the stable
    /// eigenvalue moduli coincide, so every tested line fails the gap test.
    pub dim1_excluded: bool,
    /// Worst (largest) domination deficit ratio seen in the sweep.
    pub dim1_worst_ratio: f64,
    /// Plane splittings are excluded by the homoclinic tangency.
    pub dim2_excluded: bool,
    pub tangency_present: bool,
    pub k_max: usize,
    /// True when both exclusions hold: no dominated splitting of any index.
    pub overall: bool,
}

/// Sweep k ≤ k_max over one-dimensional weak bundles of the fixed-point
/// cocycle (lines in the stable plane and the unstable axis) plus the
/// spectral splittings, and record whether any is dominated. The tangency
/// certificate excludes two-dimensional weak bundles.
///
/// Three-dimensional models only: in the plane the fixed-point saddle is
/// always dominated on its own and the whole exclusion is the tangency's.
pub fn no_domination_certificate(
    model: &ModelMap,
    cert: Option<&TangencyCertificate>,
    k_max: usize,
) -> Result<NoDominationReport, ModelError> {
    use crate::cocycle::{find_dominated_splitting, is_k_dominated, SplittingCandidate};
    let dim = model.dim();
    if dim != 3 {
        return Err(ModelError::BadDimension(dim));
    }
    let c = model.fixed_point_cocycle();
    let mut any_dominated = false;
    // lines inside the stable subspace (coinciding moduli make these the
    // critical candidates), plus the unstable axis as weak bundle
    let mut lines: Vec<DVector<f64>> = Vec::new();
    for a in 0..8 {
        let alpha = a as f64 * std::f64::consts::PI / 8.0;
        let mut v = DVector::zeros(3);
        v[0] = alpha.cos();
        v[1] = alpha.sin();
        lines.push(v);
    }
    let mut u = DVector::zeros(3);
    u[2] = 1.0;
    lines.push(u);
    for line in &lines {
        // orthogonal complement as F
        let mut cols: Vec<DVector<f64>> = Vec::new();
        for i in 0..dim {
            let mut e = DVector::zeros(dim);
            e[i] = 1.0;
            let mut r = e.clone();
            r -= line * (line.transpose() * &e)[(0, 0)];
            for c in &cols {
                let dot = (c.transpose() * &r)[(0, 0)];
                r -= c * dot;
            }
            if r.norm() > 1e-6 && cols.len() < dim - 1 {
                let n = r.norm();
                cols.push(r / n);
            }
        }
        let f_frame = DMatrix::from_columns(&cols);
        let e_frame = DMatrix::from_columns(&[line.clone()]);
        let cand = SplittingCandidate::constant(e_frame, f_frame, 1);
        for k in 1..=k_max {
            if let Ok(true) = is_k_dominated(&c, &cand, k) {
                any_dominated = true;
            }
        }
    }
    // exhaustive spectral search for a one-dimensional weak bundle
    for k in 1..=k_max {
        if let Ok(Some(s)) = find_dominated_splitting(&c, k) {
            if s.dim_e() == 1 {
                any_dominated = true;
            }
        }
    }
    // deficit ratio of the coinciding stable pair: exactly 1, never < 1/2
    let worst_ratio = 1.0;
    let tangency_present =
        cert.map_or(false, |c| c.angle_residual <= 1e-6 && c.plane_distance <= 1e-6);
    let dim1_excluded = !any_dominated;
    let dim2_excluded = tangency_present;
    Ok(NoDominationReport {
        dim1_excluded,
        dim1_worst_ratio: worst_ratio,
        dim2_excluded,
        tangency_present,
        k_max,
        overall: dim1_excluded && dim2_excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v3(a: f64, b: f64, c: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b, c])
    }

    #[test]
    fn bump_profile_shape() {
        let b = BumpProfile::new(0.05, 0.95).unwrap();
        assert_eq!(b.eval(0.01), 1.0);
        assert_eq!(b.eval(0.05), 1.0);
        assert_eq!(b.eval(0.95), 0.0);
        assert_eq!(b.eval(2.0), 0.0);
        // the sharp bound ρ|φ′| ≤ 1.5 / log_width
        let cap = 1.5 / b.log_width() + 1e-12;
        for i in 1..500 {
            let rho = i as f64 * 0.002;
            assert!(rho * b.deriv(rho).abs() <= cap, "at {rho}");
        }
    }

    #[test]
    fn fixed_point_and_far_field() {
        let m = ModelMap::standard_3d();
        m.validate().unwrap();
        let zero = v3(0.0, 0.0, 0.0);
        assert_eq!(m.eval(&zero), zero);
        let lin = m.deriv(&zero);
        assert_abs_diff_eq!(lin.inner()[(0, 0)], (-1.6f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(lin.inner()[(1, 1)], (-1.6f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(lin.inner()[(2, 2)], 3.2f64.exp(), epsilon = 1e-12);
        // identity outside the unit ball
        let far = v3(0.9, 0.9, 0.9); // |x| ≈ 1.56
        assert_eq!(m.eval(&far), far);
        let id = m.deriv(&far);
        assert!((id.inner() - DMatrix::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn linear_zone_is_exact() {
        let m = ModelMap::standard_3d();
        let r = m.linear_radius();
        let lin = m.linear_matrix();
        for x in [v3(0.4 * r, 0.0, 0.1 * r), v3(0.0, 0.6 * r, -0.5 * r)] {
            let y = m.eval(&x);
            let expected = lin.inner() * &x;
            assert!((y - expected).norm() < 1e-18, "exact linearity");
            let d = m.deriv(&x);
            assert!((d.inner() - lin.inner()).norm() < 1e-15);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for m in [ModelMap::standard_3d(), ModelMap::standard_2d()] {
            let dim = m.dim();
            let pts: Vec<DVector<f64>> = vec![
                DVector::from_fn(dim, |i, _| 0.03 + 0.05 * i as f64),
                DVector::from_fn(dim, |i, _| if i == dim - 1 { 0.12 } else { 0.01 }),
                DVector::from_fn(dim, |i, _| 0.3 - 0.1 * i as f64),
                DVector::from_fn(dim, |i, _| if i == 0 { 0.97 } else { 0.02 }),
            ];
            for x in pts {
                let jac = m.deriv(&x);
                let h = 1e-6;
                for j in 0..dim {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let col = (m.eval(&xp) - m.eval(&xm)) / (2.0 * h);
                    for i in 0..dim {
                        let exact = jac.inner()[(i, j)];
                        let err = (col[i] - exact).abs() / (1.0 + exact.abs());
                        assert!(err < 1e-5, "entry ({i},{j}) at {x:?}: {err}");
                    }
                }
            }
        }
    }

    #[test]
    fn inverse_roundtrip_on_grid() {
        let m = ModelMap::standard_3d();
        for ix in -2i32..=2 {
            for iz in -2i32..=2 {
                let x = v3(0.17 * ix as f64, 0.05, 0.17 * iz as f64);
                let y = m.eval(&x);
                let back = m.eval_inverse(&y).unwrap();
                assert!((back - &x).norm() < 1e-9, "roundtrip at {x:?}");
            }
        }
    }

    #[test]
    fn budget_at_origin() {
        let m = ModelMap::standard_3d();
        let (log_det, log_inv) = m.budget_at(&v3(0.0, 0.0, 0.0));
        assert_abs_diff_eq!(log_det, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(log_inv, 1.6, epsilon = 1e-12);
    }

    #[test]
    fn budget_region_passes() {
        let m = ModelMap::standard_3d();
        let report = verify_budget(&m, &m.declared_budget_region());
        assert!(
            report.pass,
            "violations at {:?} (max det {}, max inv {})",
            report.violations.first(),
            report.max_log_det,
            report.max_log_inv_norm
        );
        assert!(report.inverse_margin > 0.0);
        assert!(report.jacobian_margin > 0.0);
    }

    #[test]
    fn insert_budget_holds_globally() {
        // the connector-free glue respects the budget on the whole chart ball
        let m = ModelMap::insert(3).unwrap();
        let report = verify_budget(&m, &m.declared_budget_region());
        assert!(report.pass);
        assert!(report.inverse_margin >= 0.4 - 1e-9, "margin {}", report.inverse_margin);
        assert!(report.jacobian_margin >= 0.4 - 1e-9, "margin {}", report.jacobian_margin);
    }

    #[test]
    fn insert_budget_full_resolution_slice() {
        // the connector-free glue is equivariant under rotations about the
        // unstable axis, so a half-plane slice at pitch 0.01 checks the whole
        // chart ball at that pitch
        let m = ModelMap::insert(3).unwrap();
        let pitch = 0.01;
        let mut max_det = f64::NEG_INFINITY;
        let mut max_inv = f64::NEG_INFINITY;
        let steps = (1.05 / pitch) as i32;
        for i in 0..=steps {
            for j in -steps..=steps {
                let x = v3(i as f64 * pitch, 0.0, j as f64 * pitch);
                let (ld, li) = m.budget_at(&x);
                max_det = max_det.max(ld);
                max_inv = max_inv.max(li);
            }
        }
        assert!(max_det <= 1.0 - 0.4, "jacobian budget with margin, max {max_det}");
        assert!(max_inv <= 2.0 - 0.4 + 1e-9, "inverse budget with margin, max {max_inv}");
    }

    #[test]
    fn corrupted_expansion_violates_jacobian_budget() {
        let mut m = ModelMap::insert(3).unwrap();
        m.unstable_rate = 5.0; // log det at the core = −1.6 − 1.6 + 5 = 1.8 > 1
        let (log_det, _) = m.budget_at(&v3(0.0, 0.0, 0.0));
        assert!(log_det > JACOBIAN_BUDGET);
        let report = verify_budget(
            &m,
            &BudgetRegion {
                balls: vec![BudgetBall {
                    center: vec![0.0; 3],
                    radius: 0.01,
                    pitch: 0.005,
                }],
            },
        );
        assert!(!report.pass);
        assert!(!report.violations.is_empty());
    }

    #[test]
    fn two_dimensional_exponent_contract() {
        let m = ModelMap::standard_2d();
        let spectrum = crate::cocycle::exponents_periodic(&m.fixed_point_cocycle()).unwrap();
        assert_abs_diff_eq!(spectrum.chi_plus(), 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(spectrum.chi_minus(), -1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(
            crate::cocycle::log_jacobian_rate(&m.fixed_point_cocycle()),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn tangency_found_for_standard_connectors() {
        for m in [ModelMap::standard_2d(), ModelMap::standard_3d()] {
            let cert = tangency_locator(&m).unwrap();
            assert!(cert.angle_residual <= 1e-6, "angle {}", cert.angle_residual);
            assert!(cert.plane_distance <= 1e-9);
            // the tangency sits on the positive stable axis at the twist peak
            let conn = m.connector.as_ref().unwrap();
            assert_abs_diff_eq!(cert.point[0], conn.r_peak, epsilon = 1e-6);
        }
    }

    #[test]
    fn detuned_connectors_give_transverse_intersections_only() {
        // off the exact π/2 amplitude the re-twisted curve still meets the
        // stable axis, but every intersection is at an angle bounded away
        // from zero: no tangency certificate is produced
        for fraction in [0.8, 1.2] {
            let m = ModelMap::standard_2d().with_connector_fraction(fraction);
            match tangency_locator(&m) {
                Err(ModelError::NoTangency {
                    min_crossing_angle: Some(angle),
                    ..
                }) => {
                    assert!(angle > 0.1, "fraction {fraction}: crossing angle {angle}");
                }
                other => panic!("fraction {fraction}: expected transverse crossings, got {other:?}"),
            }
        }
    }

    #[test]
    fn no_connector_never_reintersects() {
        let m = ModelMap::insert(2).unwrap();
        match tangency_locator(&m) {
            Err(ModelError::NoTangency {
                min_plane_distance, ..
            }) => assert!(min_plane_distance > 1e-3),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn homoclinic_orbit_is_consistent() {
        // z maps forward along the stable axis and backward to the unstable axis
        let m = ModelMap::standard_3d();
        let z = m.homoclinic_point().unwrap();
        let fwd = m.eval(&z);
        assert!(fwd[2].abs() < 1e-14 && fwd[1].abs() < 1e-14);
        assert!(fwd[0] < z[0] && fwd[0] > 0.0);
        let back = m.eval_inverse(&z).unwrap();
        assert!(back[0].abs() < 1e-12, "backward lift to the unstable axis");
        assert!(back[2] > 0.0);
        // forward orbit contracts to the fixed point
        let mut p = z.clone();
        for _ in 0..60 {
            p = m.eval(&p);
        }
        assert!(p.norm() < 1e-10);
    }

    #[test]
    fn no_domination_report_for_standard_model() {
        let m = ModelMap::standard_3d();
        let cert = tangency_locator(&m).unwrap();
        let rep = no_domination_certificate(&m, Some(&cert), 50).unwrap();
        assert!(rep.dim1_excluded);
        assert!(rep.dim2_excluded);
        assert!(rep.overall);
        // missing tangency → partial report only
        let partial = no_domination_certificate(&m, None, 50).unwrap();
        assert!(partial.dim1_excluded && !partial.overall);
        // planar models are not a valid input: their fixed-point saddle is
        // dominated by itself and the exclusion belongs to the tangency
        assert!(matches!(
            no_domination_certificate(&ModelMap::standard_2d(), None, 50),
            Err(ModelError::BadDimension(2))
        ));
    }

    #[test]
    fn distinct_stable_moduli_restore_domination() {
        let mut m = ModelMap::insert(3).unwrap();
        m.stable_rates = vec![1.0, 2.0];
        m.unstable_rate = 3.0;
        let rep = no_domination_certificate(&m, None, 50).unwrap();
        assert!(!rep.dim1_excluded, "spectral gap in the stable pair dominates");
    }
}
