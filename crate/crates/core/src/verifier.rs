//! One-stop verification of the structural properties of built objects.
//!
//! The tower checker re-measures geometry by sampling the realized map and
//! re-computes every spectrum from stored matrices; it never trusts the
//! builder's own numbers. Verdicts are machine-readable, and every failure
//! carries a witness.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cocycle::{
    eigenvalue_flags, exponents_periodic, find_dominated_splitting, log_jacobian_rate,
    CocycleError, Mat, PeriodicCocycle,
};
use crate::model::TangencyCertificate;
use crate::tower::{Tower, TowerError};

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("orbit record '{0}' not found")]
    UnknownOrbitId(String),
    #[error("dangling relation: '{from}' refers to unknown record '{to}'")]
    DanglingRelation { from: String, to: String },
    #[error("need at least {needed} stages with certificates, found {found}")]
    NotEnoughStages { needed: usize, found: usize },
    #[error("cocycle admits a {dim_e}+{dim_f} dominated splitting at k = {k}; surgery refused")]
    DominationPresent { k: usize, dim_e: usize, dim_f: usize },
    #[error("log-Jacobian rate {0:.4} exceeds the 0.05 window for surgery")]
    JacobianTooLarge(f64),
    #[error("surgery search exhausted: best sink radius {best_sink:.4}, best source inverse radius {best_source:.4}")]
    SearchExhausted { best_sink: f64, best_source: f64 },
    #[error("cocycle error: {0}")]
    Cocycle(#[from] CocycleError),
    #[error("tower error: {0}")]
    Tower(#[from] TowerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// One checked item: stable id, verdict, numeric margin, optional observed
/// value and failing witness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictItem {
    pub id: String,
    pub verdict: Verdict,
    pub margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

impl VerdictItem {
    fn pass(id: &str, margin: f64) -> Self {
        Self {
            id: id.into(),
            verdict: Verdict::Pass,
            margin,
            observed: None,
            witness: None,
        }
    }

    fn fail(id: &str, margin: f64, witness: String) -> Self {
        Self {
            id: id.into(),
            verdict: Verdict::Fail,
            margin,
            observed: None,
            witness: Some(witness),
        }
    }

    fn with_observed(mut self, v: f64) -> Self {
        self.observed = Some(v);
        self
    }

    fn tagged(mut self, tag: &str) -> Self {
        self.witness = Some(tag.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictReport {
    pub items: Vec<VerdictItem>,
    pub pass: bool,
}

impl VerdictReport {
    pub fn from_items(items: Vec<VerdictItem>) -> Self {
        let pass = items.iter().all(VerdictItem::passed);
        Self { items, pass }
    }

    pub fn item(&self, id: &str) -> Option<&VerdictItem> {
        self.items.iter().find(|i| i.id == id)
    }
}

/// Deterministic sample points spread through a ball (boundary-biased).
fn sample_ball(center: &DVector<f64>, radius: f64, dim: usize, count: usize) -> Vec<DVector<f64>> {
    let golden = 0.6180339887498949f64;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut p = center.clone();
        // bias toward the boundary, where containment margins are tight
        let frac = (i as f64 + 0.5) / count as f64;
        let r = radius * frac.powf(1.0 / (dim as f64 + 1.0));
        let a = 2.0 * std::f64::consts::PI * ((i as f64 * golden) % 1.0);
        match dim {
            2 => {
                p[0] += r * a.cos();
                p[1] += r * a.sin();
            }
            _ => {
                let z = 2.0 * (((i as f64 * 0.7548776662466927) % 1.0) - 0.5);
                let xy = (1.0 - z * z).sqrt();
                p[0] += r * xy * a.cos();
                p[1] += r * xy * a.sin();
                p[2] += r * z;
            }
        }
        out.push(p);
    }
    out
}

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_vec(v.to_vec())
}

/// Independent re-measurement of the seven structural tower properties:
/// nesting, attracting cycle, repelling cycle, diameter decay, period growth,
/// derivative budget, exponent certificates.
pub fn check_tower_invariants(
    tower: &Tower,
    word: &[u8],
    samples_per_disk: usize,
) -> Result<VerdictReport, VerifierError> {
    let stages = tower.stages(word)?;
    let map = tower.realized();
    let mut items = Vec::new();
    let diameter = |d: &crate::tower::Disk| 2.0 * d.radius;

    // nesting: R_n ⊂ A_n and A_{n+1} ⊂ R_n, componentwise with margin
    {
        let mut margin = f64::INFINITY;
        let mut witness = None;
        for stage in &stages {
            for (i, (a, r)) in stage.attracting.iter().zip(&stage.repelling).enumerate() {
                let gap = a.radius - r.radius; // concentric disks
                if gap < margin {
                    margin = gap;
                }
                if gap <= 0.0 && witness.is_none() {
                    witness = Some(format!(
                        "repelling disk ({}, {i}) not inside its attracting disk",
                        stage.level
                    ));
                }
            }
        }
        for w in stages.windows(2) {
            let (coarse, fine) = (&w[0], &w[1]);
            for (j, a) in fine.attracting.iter().enumerate() {
                let best = coarse
                    .repelling
                    .iter()
                    .map(|r| r.radius - ((dv(&a.center) - dv(&r.center)).norm() + a.radius))
                    .fold(f64::NEG_INFINITY, f64::max);
                if best < margin {
                    margin = best;
                }
                if best <= 0.0 && witness.is_none() {
                    witness = Some(format!(
                        "attracting disk ({}, {j}) escapes every repelling disk of stage {}",
                        fine.level, coarse.level
                    ));
                }
            }
        }
        items.push(match witness {
            None => VerdictItem::pass("nesting", margin),
            Some(wit) => VerdictItem::fail("nesting", margin, wit),
        });
    }

    // attracting cycle: sampled forward images interior to the successor disk
    {
        let mut margin = f64::INFINITY;
        let mut witness = None;
        for stage in &stages {
            let m = stage.attracting.len();
            for (i, disk) in stage.attracting.iter().enumerate() {
                let next = &stage.attracting[(i + 1) % m];
                let nc = dv(&next.center);
                for s in sample_ball(&dv(&disk.center), disk.radius, tower.dim, samples_per_disk) {
                    match map.eval(&s) {
                        Ok(img) => {
                            let gap = next.radius - (img - &nc).norm();
                            if gap < margin {
                                margin = gap;
                            }
                            if gap <= 0.0 && witness.is_none() {
                                witness = Some(format!(
                                    "image of disk ({}, {i}) escapes disk ({}, {})",
                                    stage.level,
                                    stage.level,
                                    (i + 1) % m
                                ));
                            }
                        }
                        Err(_) => {
                            margin = f64::NEG_INFINITY;
                            witness.get_or_insert(format!(
                                "disk ({}, {i}) leaves the map domain",
                                stage.level
                            ));
                        }
                    }
                }
            }
        }
        items.push(match witness {
            None => VerdictItem::pass("attracting-cycle", margin),
            Some(wit) => VerdictItem::fail("attracting-cycle", margin, wit),
        });
    }

    // repelling cycle: sampled preimages interior to the predecessor disk
    {
        let mut margin = f64::INFINITY;
        let mut witness = None;
        for stage in &stages {
            let m = stage.repelling.len();
            for (i, disk) in stage.repelling.iter().enumerate() {
                let prev = &stage.repelling[(i + m - 1) % m];
                let pc = dv(&prev.center);
                for s in sample_ball(&dv(&disk.center), disk.radius, tower.dim, samples_per_disk) {
                    match map.eval_inverse(&s) {
                        Ok(pre) => {
                            let gap = prev.radius - (pre - &pc).norm();
                            if gap < margin {
                                margin = gap;
                            }
                            if gap <= 0.0 && witness.is_none() {
                                witness = Some(format!(
                                    "preimage of repelling disk ({}, {i}) escapes disk ({}, {})",
                                    stage.level,
                                    stage.level,
                                    (i + m - 1) % m
                                ));
                            }
                        }
                        Err(e) => {
                            margin = f64::NEG_INFINITY;
                            witness.get_or_insert(format!(
                                "repelling disk ({}, {i}) preimage undefined: {e}",
                                stage.level
                            ));
                        }
                    }
                }
            }
        }
        items.push(match witness {
            None => VerdictItem::pass("repelling-cycle", margin),
            Some(wit) => VerdictItem::fail("repelling-cycle", margin, wit),
        });
    }

    // diameter decay: max diameters strictly decreasing, ratio at most 1/2
    {
        let mut worst_ratio = 0.0f64;
        let mut witness = None;
        for w in stages.windows(2) {
            let d0 = w[0].attracting.iter().map(&diameter).fold(0.0, f64::max);
            let d1 = w[1].attracting.iter().map(&diameter).fold(0.0, f64::max);
            let ratio = d1 / d0;
            if ratio > worst_ratio {
                worst_ratio = ratio;
            }
            if ratio > 0.5 && witness.is_none() {
                witness = Some(format!(
                    "stage {} diameter ratio {ratio:.3} exceeds 1/2",
                    w[1].level
                ));
            }
        }
        let item = match witness {
            None => VerdictItem::pass("diameter-decay", 0.5 - worst_ratio),
            Some(wit) => VerdictItem::fail("diameter-decay", 0.5 - worst_ratio, wit),
        };
        items.push(item.with_observed(worst_ratio));
    }

    // period growth: m_{n+1} = b·m_n with b ≥ 2
    {
        let mut witness = None;
        let mut min_factor = f64::INFINITY;
        for w in tower.periods.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a || b % a != 0 {
                witness.get_or_insert(format!("periods {a} → {b} break multiplicative growth"));
            }
            min_factor = min_factor.min(b as f64 / a as f64);
        }
        let item = match witness {
            None => VerdictItem::pass("period-growth", min_factor - 2.0),
            Some(wit) => VerdictItem::fail("period-growth", min_factor - 2.0, wit),
        };
        items.push(item.with_observed(min_factor));
    }

    // derivative budget over sampled points of the stage-1 family
    {
        let mut max_det = f64::NEG_INFINITY;
        let mut max_inv = f64::NEG_INFINITY;
        let mut witness = None;
        for stage in &stages {
            for disk in &stage.attracting {
                let mut points =
                    sample_ball(&dv(&disk.center), disk.radius, tower.dim, samples_per_disk);
                points.push(dv(&disk.center));
                for s in points {
                    if let Ok((ld, li)) = map.budget_at(&s) {
                        if ld > max_det {
                            max_det = ld;
                            if ld >= 1.0 {
                                witness.get_or_insert(format!(
                                    "log|det Df| = {ld:.3} near stage {}",
                                    stage.level
                                ));
                            }
                        }
                        if li > max_inv {
                            max_inv = li;
                            if li >= 2.0 {
                                witness.get_or_insert(format!(
                                    "log‖Df⁻¹‖ = {li:.3} near stage {}",
                                    stage.level
                                ));
                            }
                        }
                    }
                }
            }
        }
        let margin = (1.0 - max_det).min(2.0 - max_inv);
        let item = match witness {
            None => VerdictItem::pass("derivative-budget", margin),
            Some(wit) => VerdictItem::fail("derivative-budget", margin, wit),
        };
        items.push(item.with_observed(max_inv));
    }

    // exponent certificates: p_n in R_n, χ⁺ beyond the dimensional threshold,
    // −2 < χ⁻ < −1 (recomputed from the stored matrices)
    {
        let threshold = chi_plus_threshold(tower.dim);
        let mut witness = None;
        let mut margin = f64::INFINITY;
        let mut observed = f64::INFINITY;
        for stage in &stages {
            let spectrum = exponents_periodic(&stage.cert.cocycle)?;
            let chi_plus = spectrum.chi_plus();
            let chi_minus = spectrum.chi_minus();
            observed = observed.min(chi_plus);
            for (name, slack) in [
                ("χ⁺ > 3", chi_plus - threshold),
                ("χ⁻ > −2", chi_minus + 2.0),
                ("χ⁻ < −1", -1.0 - chi_minus),
            ] {
                if slack < margin {
                    margin = slack;
                }
                if slack <= 0.0 && witness.is_none() {
                    witness = Some(format!(
                        "stage {}: {name} fails with slack {slack:.3}",
                        stage.level
                    ));
                }
            }
            let inside = stage
                .repelling
                .iter()
                .any(|r| (dv(&stage.cert.point) - dv(&r.center)).norm() <= r.radius);
            if !inside && witness.is_none() {
                witness = Some(format!(
                    "stage {}: certificate point outside the repelling family",
                    stage.level
                ));
            }
        }
        let item = match witness {
            None => VerdictItem::pass("exponent-certificates", margin),
            Some(wit) => VerdictItem::fail("exponent-certificates", margin, wit),
        };
        items.push(item.with_observed(observed));
    }

    Ok(VerdictReport::from_items(items))
}

/// Lower threshold on the top certificate exponent: the three-dimensional
/// construction certifies χ⁺ > 3, the planar one χ⁺ > 1.
pub fn chi_plus_threshold(dim: usize) -> f64 {
    if dim == 3 {
        3.0
    } else {
        1.0
    }
}

/// Measured budget extremes over the sampled stage-1 family:
/// (max log|det Df|, max log‖Df⁻¹‖). Feed these into
/// [`center_exponent_bound`] as the measured slacks of a built tower.
pub fn measured_budget(
    tower: &Tower,
    word: &[u8],
    samples_per_disk: usize,
) -> Result<(f64, f64), VerifierError> {
    let stages = tower.stages(word)?;
    let map = tower.realized();
    let mut max_det = f64::NEG_INFINITY;
    let mut max_inv = f64::NEG_INFINITY;
    for stage in &stages {
        for disk in &stage.attracting {
            let mut points = sample_ball(&dv(&disk.center), disk.radius, tower.dim, samples_per_disk);
            points.push(dv(&disk.center));
            for s in points {
                if let Ok((ld, li)) = map.budget_at(&s) {
                    max_det = max_det.max(ld);
                    max_inv = max_inv.max(li);
                }
            }
        }
    }
    Ok((max_det, max_inv))
}

/// Strict upper bound on the middle exponent from the Jacobian identity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CenterExponentBound {
    /// χᶜ is strictly below this value.
    pub strict_upper_bound: f64,
    /// True when the bound forces a hyperbolic limit measure: the bound is
    /// non-positive while χ⁺ is positive and χ⁻ negative.
    pub hyperbolic_limit: bool,
}

/// The arithmetic chain: J = χ⁻ + χᶜ + χ⁺ with J < J_ub, χ⁺ ≥ χ⁺_lb and
/// χ⁻ ≥ χ⁻_lo gives χᶜ < J_ub − χ⁺_lb − χ⁻_lo (strict because the Jacobian
/// bound is strict); the verdict additionally requires χ⁺_lb > 0, χ⁻_hi < 0.
pub fn center_exponent_bound(
    chi_plus_lb: f64,
    chi_minus_bounds: (f64, f64),
    jacobian_ub: f64,
) -> CenterExponentBound {
    let (lo, hi) = chi_minus_bounds;
    if lo >= hi {
        // unordered bounds carry no information (measured slacks of a
        // corrupted build can end up here); the verdict is inconclusive
        return CenterExponentBound {
            strict_upper_bound: f64::INFINITY,
            hyperbolic_limit: false,
        };
    }
    let bound = jacobian_ub - chi_plus_lb - lo;
    CenterExponentBound {
        strict_upper_bound: bound,
        hyperbolic_limit: bound <= 0.0 && chi_plus_lb > 0.0 && hi < 0.0,
    }
}

/// Per-stage exponent thresholds plus the implied limit-measure bounds
/// (conditional on upper semicontinuity of χ⁺ along the stage measures).
pub fn check_exponent_chain(
    stages: &[crate::tower::TowerStage],
) -> Result<VerdictReport, VerifierError> {
    if stages.len() < 2 {
        return Err(VerifierError::NotEnoughStages {
            needed: 2,
            found: stages.len(),
        });
    }
    let threshold = chi_plus_threshold(stages[0].cert.cocycle.dim());
    let mut items = Vec::new();
    let mut min_plus = f64::INFINITY;
    let mut max_minus = f64::NEG_INFINITY;
    for stage in stages {
        let spectrum = exponents_periodic(&stage.cert.cocycle)?;
        min_plus = min_plus.min(spectrum.chi_plus());
        max_minus = max_minus.max(spectrum.chi_minus());
        let id = format!("stage-{}-exponents", stage.level);
        let margin = (spectrum.chi_plus() - threshold).min(-1.0 - spectrum.chi_minus());
        let item = if margin > 0.0 {
            VerdictItem::pass(&id, margin)
        } else {
            VerdictItem::fail(
                &id,
                margin,
                format!(
                    "stage {}: (χ⁺, χ⁻) = ({:.3}, {:.3}) outside (>{threshold}, <−1)",
                    stage.level,
                    spectrum.chi_plus(),
                    spectrum.chi_minus()
                ),
            )
        };
        items.push(item.with_observed(spectrum.chi_plus()));
    }
    // implied bounds for the limit measure, conditional on semicontinuity
    items.push(VerdictItem::pass("limit-chi-plus", min_plus - threshold).with_observed(min_plus));
    items.push(VerdictItem::pass("limit-chi-minus", -1.0 - max_minus).with_observed(max_minus));
    Ok(VerdictReport::from_items(items))
}

/// A named periodic orbit with its derivative data and declared relations.
/// Relational facts (homoclinic, robust cycle) are metadata: they are not
/// recomputed, and reports label them as declared.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub id: String,
    pub cocycle: PeriodicCocycle,
    #[serde(default)]
    pub homoclinic_to: Vec<String>,
    #[serde(default)]
    pub robust_cycle_with: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<Vec<f64>>,
}

fn related(a: &OrbitRecord, b: &OrbitRecord, robust: bool) -> bool {
    let (la, lb) = if robust {
        (&a.robust_cycle_with, &b.robust_cycle_with)
    } else {
        (&a.homoclinic_to, &b.homoclinic_to)
    };
    la.contains(&b.id) || lb.contains(&a.id)
}

/// Companion-saddle profile of a record `p`: a complex-stable companion
/// homoclinically related to it, a complex-unstable companion in a declared
/// robust cycle with it, and a homoclinically related pair straddling zero
/// Jacobian with exponents beyond (3, −1). Eigenvalue flags and Jacobian
/// signs are recomputed from the stored cocycles; the relations themselves
/// are declared metadata.
pub fn check_companion_saddles(
    db: &[OrbitRecord],
    p_id: &str,
) -> Result<VerdictReport, VerifierError> {
    let p = db
        .iter()
        .find(|r| r.id == p_id)
        .ok_or_else(|| VerifierError::UnknownOrbitId(p_id.into()))?;
    for r in db {
        for to in r.homoclinic_to.iter().chain(&r.robust_cycle_with) {
            if !db.iter().any(|x| &x.id == to) {
                return Err(VerifierError::DanglingRelation {
                    from: r.id.clone(),
                    to: to.clone(),
                });
            }
        }
    }
    let mut items = Vec::new();

    let complex_stable_companion = db.iter().find(|q| {
        q.id != p.id && related(p, q, false) && matches!(eigenvalue_flags(&q.cocycle), Ok((true, _)))
    });
    items.push(match complex_stable_companion {
        Some(q) => VerdictItem::pass("complex-stable-companion", 0.0)
            .tagged(&format!("{} (relation declared)", q.id)),
        None => VerdictItem::fail(
            "complex-stable-companion",
            -1.0,
            "no homoclinically related record with complex stable eigenvalues".into(),
        ),
    });

    let complex_unstable_companion = db.iter().find(|q| {
        q.id != p.id && related(p, q, true) && matches!(eigenvalue_flags(&q.cocycle), Ok((_, true)))
    });
    items.push(match complex_unstable_companion {
        Some(q) => VerdictItem::pass("complex-unstable-robust-cycle", 0.0)
            .tagged(&format!("{} (relation declared)", q.id)),
        None => VerdictItem::fail(
            "complex-unstable-robust-cycle",
            -1.0,
            "no robust-cycle record with complex unstable eigenvalues".into(),
        ),
    });

    // straddling pair: some related pair with Jacobian rates of both signs,
    // preferring one whose members also satisfy the exponent thresholds
    let related_records: Vec<(&OrbitRecord, f64)> = db
        .iter()
        .filter(|q| q.id != p.id && related(p, q, false))
        .map(|q| (q, log_jacobian_rate(&q.cocycle)))
        .collect();
    let meets_thresholds = |q: &OrbitRecord| -> Result<bool, VerifierError> {
        let s = exponents_periodic(&q.cocycle)?;
        Ok(s.chi_plus() > 3.0 && s.chi_minus() < -1.0)
    };
    let mut sign_pair: Option<(String, String, f64)> = None;
    let mut full_pair: Option<(String, String, f64)> = None;
    for (qm, jm) in related_records.iter().filter(|(_, j)| *j < 0.0) {
        for (qp, jp) in related_records.iter().filter(|(_, j)| *j > 0.0) {
            let strength = jm.abs().min(*jp);
            if sign_pair.is_none() {
                sign_pair = Some((qm.id.clone(), qp.id.clone(), strength));
            }
            if full_pair.is_none() && meets_thresholds(qm)? && meets_thresholds(qp)? {
                full_pair = Some((qm.id.clone(), qp.id.clone(), strength));
            }
        }
    }
    match (&sign_pair, &full_pair) {
        (_, Some((m, p2, strength))) => {
            items.push(
                VerdictItem::pass("jacobian-straddle", *strength).tagged(&format!("{m} / {p2}")),
            );
            items.push(
                VerdictItem::pass("straddle-exponent-thresholds", 0.0)
                    .tagged(&format!("{m} / {p2}")),
            );
        }
        (Some((m, p2, strength)), None) => {
            items.push(
                VerdictItem::pass("jacobian-straddle", *strength).tagged(&format!("{m} / {p2}")),
            );
            items.push(VerdictItem::fail(
                "straddle-exponent-thresholds",
                -1.0,
                "no straddling pair satisfies χ⁺ > 3 and χ⁻ < −1".into(),
            ));
        }
        (None, _) => {
            items.push(VerdictItem::fail(
                "jacobian-straddle",
                -1.0,
                "missing homoclinically related records with Jacobian rates of both signs".into(),
            ));
            items.push(VerdictItem::fail(
                "straddle-exponent-thresholds",
                -1.0,
                "no straddling pair".into(),
            ));
        }
    }
    Ok(VerdictReport::from_items(items))
}

/// Zero-Jacobian non-dominated saddle profile: exponents beyond (3, −1) with
/// vanishing Jacobian rate, and no dominated splitting up to `k_max`
/// (checked spectrally) together with a tangency certificate.
pub fn check_nondominated_saddle(
    p: &OrbitRecord,
    cert: Option<&TangencyCertificate>,
    k_max: usize,
) -> Result<VerdictReport, VerifierError> {
    let mut items = Vec::new();
    let s = exponents_periodic(&p.cocycle)?;
    let j = log_jacobian_rate(&p.cocycle);
    let thresholds_ok = s.chi_minus() < -1.0 && s.chi_plus() > 3.0 && j.abs() <= 1e-9;
    let margin = (s.chi_plus() - 3.0)
        .min(-1.0 - s.chi_minus())
        .min(1e-9 - j.abs());
    items.push(if thresholds_ok {
        VerdictItem::pass("zero-jacobian-saddle", margin).with_observed(j)
    } else {
        VerdictItem::fail(
            "zero-jacobian-saddle",
            margin,
            format!(
                "(χ⁺, χ⁻, J) = ({:.3}, {:.3}, {:.2e})",
                s.chi_plus(),
                s.chi_minus(),
                j
            ),
        )
        .with_observed(j)
    });

    // dominated splittings of the periodic cocycle alone: a weak bundle of
    // dimension below d−1 survives along the homoclinic orbit and refutes
    // the property outright; the codim-1 splitting is exactly the one the
    // tangency destroys (the unstable tangent at the tangency point lies in
    // the stable tangent space, so no continuous invariant complement
    // extends over the union of the orbits)
    let dim = p.cocycle.dim();
    let mut thin_split: Option<(usize, usize)> = None;
    let mut codim1_split: Option<usize> = None;
    for k in 1..=k_max {
        if let Some(split) = find_dominated_splitting(&p.cocycle, k)? {
            if split.dim_e() < dim - 1 {
                thin_split = Some((k, split.dim_e()));
                break;
            } else if codim1_split.is_none() {
                codim1_split = Some(k);
            }
        }
    }
    let tangency = cert.map_or(false, |c| c.angle_residual <= 1e-6 && c.plane_distance <= 1e-6);
    items.push(match (thin_split, tangency) {
        (Some((k, dim_e)), _) => VerdictItem::fail(
            "no-domination",
            -1.0,
            format!("dominated splitting with dim E = {dim_e} found at k = {k}"),
        ),
        (None, true) => VerdictItem::pass("no-domination", 0.0).tagged(
            "no thin dominated splitting; the codim-1 splitting is excluded by the tangency",
        ),
        (None, false) => VerdictItem::fail(
            "no-domination",
            -1.0,
            match codim1_split {
                Some(k) => format!(
                    "dominated splitting with dim E = {} found at k = {k} and no tangency \
                     certificate excludes it",
                    dim - 1
                ),
                None => "tangency certificate missing".into(),
            },
        ),
    });
    Ok(VerdictReport::from_items(items))
}

/// Result of the sink/source surgery on a non-dominated zero-Jacobian cocycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurgeryOutcome {
    pub sink: PeriodicCocycle,
    pub source: PeriodicCocycle,
    /// max over i of ‖P_i − Id‖ across both outputs.
    pub perturbation_norm: f64,
    /// Spectral radius of the sink period product (< 1).
    pub sink_radius: f64,
    /// Spectral radius of the inverse of the source period product (< 1).
    pub source_inverse_radius: f64,
}

fn spectral_radius_of_product(c: &PeriodicCocycle) -> Result<f64, CocycleError> {
    let s = exponents_periodic(c)?;
    Ok((s.chi_plus() * c.period() as f64).exp())
}

fn rotation_in_plane(dim: usize, i: usize, j: usize, theta: f64) -> Mat {
    let mut m = DMatrix::identity(dim, dim);
    let (s, c) = theta.sin_cos();
    m[(i, i)] = c;
    m[(i, j)] = -s;
    m[(j, i)] = s;
    m[(j, j)] = c;
    Mat::new(m).expect("rotation")
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Turn a non-dominated, nearly volume-neutral periodic cocycle into a sink
/// and into a source by perturbations `A_i ↦ P_i·A_i` with ‖P_i − Id‖ ≤ ε.
///
/// Strategy: a uniform homothety 1 ∓ η with η ≤ ε/2, optionally composed
/// with small rotations mixing the weakest expanding and strongest
/// contracting directions when the homothety alone does not close the gap.
pub fn surgery_sink_source(
    c: &PeriodicCocycle,
    epsilon: f64,
    k_max: usize,
) -> Result<SurgeryOutcome, VerifierError> {
    for k in 1..=k_max {
        if let Some(split) = find_dominated_splitting(c, k)? {
            return Err(VerifierError::DominationPresent {
                k,
                dim_e: split.dim_e(),
                dim_f: split.dim_f(),
            });
        }
    }
    let j_rate = log_jacobian_rate(c);
    if j_rate.abs() > 0.05 {
        return Err(VerifierError::JacobianTooLarge(j_rate));
    }

    let dim = c.dim();
    let identity = DMatrix::<f64>::identity(dim, dim);
    let planes: Vec<(usize, usize)> = match dim {
        2 => vec![(0, 1)],
        _ => vec![(0, 1), (0, 2), (1, 2)],
    };
    let mut angle_grid = vec![0.0];
    for f in [0.25, 0.5] {
        angle_grid.push(f * epsilon);
        angle_grid.push(-f * epsilon);
    }

    let perturb = |factor: f64, rot: &Mat| -> (PeriodicCocycle, f64) {
        let p = rot.inner() * factor;
        let norm = spectral_norm(&(&p - &identity));
        let mats = c
            .matrices()
            .iter()
            .map(|a| Mat::new(&p * a.inner()).expect("invertible"))
            .collect();
        (PeriodicCocycle::new(dim, mats).expect("same shape"), norm)
    };

    let mut best_sink: Option<(PeriodicCocycle, f64, f64)> = None;
    let mut best_source: Option<(PeriodicCocycle, f64, f64)> = None;
    'search: for &theta in &angle_grid {
        for &(pi, pj) in &planes {
            let rot = rotation_in_plane(dim, pi, pj, theta);
            for eta_frac in [0.5, 0.25] {
                let eta = eta_frac * epsilon;
                let (sink, norm) = perturb(1.0 - eta, &rot);
                if norm <= epsilon {
                    if let Ok(r) = spectral_radius_of_product(&sink) {
                        if best_sink.as_ref().map_or(true, |(_, br, _)| r < *br) {
                            best_sink = Some((sink, r, norm));
                        }
                    }
                }
                let (source, norm) = perturb(1.0 + eta, &rot);
                if norm <= epsilon {
                    if let Ok(rinv) = spectral_radius_of_product(&source.inverse()) {
                        if best_source.as_ref().map_or(true, |(_, br, _)| rinv < *br) {
                            best_source = Some((source, rinv, norm));
                        }
                    }
                }
            }
            if theta == 0.0 {
                break; // rotation is trivial at zero angle, skip other planes
            }
        }
        if let (Some((_, rs, _)), Some((_, ri, _))) = (&best_sink, &best_source) {
            if *rs < 1.0 && *ri < 1.0 {
                break 'search;
            }
        }
    }

    match (best_sink, best_source) {
        (Some((sink, rs, ns)), Some((source, ri, nr))) if rs < 1.0 && ri < 1.0 => Ok(SurgeryOutcome {
            sink,
            source,
            perturbation_norm: ns.max(nr),
            sink_radius: rs,
            source_inverse_radius: ri,
        }),
        (s, r) => Err(VerifierError::SearchExhausted {
            best_sink: s.map_or(f64::INFINITY, |(_, v, _)| v),
            best_source: r.map_or(f64::INFINITY, |(_, v, _)| v),
        }),
    }
}
