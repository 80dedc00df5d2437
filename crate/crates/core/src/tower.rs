//! Nested attracting/repelling disk towers and their realized dynamics.
//!
//! A tower stage at level n is a cycle of m_n round disks permuted by the
//! realized map, with a repelling sub-disk in each, a certified periodic
//! orbit through the disk centers, and (below) the next stage's disks on a
//! ring inside each repelling disk. The realized map is assembled from
//! compactly supported pieces with pairwise disjoint or nested supports, all
//! expressed in the local coordinates of a node (one disk of one stage):
//!
//! * an insert: a scaled connector-free saddle glue carrying the derivative
//!   block diag(e^{−8/5}, [e^{−8/5},] e^{16/5}) at the orbit point;
//! * a ring twist rotating the child ring by 2π/m_{n+1} per step, with a
//!   plateau over the children so they transport rigidly;
//! * an expansion shell straddling the repelling radius (strict nesting
//!   margin for the inverse map);
//! * a contraction shell pulling the attracting disk strictly inside its
//!   successor.
//!
//! Every transition between consecutive disks is a rigid translation composed
//! with these pieces, so the certified cocycle along each periodic orbit
//! multiplies out to an exact power of the saddle block: the per-iterate
//! exponents are (−1.6, [−1.6,] 3.2) at every depth.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cocycle::{exponents_periodic, ExponentSpectrum, Mat, PeriodicCocycle};
use crate::model::ModelMap;
use crate::odometer::DiskNesting;
use crate::profile::{RadialShell, Window};

#[derive(Debug, Error)]
pub enum TowerError {
    #[error("unsupported dimension {0}")]
    BadDimension(usize),
    #[error("seed period must be at least 2, got {0}")]
    SeedPeriodTooSmall(u64),
    #[error("branching factor must be at least 2, got {0}")]
    BranchingTooSmall(u64),
    #[error("next period {next} does not exceed the floor m0 = {m0}")]
    PeriodFloor { next: u64, m0: u64 },
    #[error(
        "derivative budget binds: ring twist angle 2π/{next_period} needs next period ≥ {min_period} \
         (per-step log‖Df⁻¹‖ would exceed the budget in the twist collar)"
    )]
    TwistBudget { next_period: u64, min_period: u64 },
    #[error("requested disk size {requested:.3e} below the numeric feasibility floor {floor:.3e}")]
    Feasibility { requested: f64, floor: f64 },
    #[error("cannot pack {children} children of radius {radius:.3e} on the ring (capacity {capacity})")]
    Packing {
        children: u64,
        radius: f64,
        capacity: u64,
    },
    #[error("point outside the stage-1 attracting family")]
    Domain,
    #[error("inverse undefined at the requested point: {0}")]
    Inverse(String),
    #[error("no stage at level {0} (depth is {1})")]
    NoSuchLevel(usize, usize),
    #[error("branch word {0:?} does not select a ring at level {1}")]
    BadWord(Vec<u8>, usize),
    #[error("model error: {0}")]
    Model(#[from] crate::model::ModelError),
    #[error("horizon {0} exceeds the iteration budget {1}")]
    Horizon(u64, u64),
}

/// Zone layout in units of the node's attracting radius.
///
/// Nesting of supports: insert ⊂ twist hole ⊂ child ring plateau ⊂ twist
/// fall ⊂ expansion shell ⊂ repelling radius ⊂ contraction shell ⊂ disk.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ZoneLayout {
    pub insert: f64,
    pub twist_zero_in: f64,
    pub twist_plateau_lo: f64,
    pub ring_single: f64,
    pub ring_pair: (f64, f64),
    pub twist_plateau_hi: f64,
    pub twist_zero_out: f64,
    pub twist_t_plateau: f64,
    pub twist_t_zero: f64,
    pub x_window: (f64, f64, f64),
    pub x_amp: f64,
    pub repel: f64,
    pub c_window: (f64, f64, f64),
    pub c_amp: f64,
    pub child_max_single: f64,
    pub child_max_pair: f64,
}

impl Default for ZoneLayout {
    fn default() -> Self {
        Self {
            insert: 0.05,
            twist_zero_in: 0.06,
            twist_plateau_lo: 0.11,
            ring_single: 0.17,
            ring_pair: (0.135, 0.205),
            twist_plateau_hi: 0.23,
            twist_zero_out: 0.42,
            twist_t_plateau: 0.07,
            twist_t_zero: 0.38,
            x_window: (0.56, 0.64, 0.84),
            x_amp: 0.025,
            repel: 0.62,
            c_window: (0.82, 1.02, 1.30),
            c_amp: -0.07,
            child_max_single: 0.042,
            child_max_pair: 0.017,
        }
    }
}

impl ZoneLayout {
    fn x_shell(&self) -> RadialShell {
        RadialShell::new(
            Window::new(self.x_window.0, self.x_window.1, self.x_window.2),
            self.x_amp,
        )
    }

    fn c_shell(&self) -> RadialShell {
        RadialShell::new(
            Window::new(self.c_window.0, self.c_window.1, self.c_window.2),
            self.c_amp,
        )
    }

    /// Twist angle profile over the cylindrical radius (plateau window).
    fn twist_profile(&self, rho: f64) -> f64 {
        use crate::profile::smoothstep;
        if rho <= self.twist_zero_in || rho >= self.twist_zero_out {
            0.0
        } else if rho < self.twist_plateau_lo {
            smoothstep((rho - self.twist_zero_in) / (self.twist_plateau_lo - self.twist_zero_in))
        } else if rho <= self.twist_plateau_hi {
            1.0
        } else {
            smoothstep((self.twist_zero_out - rho) / (self.twist_zero_out - self.twist_plateau_hi))
        }
    }

    fn twist_profile_deriv(&self, rho: f64) -> f64 {
        use crate::profile::smoothstep_deriv;
        if rho <= self.twist_zero_in || rho >= self.twist_zero_out {
            0.0
        } else if rho < self.twist_plateau_lo {
            smoothstep_deriv((rho - self.twist_zero_in) / (self.twist_plateau_lo - self.twist_zero_in))
                / (self.twist_plateau_lo - self.twist_zero_in)
        } else if rho <= self.twist_plateau_hi {
            0.0
        } else {
            -smoothstep_deriv(
                (self.twist_zero_out - rho) / (self.twist_zero_out - self.twist_plateau_hi),
            ) / (self.twist_zero_out - self.twist_plateau_hi)
        }
    }

    fn twist_t_factor(&self, t: f64) -> f64 {
        use crate::profile::smoothstep;
        let a = t.abs();
        if a <= self.twist_t_plateau {
            1.0
        } else if a >= self.twist_t_zero {
            0.0
        } else {
            smoothstep((self.twist_t_zero - a) / (self.twist_t_zero - self.twist_t_plateau))
        }
    }

    fn twist_t_factor_deriv(&self, t: f64) -> f64 {
        use crate::profile::smoothstep_deriv;
        let a = t.abs();
        if a <= self.twist_t_plateau || a >= self.twist_t_zero {
            0.0
        } else {
            -t.signum()
                * smoothstep_deriv(
                    (self.twist_t_zero - a) / (self.twist_t_zero - self.twist_t_plateau),
                )
                / (self.twist_t_zero - self.twist_t_plateau)
        }
    }
}

/// One disk of one stage: the orbit point at its center, child rings inside.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Node {
    pub level: usize,
    pub residue: u64,
    /// Offset direction from the parent center (host angle at level 1).
    pub placement_angle: f64,
    /// Orientation of the insert (accumulated ring rotations).
    pub frame_angle: f64,
    pub center: Vec<f64>,
    /// Attracting radius ρ_a of this disk.
    pub radius: f64,
    pub rings: Vec<Ring>,
}

/// Ring of child disks inside a node's repelling disk; a branch pair places
/// two disjoint rings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ring {
    pub branch: u8,
    /// Ring radius in units of the parent radius.
    pub radius_factor: f64,
    /// Per-step rotation 2π/m_{level+1}.
    pub twist_angle: f64,
    pub children: Vec<Node>,
}

/// A round disk (ball in chart coordinates).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Disk {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Disk {
    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }
}

/// Periodic-point certificate: orbit location, stored derivative cocycle and
/// its spectrum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodicPointCert {
    pub point: Vec<f64>,
    pub period: u64,
    pub cocycle: PeriodicCocycle,
    pub spectrum: ExponentSpectrum,
}

/// One level of the tower as seen along a fixed branch word.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TowerStage {
    pub level: usize,
    pub period: u64,
    pub attracting: Vec<Disk>,
    pub repelling: Vec<Disk>,
    pub cert: PeriodicPointCert,
}

/// The full nested construction (possibly a branch forest).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tower {
    pub dim: usize,
    pub host_radius: f64,
    pub layout: ZoneLayout,
    pub insert_model: ModelMap,
    /// m_1, …, m_K.
    pub periods: Vec<u64>,
    /// True at index n−2 when level n was added as a branch pair.
    pub branched: Vec<bool>,
    pub regions: Vec<Node>,
}

const FEASIBILITY_FLOOR: f64 = 1e-7;
/// Smallest admissible m_{n+1}: the ring twist collar keeps log‖Df⁻¹‖ under
/// budget for per-step angles up to 2π/6.
const MIN_TWIST_PERIOD: u64 = 6;

fn rotation(dim: usize, theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    if dim == 2 {
        DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
    } else {
        DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0])
    }
}

fn ring_offset(dim: usize, angle: f64, ring_radius: f64) -> DVector<f64> {
    let mut v = DVector::zeros(dim);
    v[0] = ring_radius * angle.cos();
    v[1] = ring_radius * angle.sin();
    v
}

impl Tower {
    /// Build the first stage: m1 disks on a host ring, each with an insert
    /// and the nesting shells, permuted by rigid translations.
    pub fn seed(dim: usize, m1: u64, delta1: f64) -> Result<Tower, TowerError> {
        if !(dim == 2 || dim == 3) {
            return Err(TowerError::BadDimension(dim));
        }
        if m1 < 2 {
            return Err(TowerError::SeedPeriodTooSmall(m1));
        }
        let insert_model = ModelMap::insert(dim)?;
        // the insert must pass its own budget verification; the model is a
        // fixed constant per dimension, so the grid scan runs once
        static INSERT_BUDGET_OK: [std::sync::OnceLock<bool>; 2] =
            [std::sync::OnceLock::new(), std::sync::OnceLock::new()];
        let ok = *INSERT_BUDGET_OK[dim - 2].get_or_init(|| {
            crate::model::verify_budget(
                &insert_model,
                &crate::model::BudgetRegion {
                    balls: vec![crate::model::BudgetBall {
                        center: vec![0.0; dim],
                        radius: 1.0,
                        pitch: 0.05,
                    }],
                },
            )
            .pass
        });
        if !ok {
            return Err(TowerError::Model(crate::model::ModelError::InvalidParams(
                "insert model fails its derivative budget".into(),
            )));
        }
        let layout = ZoneLayout::default();
        let host_radius = 0.55f64;
        // containment of the contraction-shell support and the neighbor gap
        let packing_cap =
            0.9 * host_radius * (std::f64::consts::PI / m1 as f64).sin() / layout.c_window.2;
        let radius = (0.49 * delta1).min(packing_cap);
        if radius < FEASIBILITY_FLOOR {
            return Err(TowerError::Feasibility {
                requested: radius,
                floor: FEASIBILITY_FLOOR,
            });
        }
        let regions = (0..m1)
            .map(|i| {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / m1 as f64;
                let mut center = vec![0.0; dim];
                center[0] = host_radius * angle.cos();
                center[1] = host_radius * angle.sin();
                Node {
                    level: 1,
                    residue: i,
                    placement_angle: angle,
                    frame_angle: 0.0,
                    center,
                    radius,
                    rings: Vec::new(),
                }
            })
            .collect();
        Ok(Tower {
            dim,
            host_radius,
            layout,
            insert_model,
            periods: vec![m1],
            branched: Vec::new(),
            regions,
        })
    }

    pub fn depth(&self) -> usize {
        self.periods.len()
    }

    pub fn period(&self, level: usize) -> u64 {
        self.periods[level - 1]
    }

    /// Per-step rotation accumulated by a level-n node: Σ_{ℓ=2..n} 2π/m_ℓ.
    fn angle_rate(&self, level: usize) -> f64 {
        self.periods[1..level]
            .iter()
            .map(|&m| 2.0 * std::f64::consts::PI / m as f64)
            .sum()
    }

    fn refine_inner(&mut self, b: u64, delta: f64, m0: u64, pair: bool) -> Result<(), TowerError> {
        if b < 2 {
            return Err(TowerError::BranchingTooSmall(b));
        }
        let level = self.depth();
        let m_level = self.periods[level - 1];
        let m_next = b * m_level;
        if m_next <= m0 {
            return Err(TowerError::PeriodFloor { next: m_next, m0 });
        }
        if m_next < MIN_TWIST_PERIOD {
            return Err(TowerError::TwistBudget {
                next_period: m_next,
                min_period: MIN_TWIST_PERIOD,
            });
        }
        let layout = self.layout;
        let child_cap = if pair {
            layout.child_max_pair
        } else {
            layout.child_max_single
        };
        let ring_factors: Vec<(u8, f64)> = if pair {
            vec![(0, layout.ring_pair.0), (1, layout.ring_pair.1)]
        } else {
            vec![(0, layout.ring_single)]
        };
        let min_ring = ring_factors
            .iter()
            .map(|(_, r)| *r)
            .fold(f64::INFINITY, f64::min);
        let angle_rate_next =
            self.angle_rate(level) + 2.0 * std::f64::consts::PI / m_next as f64;
        let dim = self.dim;

        for node in self.deepest_nodes_mut() {
            // ring packing: children and their shell supports must fit
            let packing_cap =
                0.9 * min_ring * (std::f64::consts::PI / b as f64).sin() / layout.c_window.2;
            let radius = (0.49 * delta)
                .min(node.radius * child_cap)
                .min(node.radius * packing_cap);
            if radius < FEASIBILITY_FLOOR {
                // name the binding constraint: ring capacity or the float floor
                if node.radius * packing_cap < (0.49 * delta).min(node.radius * child_cap) {
                    let capacity = (std::f64::consts::PI
                        / (FEASIBILITY_FLOOR * layout.c_window.2 / (min_ring * node.radius))
                            .asin()
                            .max(1e-12))
                    .floor() as u64;
                    return Err(TowerError::Packing {
                        children: b,
                        radius,
                        capacity,
                    });
                }
                return Err(TowerError::Feasibility {
                    requested: radius,
                    floor: FEASIBILITY_FLOOR,
                });
            }
            let parent_residue = node.residue;
            let parent_center = DVector::from_vec(node.center.clone());
            let parent_radius = node.radius;
            for (branch, ring_factor) in &ring_factors {
                let mut children = Vec::with_capacity(b as usize);
                for k in 0..b {
                    let residue = parent_residue + k * m_level;
                    let angle = residue as f64 * angle_rate_next;
                    let offset = ring_offset(dim, angle, ring_factor * parent_radius);
                    let center = &parent_center + offset;
                    children.push(Node {
                        level: level + 1,
                        residue,
                        placement_angle: angle,
                        frame_angle: angle,
                        center: center.iter().copied().collect(),
                        radius,
                        rings: Vec::new(),
                    });
                }
                node.rings.push(Ring {
                    branch: *branch,
                    radius_factor: *ring_factor,
                    twist_angle: 2.0 * std::f64::consts::PI / m_next as f64,
                    children,
                });
            }
        }
        self.periods.push(m_next);
        self.branched.push(pair);
        Ok(())
    }

    /// One refinement stage: period multiplies by `b`, new disks smaller than
    /// `delta`, new period above `m0`.
    pub fn refine(&mut self, b: u64, delta: f64, m0: u64) -> Result<(), TowerError> {
        self.refine_inner(b, delta, m0, false)
    }

    /// Branch pair refinement: two disjoint child families inside every
    /// current repelling disk.
    pub fn refine_pair(&mut self, b: u64, delta: f64, m0: u64) -> Result<(), TowerError> {
        self.refine_inner(b, delta, m0, true)
    }

    fn deepest_nodes_mut(&mut self) -> Vec<&mut Node> {
        fn walk<'a>(node: &'a mut Node, depth: usize, out: &mut Vec<&'a mut Node>) {
            if node.level == depth {
                out.push(node);
            } else {
                for ring in &mut node.rings {
                    for child in &mut ring.children {
                        walk(child, depth, out);
                    }
                }
            }
        }
        let depth = self.depth();
        let mut out = Vec::new();
        for region in &mut self.regions {
            walk(region, depth, &mut out);
        }
        out
    }

    /// Nodes of one level along a branch word (word[ℓ−2] picks the ring used
    /// at level ℓ ≥ 2; levels without a pair ignore the letter).
    pub fn level_nodes(&self, level: usize, word: &[u8]) -> Result<Vec<&Node>, TowerError> {
        if level == 0 || level > self.depth() {
            return Err(TowerError::NoSuchLevel(level, self.depth()));
        }
        let mut current: Vec<&Node> = self.regions.iter().collect();
        for l in 2..=level {
            let pair = self.branched[l - 2];
            let want: u8 = if pair {
                *word
                    .get(l - 2)
                    .ok_or_else(|| TowerError::BadWord(word.to_vec(), l))?
            } else {
                0
            };
            let mut next = Vec::new();
            for node in current {
                let ring = node
                    .rings
                    .iter()
                    .find(|r| r.branch == want)
                    .ok_or_else(|| TowerError::BadWord(word.to_vec(), l))?;
                next.extend(ring.children.iter());
            }
            current = next;
        }
        current.sort_by_key(|n| n.residue);
        Ok(current)
    }

    /// The saddle block carried by every insert.
    pub fn insert_block(&self) -> Mat {
        self.insert_model.linear_matrix()
    }

    /// Analytic derivative blocks along the level-n periodic orbit: each step
    /// contributes all enclosing ring rotations and the frame-conjugated
    /// insert block, telescoping to an exact power of the saddle block.
    pub fn cert_cocycle(&self, level: usize) -> PeriodicCocycle {
        let m = self.periods[level - 1];
        let rate = self.angle_rate(level);
        let block_l = self.insert_block().into_inner();
        let mats = (0..m)
            .map(|j| {
                let f_next = rotation(self.dim, (j + 1) as f64 * rate);
                let f_cur = rotation(self.dim, j as f64 * rate);
                Mat::new(&f_next * &block_l * f_cur.transpose()).expect("rotations are orthogonal")
            })
            .collect();
        PeriodicCocycle::new(self.dim, mats).expect("valid blocks")
    }

    /// Stage view at a level along a branch word.
    pub fn stage(&self, level: usize, word: &[u8]) -> Result<TowerStage, TowerError> {
        let nodes = self.level_nodes(level, word)?;
        let attracting: Vec<Disk> = nodes
            .iter()
            .map(|n| Disk {
                center: n.center.clone(),
                radius: n.radius,
            })
            .collect();
        let repelling: Vec<Disk> = nodes
            .iter()
            .map(|n| Disk {
                center: n.center.clone(),
                radius: n.radius * self.layout.repel,
            })
            .collect();
        let cocycle = self.cert_cocycle(level);
        let spectrum = exponents_periodic(&cocycle).expect("cert cocycle is invertible");
        let cert = PeriodicPointCert {
            point: nodes[0].center.clone(),
            period: self.periods[level - 1],
            cocycle,
            spectrum,
        };
        Ok(TowerStage {
            level,
            period: self.periods[level - 1],
            attracting,
            repelling,
            cert,
        })
    }

    /// All stages along a word.
    pub fn stages(&self, word: &[u8]) -> Result<Vec<TowerStage>, TowerError> {
        (1..=self.depth()).map(|l| self.stage(l, word)).collect()
    }

    /// Geometric nesting data for the adding-machine conjugacy: the disk
    /// containing each next-level disk is located by measured containment
    /// against the repelling disks.
    pub fn nesting_combinatorics(&self, word: &[u8]) -> Result<DiskNesting, TowerError> {
        let mut parent_of = Vec::new();
        for level in 2..=self.depth() {
            let parents = self.level_nodes(level - 1, word)?;
            let children = self.level_nodes(level, word)?;
            let mut row = Vec::with_capacity(children.len());
            for child in &children {
                let cc = DVector::from_vec(child.center.clone());
                let mut found = None;
                for parent in &parents {
                    let pc = DVector::from_vec(parent.center.clone());
                    let gap = (cc.clone() - pc).norm() + child.radius;
                    if gap <= parent.radius * self.layout.repel {
                        found = Some(parent.residue as usize);
                        break;
                    }
                }
                row.push(found.unwrap_or(usize::MAX));
            }
            parent_of.push(row);
        }
        Ok(DiskNesting {
            periods: self.periods.clone(),
            parent_of,
        })
    }

    /// Minimum gap between distinct stage-1 disks.
    pub fn stage1_separation(&self) -> f64 {
        let mut sep = f64::INFINITY;
        for i in 0..self.regions.len() {
            for j in (i + 1)..self.regions.len() {
                let a = DVector::from_vec(self.regions[i].center.clone());
                let b = DVector::from_vec(self.regions[j].center.clone());
                sep = sep.min((a - b).norm() - self.regions[i].radius - self.regions[j].radius);
            }
        }
        sep
    }

    /// Sample points of the limit Cantor set: deepest-level disk centers.
    /// Returns at most m_K points and flags whether the request was capped.
    pub fn limit_set_sample(
        &self,
        count: usize,
        word: &[u8],
    ) -> Result<(Vec<Vec<f64>>, bool), TowerError> {
        let nodes = self.level_nodes(self.depth(), word)?;
        let capped = count > nodes.len();
        let take = count.min(nodes.len());
        Ok((
            nodes.iter().take(take).map(|n| n.center.clone()).collect(),
            capped,
        ))
    }

    pub fn realized(&self) -> RealizedMap<'_> {
        RealizedMap { tower: self }
    }
}

/// The evaluable piecewise map carried by a built tower, defined on the
/// stage-1 attracting family.
pub struct RealizedMap<'a> {
    tower: &'a Tower,
}

impl<'a> RealizedMap<'a> {
    fn dim(&self) -> usize {
        self.tower.dim
    }

    fn locate_region(&self, x: &DVector<f64>) -> Result<usize, TowerError> {
        for (i, region) in self.tower.regions.iter().enumerate() {
            let c = DVector::from_vec(region.center.clone());
            if (x - c).norm() <= region.radius * (1.0 + 1e-12) {
                return Ok(i);
            }
        }
        Err(TowerError::Domain)
    }

    /// Scaled insert: u ↦ s·G(u/s) with s = layout.insert·ρ_a, conjugated by
    /// the node frame.
    fn insert_apply(
        &self,
        node: &Node,
        u: &DVector<f64>,
        want_jac: bool,
    ) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let s = self.tower.layout.insert * node.radius;
        let f = rotation(self.dim(), node.frame_angle);
        let local = f.transpose() * u / s;
        let image = &f * self.tower.insert_model.eval(&local) * s;
        let jac = want_jac
            .then(|| &f * self.tower.insert_model.deriv(&local).into_inner() * f.transpose());
        (image, jac)
    }

    fn insert_invert(&self, node: &Node, v: &DVector<f64>) -> Result<DVector<f64>, TowerError> {
        let s = self.tower.layout.insert * node.radius;
        let f = rotation(self.dim(), node.frame_angle);
        let local = f.transpose() * v / s;
        let pre = self
            .tower
            .insert_model
            .eval_inverse(&local)
            .map_err(|e| TowerError::Inverse(e.to_string()))?;
        Ok(&f * pre * s)
    }

    /// Ring twist of a node: rotation of the (x, y)-plane about the node
    /// center by angle·profile(cyl radius)·t_factor, in node units.
    fn twist_apply(
        &self,
        node: &Node,
        twist_angle: f64,
        u: &DVector<f64>,
        sign: f64,
        want_jac: bool,
    ) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let layout = &self.tower.layout;
        let dim = self.dim();
        let scale = node.radius;
        let (a, b) = (u[0], u[1]);
        let rho = (a * a + b * b).sqrt() / scale;
        let tcoord = if dim == 3 { u[2] / scale } else { 0.0 };
        let profile = layout.twist_profile(rho);
        let tfac = if dim == 3 {
            layout.twist_t_factor(tcoord)
        } else {
            1.0
        };
        let beta = sign * twist_angle * profile * tfac;
        let (sb, cb) = beta.sin_cos();
        let mut v = u.clone();
        v[0] = cb * a - sb * b;
        v[1] = sb * a + cb * b;
        if !want_jac {
            return (v, None);
        }
        let mut jac = DMatrix::identity(dim, dim);
        jac[(0, 0)] = cb;
        jac[(0, 1)] = -sb;
        jac[(1, 0)] = sb;
        jac[(1, 1)] = cb;
        // gradient of β in chart units
        let mut grad = DVector::zeros(dim);
        if rho > 0.0 {
            let dp = layout.twist_profile_deriv(rho);
            let plane_norm = (a * a + b * b).sqrt();
            grad[0] = sign * twist_angle * dp * tfac * (a / plane_norm) / scale;
            grad[1] = sign * twist_angle * dp * tfac * (b / plane_norm) / scale;
        }
        if dim == 3 {
            grad[2] = sign * twist_angle * profile * layout.twist_t_factor_deriv(tcoord) / scale;
        }
        if grad.iter().any(|&g| g != 0.0) {
            // d/dβ of R(β)(a,b) is the quarter turn of the rotated vector
            let (vp0, vp1) = (v[0], v[1]);
            for k in 0..dim {
                jac[(0, k)] += -vp1 * grad[k];
                jac[(1, k)] += vp0 * grad[k];
            }
        }
        (v, Some(jac))
    }

    fn shell_apply(
        &self,
        shell: &RadialShell,
        scale: f64,
        u: &DVector<f64>,
        want_jac: bool,
    ) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let dim = self.dim();
        let rho = u.norm() / scale;
        if !shell.window.contains(rho) || rho == 0.0 {
            return (u.clone(), want_jac.then(|| DMatrix::identity(dim, dim)));
        }
        let c = shell.apply(rho);
        let factor = c / rho;
        let v = u * factor;
        if !want_jac {
            return (v, None);
        }
        // D((c(ρ)/ρ)·u) = (c/ρ)·I + (c′ − c/ρ)·(u uᵀ)/(ρ·scale)²
        let cp = shell.deriv(rho);
        let mut jac = DMatrix::identity(dim, dim) * factor;
        let coef = (cp - factor) / (rho * rho * scale * scale);
        for i in 0..dim {
            for j in 0..dim {
                jac[(i, j)] += coef * u[i] * u[j];
            }
        }
        (v, Some(jac))
    }

    fn shell_invert(&self, shell: &RadialShell, scale: f64, v: &DVector<f64>) -> DVector<f64> {
        let rho = v.norm() / scale;
        if rho == 0.0 {
            return v.clone();
        }
        let pre = shell.invert(rho);
        v * (pre / rho)
    }

    /// Local action of a node on u (coordinates relative to the node center).
    fn node_apply(
        &self,
        node: &Node,
        u: &DVector<f64>,
        want_jac: bool,
    ) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let layout = &self.tower.layout;
        let dim = self.dim();
        let scale = node.radius;
        let mut v = u.clone();
        let mut jac = want_jac.then(|| DMatrix::identity(dim, dim));
        let rho = v.norm() / scale;

        // insert at the core (nothing else overlaps it)
        if rho <= 0.95 * layout.insert {
            let (nv, nj) = self.insert_apply(node, &v, want_jac);
            if let (Some(acc), Some(j)) = (jac.as_mut(), nj) {
                *acc = &j * &*acc;
            }
            return (nv, jac);
        }

        // child ring content first, then the enclosing twist
        'child: for ring in &node.rings {
            for child in &ring.children {
                let cc = DVector::from_vec(child.center.clone());
                let pc = DVector::from_vec(node.center.clone());
                let q = cc - pc;
                let local = &v - &q;
                if local.norm() <= child.radius * layout.c_window.2 {
                    let (cv, cj) = self.node_apply(child, &local, want_jac);
                    v = q + cv;
                    if let (Some(acc), Some(j)) = (jac.as_mut(), cj) {
                        *acc = &j * &*acc;
                    }
                    break 'child;
                }
            }
        }

        // ring twist (identical support for both rings of a pair)
        if let Some(ring) = node.rings.first() {
            let (nv, nj) = self.twist_apply(node, ring.twist_angle, &v, 1.0, want_jac);
            v = nv;
            if let (Some(acc), Some(j)) = (jac.as_mut(), nj) {
                *acc = &j * &*acc;
            }
        }

        // expansion shell across the repelling radius, then contraction shell
        for shell in [layout.x_shell(), layout.c_shell()] {
            let (nv, nj) = self.shell_apply(&shell, scale, &v, want_jac);
            v = nv;
            if let (Some(acc), Some(j)) = (jac.as_mut(), nj) {
                *acc = &j * &*acc;
            }
        }
        (v, jac)
    }

    fn node_invert(&self, node: &Node, w: &DVector<f64>) -> Result<DVector<f64>, TowerError> {
        let layout = &self.tower.layout;
        let scale = node.radius;
        let mut v = w.clone();
        // undo shells in reverse order
        v = self.shell_invert(&layout.c_shell(), scale, &v);
        v = self.shell_invert(&layout.x_shell(), scale, &v);
        // undo the ring twist (radius- and t-preserving, so the angle matches)
        if let Some(ring) = node.rings.first() {
            let (nv, _) = self.twist_apply(node, ring.twist_angle, &v, -1.0, false);
            v = nv;
        }
        // child content
        for ring in &node.rings {
            for child in &ring.children {
                let cc = DVector::from_vec(child.center.clone());
                let pc = DVector::from_vec(node.center.clone());
                let q = cc - pc;
                let local = &v - &q;
                if local.norm() <= child.radius * layout.c_window.2 {
                    let pre = self.node_invert(child, &local)?;
                    return Ok(q + pre);
                }
            }
        }
        // insert core
        if v.norm() / scale <= 0.95 * layout.insert {
            return self.insert_invert(node, &v);
        }
        Ok(v)
    }

    /// Forward map on the stage-1 attracting family.
    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>, TowerError> {
        let i = self.locate_region(x)?;
        let m1 = self.tower.regions.len();
        let region = &self.tower.regions[i];
        let next = &self.tower.regions[(i + 1) % m1];
        let u = x - DVector::from_vec(region.center.clone());
        let (v, _) = self.node_apply(region, &u, false);
        Ok(DVector::from_vec(next.center.clone()) + v)
    }

    /// Exact Jacobian of the realized map.
    pub fn deriv(&self, x: &DVector<f64>) -> Result<Mat, TowerError> {
        let i = self.locate_region(x)?;
        let region = &self.tower.regions[i];
        let u = x - DVector::from_vec(region.center.clone());
        let (_, jac) = self.node_apply(region, &u, true);
        Mat::new(jac.expect("requested"))
            .map_err(|_| TowerError::Inverse("singular jacobian".into()))
    }

    /// Inverse map; defined on the image of the stage-1 family.
    pub fn eval_inverse(&self, y: &DVector<f64>) -> Result<DVector<f64>, TowerError> {
        let i = self.locate_region(y)?;
        let m1 = self.tower.regions.len();
        let prev_idx = (i + m1 - 1) % m1;
        let prev = &self.tower.regions[prev_idx];
        let w = y - DVector::from_vec(self.tower.regions[i].center.clone());
        let u = self.node_invert(prev, &w)?;
        Ok(DVector::from_vec(prev.center.clone()) + u)
    }

    /// Budget measurement at one point: (log|det Df|, log‖Df⁻¹‖).
    pub fn budget_at(&self, x: &DVector<f64>) -> Result<(f64, f64), TowerError> {
        let jac = self.deriv(x)?;
        let det = jac.det().abs().ln();
        let smin = jac.inner().singular_values().min();
        Ok((det, -(smin.ln())))
    }
}

/// Evidence record of a finite-horizon triviality probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrivialityEvidence {
    pub forward_distances: Vec<f64>,
    pub backward_distances: Vec<f64>,
    pub separates_forward: bool,
    pub separates_backward: bool,
    pub same_point: bool,
    pub threshold: f64,
}

/// Track forward and backward orbit distances of two points up to `horizon`;
/// the verdicts flag whether some distance reaches `threshold`.
pub fn triviality_probe(
    tower: &Tower,
    x: &DVector<f64>,
    y: &DVector<f64>,
    horizon: u64,
    threshold: f64,
) -> Result<TrivialityEvidence, TowerError> {
    if horizon > 1_000_000 {
        return Err(TowerError::Horizon(horizon, 1_000_000));
    }
    let same_point = (x - y).norm() == 0.0;
    let map = tower.realized();
    let mut forward = Vec::with_capacity(horizon as usize + 1);
    let (mut fx, mut fy) = (x.clone(), y.clone());
    for _ in 0..=horizon {
        forward.push((&fx - &fy).norm());
        match (map.eval(&fx), map.eval(&fy)) {
            (Ok(nx), Ok(ny)) => {
                fx = nx;
                fy = ny;
            }
            _ => break,
        }
    }
    let mut backward = Vec::with_capacity(horizon as usize + 1);
    let (mut bx, mut by) = (x.clone(), y.clone());
    for _ in 0..=horizon {
        backward.push((&bx - &by).norm());
        match (map.eval_inverse(&bx), map.eval_inverse(&by)) {
            (Ok(nx), Ok(ny)) => {
                bx = nx;
                by = ny;
            }
            _ => break,
        }
    }
    Ok(TrivialityEvidence {
        separates_forward: forward.iter().any(|&d| d >= threshold),
        separates_backward: backward.iter().any(|&d| d >= threshold),
        forward_distances: forward,
        backward_distances: backward,
        same_point,
        threshold,
    })
}

/// Forward escape of a point from the deepest repelling family: the step at
/// which the orbit leaves every stage-K repelling disk, if within `horizon`.
///
/// The repelling disks are backward-invariant by construction, so escape is
/// a forward phenomenon: the expansion shell pushes off-family points out.
pub fn repelling_escape_step(
    tower: &Tower,
    y: &DVector<f64>,
    horizon: u64,
    word: &[u8],
) -> Result<Option<u64>, TowerError> {
    let nodes = tower.level_nodes(tower.depth(), word)?;
    let repel = tower.layout.repel;
    let inside = |p: &DVector<f64>| {
        nodes.iter().any(|n| {
            let c = DVector::from_vec(n.center.clone());
            (p - c).norm() <= n.radius * repel
        })
    };
    let map = tower.realized();
    let mut p = y.clone();
    for step in 0..=horizon {
        if !inside(&p) {
            return Ok(Some(step));
        }
        match map.eval(&p) {
            Ok(np) => p = np,
            Err(_) => return Ok(Some(step + 1)),
        }
    }
    Ok(None)
}

/// Gap between the orbit average of the coordinate observables at stage n and
/// their integral proxy against the deepest-stage uniform distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakStarGap {
    pub level: usize,
    pub gap: f64,
    /// Lip·(max stage diameter): the proven bound on the gap.
    pub bound: f64,
    /// Mismatch between orbit visits and cylinder weights (zero by
    /// construction; re-measured).
    pub combinatorial_error: f64,
}

/// An observable with a declared Lipschitz constant.
pub struct LipschitzObservable<'a> {
    pub f: Box<dyn Fn(&[f64]) -> f64 + 'a>,
    pub lipschitz: f64,
}

impl<'a> LipschitzObservable<'a> {
    pub fn coordinate(index: usize) -> Self {
        Self {
            f: Box::new(move |x| x[index]),
            lipschitz: 1.0,
        }
    }
}

/// Max over the observables of the gap between the stage-n periodic-orbit
/// average and the integral proxy against the deepest-stage uniform
/// distribution (the cylinder weights at depth n are exactly the uniform
/// weights the deepest disks refine).
pub fn weak_star_gap_observables(
    tower: &Tower,
    level: usize,
    word: &[u8],
    observables: &[LipschitzObservable<'_>],
) -> Result<WeakStarGap, TowerError> {
    let stage_nodes = tower.level_nodes(level, word)?;
    let deepest = tower.level_nodes(tower.depth(), word)?;
    let mut gap = 0.0f64;
    let mut max_lip = 0.0f64;
    for obs in observables {
        let orbit_avg: f64 =
            stage_nodes.iter().map(|n| (obs.f)(&n.center)).sum::<f64>() / stage_nodes.len() as f64;
        let deep_avg: f64 =
            deepest.iter().map(|n| (obs.f)(&n.center)).sum::<f64>() / deepest.len() as f64;
        gap = gap.max((orbit_avg - deep_avg).abs());
        max_lip = max_lip.max(obs.lipschitz);
    }
    // every stage-n disk carries exactly m_K/m_n deepest disks
    let per = deepest.len() / stage_nodes.len();
    let mut comb_err = 0.0f64;
    for node in &stage_nodes {
        let c = DVector::from_vec(node.center.clone());
        let count = deepest
            .iter()
            .filter(|d| (DVector::from_vec(d.center.clone()) - &c).norm() <= node.radius)
            .count();
        comb_err = comb_err.max((count as f64 - per as f64).abs());
    }
    let max_diam = stage_nodes
        .iter()
        .map(|n| 2.0 * n.radius)
        .fold(0.0f64, f64::max);
    Ok(WeakStarGap {
        level,
        gap,
        bound: max_lip * max_diam,
        combinatorial_error: comb_err,
    })
}

/// The coordinate observables (Lipschitz constant 1 each).
pub fn weak_star_gap(tower: &Tower, level: usize, word: &[u8]) -> Result<WeakStarGap, TowerError> {
    let observables: Vec<LipschitzObservable> =
        (0..tower.dim).map(LipschitzObservable::coordinate).collect();
    weak_star_gap_observables(tower, level, word, &observables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_vec(v.to_vec())
    }

    fn default_tower() -> Tower {
        let mut t = Tower::seed(3, 2, 0.2).unwrap();
        t.refine(3, 0.1, 1).unwrap();
        t.refine(4, 0.05, 1).unwrap();
        t
    }

    #[test]
    fn seed_examples() {
        let t = Tower::seed(3, 2, 0.2).unwrap();
        assert_eq!(t.periods, vec![2]);
        let stage = t.stage(1, &[]).unwrap();
        assert_eq!(stage.attracting.len(), 2);
        assert_eq!(stage.repelling.len(), 2);
        for d in &stage.attracting {
            assert!(d.diameter() < 0.2);
        }
        assert_abs_diff_eq!(stage.cert.spectrum.chi_plus(), 3.2, epsilon = 1e-12);
        assert_abs_diff_eq!(stage.cert.spectrum.chi_minus(), -1.6, epsilon = 1e-12);

        assert!(matches!(
            Tower::seed(3, 1, 0.2),
            Err(TowerError::SeedPeriodTooSmall(1))
        ));
        assert!(matches!(
            Tower::seed(3, 2, 1e-9),
            Err(TowerError::Feasibility { .. })
        ));
    }

    #[test]
    fn refine_schedule_and_certificates() {
        let t = default_tower();
        assert_eq!(t.periods, vec![2, 6, 24]);
        for level in 1..=3 {
            let stage = t.stage(level, &[]).unwrap();
            assert_eq!(stage.attracting.len() as u64, t.periods[level - 1]);
            assert_abs_diff_eq!(stage.cert.spectrum.chi_plus(), 3.2, epsilon = 1e-9);
            assert_abs_diff_eq!(stage.cert.spectrum.chi_minus(), -1.6, epsilon = 1e-9);
            assert_abs_diff_eq!(
                stage.cert.spectrum.chi_center().unwrap(),
                -1.6,
                epsilon = 1e-9
            );
        }
        // b = 1 is rejected; small products are rejected by the twist budget
        let mut t2 = Tower::seed(3, 2, 0.2).unwrap();
        assert!(matches!(
            t2.refine(1, 0.1, 1),
            Err(TowerError::BranchingTooSmall(1))
        ));
        assert!(matches!(
            t2.refine(2, 0.1, 1),
            Err(TowerError::TwistBudget { .. })
        ));
        assert!(matches!(
            t2.refine(3, 0.1, 10),
            Err(TowerError::PeriodFloor { .. })
        ));
    }

    #[test]
    fn nesting_combinatorics_match_residues() {
        let t = default_tower();
        let nesting = t.nesting_combinatorics(&[]).unwrap();
        let conj = crate::odometer::conjugacy_from_tower(&nesting).unwrap();
        assert_eq!(conj.schedule.periods(), &[2, 6, 24]);
    }

    #[test]
    fn containments_hold() {
        let t = default_tower();
        for level in 2..=3 {
            let parents = t.level_nodes(level - 1, &[]).unwrap();
            let children = t.level_nodes(level, &[]).unwrap();
            for child in children {
                let cc = dv(&child.center);
                let inside_some = parents.iter().any(|p| {
                    let pc = dv(&p.center);
                    (cc.clone() - pc).norm() + child.radius < p.radius * t.layout.repel
                });
                assert!(inside_some, "A_{level} inside R_{} with margin", level - 1);
            }
        }
        assert!(t.layout.repel < 1.0);
    }

    #[test]
    fn orbit_cycles_and_derivative_blocks_match() {
        let t = default_tower();
        let map = t.realized();
        for level in 1..=3 {
            let nodes = t.level_nodes(level, &[]).unwrap();
            let m = t.periods[level - 1] as usize;
            let cocycle = t.cert_cocycle(level);
            for j in 0..m {
                let p = dv(&nodes[j].center);
                let image = map.eval(&p).unwrap();
                let expect = dv(&nodes[(j + 1) % m].center);
                assert!(
                    (image.clone() - &expect).norm() < 1e-12,
                    "level {level} step {j}"
                );
                let jac = map.deriv(&p).unwrap();
                let stored = &cocycle.matrices()[j];
                assert!(
                    (jac.inner() - stored.inner()).norm() < 1e-11,
                    "level {level} block {j} differs by {}",
                    (jac.inner() - stored.inner()).norm()
                );
            }
        }
    }

    #[test]
    fn two_dimensional_tower_orbits_and_blocks() {
        // the planar case is the one where ring rotations do not commute
        // with the saddle block, so the frame conjugation carries real weight
        let mut t = Tower::seed(2, 2, 0.2).unwrap();
        t.refine(3, 0.1, 1).unwrap();
        t.refine(4, 0.05, 1).unwrap();
        let map = t.realized();
        for level in 1..=3 {
            let stage = t.stage(level, &[]).unwrap();
            let s = &stage.cert.spectrum;
            assert_abs_diff_eq!(s.chi_plus(), 1.6, epsilon = 1e-9);
            assert_abs_diff_eq!(s.chi_minus(), -1.6, epsilon = 1e-9);
            let nodes = t.level_nodes(level, &[]).unwrap();
            let m = t.periods[level - 1] as usize;
            let cocycle = t.cert_cocycle(level);
            for j in 0..m {
                let p = dv(&nodes[j].center);
                let image = map.eval(&p).unwrap();
                let expect = dv(&nodes[(j + 1) % m].center);
                assert!((image - &expect).norm() < 1e-12, "level {level} step {j}");
                let jac = map.deriv(&p).unwrap();
                assert!(
                    (jac.inner() - cocycle.matrices()[j].inner()).norm() < 1e-11,
                    "level {level} block {j}"
                );
            }
        }
        // budget margins hold in the plane as well
        let mut max_det = f64::NEG_INFINITY;
        let mut max_inv = f64::NEG_INFINITY;
        for node in t.level_nodes(1, &[]).unwrap() {
            for sample in sample_ball(&dv(&node.center), node.radius, 2, 300) {
                let (ld, li) = map.budget_at(&sample).unwrap();
                max_det = max_det.max(ld);
                max_inv = max_inv.max(li);
            }
        }
        assert!(max_det <= 0.6 + 1e-9, "2D jacobian budget, max {max_det}");
        assert!(max_inv <= 1.6 + 1e-9, "2D inverse budget, max {max_inv}");
    }

    #[test]
    fn attracting_nesting_under_the_map() {
        let t = default_tower();
        let map = t.realized();
        let nodes = t.level_nodes(1, &[]).unwrap();
        let m = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            let next = &nodes[(i + 1) % m];
            let nc = dv(&next.center);
            for sample in sample_ball(&dv(&node.center), node.radius, t.dim, 60) {
                let image = map.eval(&sample).unwrap();
                let gap = next.radius - (image - &nc).norm();
                assert!(gap > 0.0, "image must be interior, gap {gap}");
            }
        }
        // a point of D_{1,0} outside the repelling disk lands inside Int(D_{1,1})
        let node = &nodes[0];
        let mut p = dv(&node.center);
        p[0] += node.radius * 0.9;
        let image = map.eval(&p).unwrap();
        let next = &nodes[1];
        assert!((image - dv(&next.center)).norm() < next.radius);
    }

    #[test]
    fn repelling_nesting_under_the_inverse() {
        let t = default_tower();
        let map = t.realized();
        let nodes = t.level_nodes(1, &[]).unwrap();
        let m = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            let prev = &nodes[(i + m - 1) % m];
            let pc = dv(&prev.center);
            for sample in sample_ball(&dv(&node.center), node.radius * t.layout.repel, t.dim, 60) {
                let pre = map.eval_inverse(&sample).unwrap();
                let gap = prev.radius * t.layout.repel - (pre - &pc).norm();
                assert!(gap > 0.0, "preimage must be interior, gap {gap}");
            }
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let t = default_tower();
        let map = t.realized();
        let nodes = t.level_nodes(1, &[]).unwrap();
        for node in &nodes {
            for sample in sample_ball(&dv(&node.center), node.radius * 0.95, t.dim, 40) {
                let image = map.eval(&sample).unwrap();
                let back = map.eval_inverse(&image).unwrap();
                assert!((back - &sample).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn deep_points_stay_in_their_family() {
        let t = default_tower();
        let map = t.realized();
        let deepest = t.level_nodes(3, &[]).unwrap();
        let m3 = t.periods[2];
        let node = deepest[5];
        let mut p = dv(&node.center);
        p[0] += 0.3 * node.radius;
        let start = p.clone();
        for _ in 0..m3 {
            p = map.eval(&p).unwrap();
        }
        let back_in = deepest.iter().any(|n| {
            let c = dv(&n.center);
            (p.clone() - c).norm() <= n.radius
        });
        assert!(back_in, "full-period image stays in the family");
        assert!((p - start).norm() <= 2.0 * node.radius);
    }

    #[test]
    fn budget_holds_on_samples() {
        let t = default_tower();
        let map = t.realized();
        let mut max_det = f64::NEG_INFINITY;
        let mut max_inv = f64::NEG_INFINITY;
        for node in t.level_nodes(1, &[]).unwrap() {
            for sample in sample_ball(&dv(&node.center), node.radius, t.dim, 400) {
                let (ld, li) = map.budget_at(&sample).unwrap();
                max_det = max_det.max(ld);
                max_inv = max_inv.max(li);
            }
            let (ld, li) = map.budget_at(&dv(&node.center)).unwrap();
            assert_abs_diff_eq!(ld, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(li, 1.6, epsilon = 1e-12);
        }
        assert!(max_det <= 0.6 + 1e-9, "jacobian margin ≥ 0.4, max {max_det}");
        assert!(max_inv <= 1.6 + 1e-9, "inverse margin ≥ 0.4, max {max_inv}");
    }

    #[test]
    fn branch_pair_disjointness() {
        let mut t = Tower::seed(3, 2, 0.2).unwrap();
        t.refine_pair(3, 0.1, 1).unwrap();
        let a = t.level_nodes(2, &[0]).unwrap();
        let b = t.level_nodes(2, &[1]).unwrap();
        for na in &a {
            for nb in &b {
                let d = (dv(&na.center) - dv(&nb.center)).norm();
                assert!(d > na.radius + nb.radius, "disjoint leaf families");
            }
        }
        assert_eq!(t.stage(1, &[0]).unwrap().attracting.len(), 2);
        assert_eq!(t.stage(1, &[1]).unwrap().attracting.len(), 2);
    }

    #[test]
    fn weak_star_gap_trend() {
        let t = default_tower();
        let mut prev = f64::INFINITY;
        for level in 1..=3 {
            let g = weak_star_gap(&t, level, &[]).unwrap();
            assert!(g.gap <= g.bound + 1e-12, "gap bound at level {level}");
            assert_eq!(g.combinatorial_error, 0.0);
            assert!(g.gap <= prev + 1e-12, "non-increasing gaps");
            prev = g.gap;
        }
        // a constant observable has gap exactly zero
        let constant = [LipschitzObservable {
            f: Box::new(|_: &[f64]| 1.0),
            lipschitz: 0.0,
        }];
        let g = weak_star_gap_observables(&t, 2, &[], &constant).unwrap();
        assert_eq!(g.gap, 0.0);
        assert_eq!(g.bound, 0.0);
    }

    #[test]
    fn triviality_probes() {
        let t = default_tower();
        let nodes = t.level_nodes(1, &[]).unwrap();
        let sep = t.stage1_separation();
        let x = dv(&nodes[0].center);
        let y = dv(&nodes[1].center);
        let horizon = 10 * t.periods[2];
        let ev = triviality_probe(&t, &x, &y, horizon, sep).unwrap();
        assert!(ev.separates_forward && ev.separates_backward);
        assert!(ev.forward_distances.iter().all(|&d| d >= sep));

        let ev = triviality_probe(&t, &x, &x, 20, sep).unwrap();
        assert!(ev.same_point && !ev.separates_forward);

        // a point in the expansion band of a deepest repelling disk escapes forward
        let deep = t.level_nodes(3, &[]).unwrap();
        let mut y = dv(&deep[0].center);
        y[0] += 0.58 * deep[0].radius;
        let escaped = repelling_escape_step(&t, &y, horizon, &[]).unwrap();
        assert!(escaped.is_some(), "expansion shell expels the off-family point");

        // same deepest disk, off the limit set: the pair separates at the
        // deepest-disk scale once the off-set point is expelled
        let x = dv(&deep[0].center);
        let ev = triviality_probe(&t, &x, &y, horizon, 0.3 * deep[0].radius).unwrap();
        assert!(ev.separates_forward, "stage-scale forward separation");
    }

    #[test]
    fn limit_samples_nest_in_all_stages() {
        let t = default_tower();
        let (samples, capped) = t.limit_set_sample(100, &[]).unwrap();
        assert!(capped);
        assert_eq!(samples.len(), 24);
        for level in 1..=3 {
            let nodes = t.level_nodes(level, &[]).unwrap();
            for s in &samples {
                let inside = nodes
                    .iter()
                    .any(|n| (dv(s) - dv(&n.center)).norm() <= n.radius);
                assert!(inside, "sample inside every coarser attracting family");
            }
        }
        for i in 0..samples.len() {
            for j in (i + 1)..samples.len() {
                assert!((dv(&samples[i]) - dv(&samples[j])).norm() > 0.0);
            }
        }
    }

    #[test]
    fn serde_roundtrip_preserves_geometry() {
        let t = default_tower();
        let json = serde_json::to_string(&t).unwrap();
        let back: Tower = serde_json::from_str(&json).unwrap();
        assert_eq!(back.periods, t.periods);
        let a = t.level_nodes(3, &[]).unwrap();
        let b = back.level_nodes(3, &[]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.center, y.center);
            assert_eq!(x.radius, y.radius);
        }
    }

    /// Deterministic samples spread through a ball.
    fn sample_ball(
        center: &DVector<f64>,
        radius: f64,
        dim: usize,
        count: usize,
    ) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(count);
        let golden = 0.6180339887498949f64;
        for i in 0..count {
            let mut p = center.clone();
            let r = radius * ((i as f64 + 0.5) / count as f64).powf(1.0 / dim as f64);
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
}
