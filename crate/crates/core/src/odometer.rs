//! Generalized adding machines (odometers) on inverse limits of ℤ/m_nℤ.
//!
//! A [`TowerSchedule`] is a finite truncation m_1 | m_2 | … | m_K of the
//! period sequence of a nested disk tower; an [`OdometerPoint`] is a
//! compatible residue sequence, and the successor map adds 1 with carry.
//! All "limit" statements of the infinite inverse limit are verified as
//! exact finite-stage statements at depth K.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdometerError {
    #[error("schedule is empty")]
    EmptySchedule,
    #[error("schedule must be strictly increasing: m_{0} = {1} ≥ m_{2} = {3}")]
    NotIncreasing(usize, u64, usize, u64),
    #[error("schedule violates divisibility: m_{0} = {1} does not divide m_{2} = {3}")]
    NotDivisible(usize, u64, usize, u64),
    #[error("period m_{0} = {1} must be positive")]
    ZeroPeriod(usize, u64),
    #[error("residue {residue} at level {level} out of range (period {period})")]
    ResidueOutOfRange { level: usize, residue: u64, period: u64 },
    #[error("incompatible residues: x_{level} = {upper} ≢ {lower} (mod m_{prev_level} = {modulus})")]
    Incompatible {
        level: usize,
        prev_level: usize,
        upper: u64,
        lower: u64,
        modulus: u64,
    },
    #[error("level {0} out of range 1..={1}")]
    LevelOutOfRange(usize, usize),
    #[error("residue count {found} does not match schedule depth {expected}")]
    DepthMismatch { found: usize, expected: usize },
    #[error("observable weight count {found} does not match period {expected}")]
    WeightMismatch { found: usize, expected: u64 },
    #[error("nesting violation: disk ({level}, {disk}) lies in parent {found}, cylinder combinatorics require {expected}")]
    NestingViolation {
        level: usize,
        disk: usize,
        found: usize,
        expected: usize,
    },
    #[error("nesting data malformed at level {level}: {detail}")]
    MalformedNesting { level: usize, detail: String },
}

/// Strictly increasing periods m_1 < m_2 < … < m_K with m_n | m_{n+1}.
///
/// The divisibility is forced by the disk-cycle nesting combinatorics:
/// each level-(n+1) disk cycle projects onto the level-n cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct TowerSchedule {
    periods: Vec<u64>,
}

impl TryFrom<Vec<u64>> for TowerSchedule {
    type Error = OdometerError;
    fn try_from(v: Vec<u64>) -> Result<Self, OdometerError> {
        TowerSchedule::new(v)
    }
}

impl From<TowerSchedule> for Vec<u64> {
    fn from(s: TowerSchedule) -> Vec<u64> {
        s.periods
    }
}

impl TowerSchedule {
    pub fn new(periods: Vec<u64>) -> Result<Self, OdometerError> {
        if periods.is_empty() {
            return Err(OdometerError::EmptySchedule);
        }
        for (n, &m) in periods.iter().enumerate() {
            if m == 0 {
                return Err(OdometerError::ZeroPeriod(n + 1, m));
            }
        }
        for n in 1..periods.len() {
            let (lo, hi) = (periods[n - 1], periods[n]);
            if hi <= lo {
                return Err(OdometerError::NotIncreasing(n, lo, n + 1, hi));
            }
            if hi % lo != 0 {
                return Err(OdometerError::NotDivisible(n, lo, n + 1, hi));
            }
        }
        Ok(Self { periods })
    }

    pub fn depth(&self) -> usize {
        self.periods.len()
    }

    pub fn periods(&self) -> &[u64] {
        &self.periods
    }

    /// m_level (1-based level).
    pub fn period(&self, level: usize) -> Result<u64, OdometerError> {
        self.periods
            .get(level.wrapping_sub(1))
            .copied()
            .ok_or(OdometerError::LevelOutOfRange(level, self.depth()))
    }

    pub fn deepest_period(&self) -> u64 {
        *self.periods.last().unwrap()
    }

    /// The zero point (all residues 0).
    pub fn zero_point(&self) -> OdometerPoint {
        OdometerPoint {
            residues: vec![0; self.depth()],
        }
    }

    /// Point determined by a deepest-level residue (compatibility forces the rest).
    pub fn point_from_deepest(&self, j: u64) -> Result<OdometerPoint, OdometerError> {
        let m_k = self.deepest_period();
        if j >= m_k {
            return Err(OdometerError::ResidueOutOfRange {
                level: self.depth(),
                residue: j,
                period: m_k,
            });
        }
        Ok(OdometerPoint {
            residues: self.periods.iter().map(|&m| j % m).collect(),
        })
    }

    /// Drop the deepest level.
    pub fn truncated(&self) -> Option<TowerSchedule> {
        (self.depth() > 1).then(|| TowerSchedule {
            periods: self.periods[..self.depth() - 1].to_vec(),
        })
    }
}

/// Compatible residue sequence x_n ∈ ℤ/m_nℤ, x_{n+1} ≡ x_n (mod m_n).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdometerPoint {
    residues: Vec<u64>,
}

impl OdometerPoint {
    pub fn new(residues: Vec<u64>, schedule: &TowerSchedule) -> Result<Self, OdometerError> {
        if residues.len() != schedule.depth() {
            return Err(OdometerError::DepthMismatch {
                found: residues.len(),
                expected: schedule.depth(),
            });
        }
        for (n, &x) in residues.iter().enumerate() {
            let m = schedule.periods()[n];
            if x >= m {
                return Err(OdometerError::ResidueOutOfRange {
                    level: n + 1,
                    residue: x,
                    period: m,
                });
            }
            if n > 0 {
                let prev_m = schedule.periods()[n - 1];
                if x % prev_m != residues[n - 1] {
                    return Err(OdometerError::Incompatible {
                        level: n + 1,
                        prev_level: n,
                        upper: x,
                        lower: residues[n - 1],
                        modulus: prev_m,
                    });
                }
            }
        }
        Ok(Self { residues })
    }

    pub fn residues(&self) -> &[u64] {
        &self.residues
    }

    pub fn residue(&self, level: usize) -> u64 {
        self.residues[level - 1]
    }

    /// Forget the deepest level.
    pub fn truncated(&self) -> Option<OdometerPoint> {
        (self.residues.len() > 1).then(|| OdometerPoint {
            residues: self.residues[..self.residues.len() - 1].to_vec(),
        })
    }
}

/// Level-n cylinder: the set of points with residue `residue` at `level`.
/// Corresponds to one disk of the nested tower under the conjugacy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CylinderSet {
    pub level: usize,
    pub residue: u64,
}

impl CylinderSet {
    pub fn validate(&self, schedule: &TowerSchedule) -> Result<(), OdometerError> {
        let m = schedule.period(self.level)?;
        if self.residue >= m {
            return Err(OdometerError::ResidueOutOfRange {
                level: self.level,
                residue: self.residue,
                period: m,
            });
        }
        Ok(())
    }
}

/// Adding machine: every residue incremented by 1 mod m_n (compatibility is
/// preserved because the carry pattern is shared across levels).
pub fn successor(p: &OdometerPoint, s: &TowerSchedule) -> Result<OdometerPoint, OdometerError> {
    // reject incompatible input
    let p = OdometerPoint::new(p.residues.clone(), s)?;
    Ok(OdometerPoint {
        residues: p
            .residues
            .iter()
            .zip(s.periods())
            .map(|(&x, &m)| (x + 1) % m)
            .collect(),
    })
}

/// The unique invariant measure of a cylinder at `level`: 1/m_level.
pub fn cylinder_measure(s: &TowerSchedule, c: &CylinderSet) -> Result<f64, OdometerError> {
    c.validate(s)?;
    Ok(1.0 / s.period(c.level)? as f64)
}

/// Exhaustively checks that the successor orbit of the zero point visits every
/// residue class at `level` within m_level steps and returns with period
/// exactly m_level.
pub fn minimality_check(s: &TowerSchedule, level: usize) -> Result<bool, OdometerError> {
    let m = s.period(level)?;
    let zero = s.zero_point();
    let mut seen = vec![false; m as usize];
    let mut p = zero.clone();
    for step in 0..m {
        if seen[p.residue(level) as usize] {
            return Ok(false);
        }
        seen[p.residue(level) as usize] = true;
        p = successor(&p, s)?;
        if p.residue(level) == zero.residue(level) && step + 1 < m {
            return Ok(false); // premature return
        }
    }
    Ok(seen.iter().all(|&v| v) && p.residue(level) == zero.residue(level))
}

/// Observable given by weights on the level-`level` cylinders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CylinderWeights {
    pub level: usize,
    pub weights: Vec<f64>,
}

impl CylinderWeights {
    /// Indicator of a single cylinder.
    pub fn indicator(s: &TowerSchedule, c: &CylinderSet) -> Result<Self, OdometerError> {
        c.validate(s)?;
        let m = s.period(c.level)? as usize;
        let mut weights = vec![0.0; m];
        weights[c.residue as usize] = 1.0;
        Ok(Self {
            level: c.level,
            weights,
        })
    }

    pub fn eval(&self, p: &OdometerPoint) -> f64 {
        self.weights[p.residue(self.level) as usize]
    }

    /// Exact integral against the unique invariant measure.
    pub fn integral(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.weights.len() as f64
    }
}

/// Birkhoff average `(1/N)·Σ_{j<N} observable(successor^j(p))`.
///
/// For N a multiple of m_K this equals the measure integral exactly.
pub fn birkhoff_average(
    p: &OdometerPoint,
    s: &TowerSchedule,
    observable: &CylinderWeights,
    n_steps: u64,
) -> Result<f64, OdometerError> {
    let m = s.period(observable.level)?;
    if observable.weights.len() as u64 != m {
        return Err(OdometerError::WeightMismatch {
            found: observable.weights.len(),
            expected: m,
        });
    }
    assert!(n_steps >= 1, "need at least one step");
    // the level residue advances by 1 mod m per step, so count visits exactly
    let start = OdometerPoint::new(p.residues.clone(), s)?.residue(observable.level);
    let full_cycles = n_steps / m;
    let remainder = n_steps % m;
    let mut total = full_cycles as f64 * observable.weights.iter().sum::<f64>();
    for j in 0..remainder {
        total += observable.weights[((start + j) % m) as usize];
    }
    Ok(total / n_steps as f64)
}

/// Orbit trace in CSV rows: step, then one residue column per level.
pub fn orbit_trace_csv(
    start: &OdometerPoint,
    s: &TowerSchedule,
    steps: u64,
) -> Result<String, OdometerError> {
    let mut out = String::from("step");
    for level in 1..=s.depth() {
        out.push_str(&format!(",x{level}"));
    }
    out.push('\n');
    let mut p = OdometerPoint::new(start.residues().to_vec(), s)?;
    for step in 0..=steps {
        out.push_str(&step.to_string());
        for &r in p.residues() {
            out.push_str(&format!(",{r}"));
        }
        out.push('\n');
        p = successor(&p, s)?;
    }
    Ok(out)
}

/// Combinatorial nesting data extracted from a built disk tower: the periods
/// per level and, for each level n ≥ 2, the index of the level-(n−1) disk
/// containing each level-n disk. Disk indices follow the orbit dynamics
/// (disk i maps into disk i+1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiskNesting {
    pub periods: Vec<u64>,
    /// `parent_of[n-2][j]` = containing disk index at level n−1 of level-n disk j.
    pub parent_of: Vec<Vec<usize>>,
}

/// The conjugacy between a nested disk tower and its adding machine:
/// the schedule plus the disk ↔ cylinder labeling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Conjugacy {
    pub schedule: TowerSchedule,
    /// `labels[n-1][i]` is the cylinder attached to disk i at level n.
    pub labels: Vec<Vec<CylinderSet>>,
}

/// Builds the adding-machine conjugacy from tower nesting data: validates the
/// schedule, and checks that geometric containment matches the cylinder
/// projection (disk j at level n must lie in disk j mod m_{n−1}).
pub fn conjugacy_from_tower(nesting: &DiskNesting) -> Result<Conjugacy, OdometerError> {
    let schedule = TowerSchedule::new(nesting.periods.clone())?;
    if nesting.parent_of.len() + 1 != schedule.depth() {
        return Err(OdometerError::MalformedNesting {
            level: nesting.parent_of.len() + 1,
            detail: format!(
                "have parent maps for {} levels, schedule depth is {}",
                nesting.parent_of.len() + 1,
                schedule.depth()
            ),
        });
    }
    for (idx, parents) in nesting.parent_of.iter().enumerate() {
        let level = idx + 2;
        let m_n = schedule.period(level)? as usize;
        let m_prev = schedule.period(level - 1)?;
        if parents.len() != m_n {
            return Err(OdometerError::MalformedNesting {
                level,
                detail: format!("expected {m_n} parent entries, found {}", parents.len()),
            });
        }
        for (j, &i) in parents.iter().enumerate() {
            let expected = (j as u64 % m_prev) as usize;
            if i != expected {
                return Err(OdometerError::NestingViolation {
                    level,
                    disk: j,
                    found: i,
                    expected,
                });
            }
        }
    }
    let labels = schedule
        .periods()
        .iter()
        .enumerate()
        .map(|(n, &m)| {
            (0..m)
                .map(|i| CylinderSet {
                    level: n + 1,
                    residue: i,
                })
                .collect()
        })
        .collect();
    Ok(Conjugacy { schedule, labels })
}
