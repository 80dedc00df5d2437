//! C¹ scalar profiles shared by the model glue and the tower surgery pieces.

/// Cubic smoothstep: 0 at 0, 1 at 1, zero derivative at both ends.
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Derivative of [`smoothstep`]; identically zero outside (0, 1).
pub fn smoothstep_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        6.0 * t * (1.0 - t)
    }
}

/// A C¹ radial displacement window: 0 at `lo`, 1 at `peak`, 0 at `hi`,
/// with vanishing one-sided derivatives at all three knots.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Window {
    pub lo: f64,
    pub peak: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, peak: f64, hi: f64) -> Self {
        assert!(lo < peak && peak < hi, "window knots must increase");
        Self { lo, peak, hi }
    }

    pub fn eval(&self, u: f64) -> f64 {
        if u <= self.lo || u >= self.hi {
            0.0
        } else if u < self.peak {
            smoothstep((u - self.lo) / (self.peak - self.lo))
        } else {
            smoothstep((self.hi - u) / (self.hi - self.peak))
        }
    }

    pub fn deriv(&self, u: f64) -> f64 {
        if u <= self.lo || u >= self.hi {
            0.0
        } else if u < self.peak {
            smoothstep_deriv((u - self.lo) / (self.peak - self.lo)) / (self.peak - self.lo)
        } else {
            -smoothstep_deriv((self.hi - u) / (self.hi - self.peak)) / (self.hi - self.peak)
        }
    }

    pub fn contains(&self, u: f64) -> bool {
        u > self.lo && u < self.hi
    }
}

/// Monotone C¹ radial rescaling `u ↦ u + amp·window(u)`.
///
/// Used for the expansion shell (amp > 0) straddling the repelling radius and
/// the contraction shell (amp < 0) straddling nothing in particular: the
/// displacement vanishes with zero slope at both ends of the window, so the
/// map glues C¹ to the identity. Monotonicity requires |amp·window′| < 1.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct RadialShell {
    pub window: Window,
    pub amp: f64,
}

impl RadialShell {
    pub fn new(window: Window, amp: f64) -> Self {
        let max_slope = amp.abs() * 1.5 / (window.peak - window.lo).min(window.hi - window.peak);
        assert!(max_slope < 0.95, "radial shell would fold: slope {max_slope}");
        Self { window, amp }
    }

    /// Scalar radius map c(u).
    pub fn apply(&self, u: f64) -> f64 {
        u + self.amp * self.window.eval(u)
    }

    /// c′(u).
    pub fn deriv(&self, u: f64) -> f64 {
        1.0 + self.amp * self.window.deriv(u)
    }

    /// Invert c by monotone Newton iteration (c′ > 0 by construction).
    pub fn invert(&self, v: f64) -> f64 {
        if v <= self.window.lo || v >= self.window.hi + self.amp.abs() {
            // outside affected range (c = id beyond the window for amp of either sign
            // since c(hi) = hi and c monotone)
            if v >= self.window.hi {
                return v;
            }
        }
        let mut u = v;
        for _ in 0..64 {
            let f = self.apply(u) - v;
            if f.abs() < 1e-15 * v.abs().max(1.0) {
                break;
            }
            u -= f / self.deriv(u);
        }
        u
    }

}
