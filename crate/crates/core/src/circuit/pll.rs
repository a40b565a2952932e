//! Charge-pump PLL with a locked VCO bias mirror.
//!
//! The bias current `I` sets the VCO control-voltage range, `V_f = r_bias I`,
//! and thus the locking frequency `k_vco V_f`. It also feeds the charge
//! pump, so the loop gain is `K = k_loop I`. The loop filter is a
//! type-II third-order network:
//!
//! ```text
//! G(s) = K (1 + s tau_z) / (s^2 (1 + s tau_p))
//! T(s) = K (1 + s tau_z) / (tau_p s^3 + s^2 + K tau_z s + K)
//! ```
//!
//! The control voltage is `V_f` times the closed-loop step response, which
//! is evaluated in closed form from the three poles of `T`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{CircuitError, CircuitSpec};

/// Settling band, relative to the final value.
pub(crate) const SETTLE_BAND: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PllMetrics {
    pub f_locking_hz: f64,
    pub t_settle_s: f64,
}

pub(crate) struct Pll {
    v_final: f64,
    k_vco: f64,
    loop_gain: f64,
    tau_z: f64,
    tau_p: f64,
    poles: [Complex64; 3],
    residues: [Complex64; 3],
}

impl Pll {
    pub(crate) fn new(spec: &CircuitSpec, width: f64) -> Result<Self, CircuitError> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(CircuitError::InvalidParams(format!("VCO bias width {width}")));
        }
        let i = spec.mirror_current(width)?;
        let loop_gain = spec.get("k_loop")? * i;
        let tau_z = spec.get("tau_z")?;
        let tau_p = spec.get("tau_p")?;
        let v_final = spec.get("r_bias")? * i;
        let k_vco = spec.get("k_vco")?;
        if !(loop_gain > 0.0 && tau_z > 0.0 && tau_p > 0.0 && v_final > 0.0 && k_vco > 0.0) {
            return Err(CircuitError::DegenerateModel("non-positive PLL loop constant".into()));
        }
        Self::from_loop(v_final, k_vco, loop_gain, tau_z, tau_p)
    }

    pub(crate) fn from_loop(
        v_final: f64,
        k_vco: f64,
        loop_gain: f64,
        tau_z: f64,
        tau_p: f64,
    ) -> Result<Self, CircuitError> {
        let poles = cubic_roots(tau_p, 1.0, loop_gain * tau_z, loop_gain);
        if poles.iter().any(|p| !(p.re < 0.0) || !p.is_finite()) {
            return Err(CircuitError::DegenerateModel(format!("unstable loop, poles {poles:?}")));
        }
        let num = |s: Complex64| loop_gain * (1.0 + s * tau_z);
        let den_d = |s: Complex64| 3.0 * tau_p * s * s + 2.0 * s + loop_gain * tau_z;
        let mut residues = [Complex64::new(0.0, 0.0); 3];
        for (r, &p) in residues.iter_mut().zip(&poles) {
            let d = p * den_d(p);
            if d.norm() < 1e-300 {
                return Err(CircuitError::DegenerateModel("repeated loop poles".into()));
            }
            *r = num(p) / d;
        }
        Ok(Pll { v_final, k_vco, loop_gain, tau_z, tau_p, poles, residues })
    }

    /// Normalized closed-loop step response.
    pub(crate) fn step(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let tail: Complex64 = self
            .poles
            .iter()
            .zip(&self.residues)
            .map(|(p, r)| r * (p * t).exp())
            .sum();
        1.0 + tail.re
    }

    pub(crate) fn control_voltage(&self, t: f64) -> f64 {
        self.v_final * self.step(t)
    }

    /// Magnitude of the control-voltage step spectrum, `V_f |T(jw) / jw|`.
    pub(crate) fn control_spectrum(&self, f: f64) -> f64 {
        let s = Complex64::new(0.0, 2.0 * PI * f);
        let t = self.loop_gain * (1.0 + s * self.tau_z)
            / (self.tau_p * s * s * s + s * s + self.loop_gain * self.tau_z * s + self.loop_gain);
        (t / s).norm() * self.v_final
    }

    pub(crate) fn f_locking(&self) -> f64 {
        self.k_vco * self.v_final
    }

    /// First time after which the step response stays within the settling band.
    pub(crate) fn settle_time(&self) -> Result<f64, CircuitError> {
        const SCAN: usize = 200_000;
        let slowest = self.poles.iter().map(|p| -p.re).fold(f64::INFINITY, f64::min);
        let peak_residue = self.residues.iter().map(|r| r.norm()).fold(0.0, f64::max);
        // the tail is bounded by sum |r_i| exp(-slowest t)
        let horizon = (3.0 * peak_residue / SETTLE_BAND).max(10.0).ln() / slowest * 2.0;
        let dt = horizon / SCAN as f64;
        let outside = |t: f64| (self.step(t) - 1.0).abs() > SETTLE_BAND;
        let last = (0..=SCAN).rev().find(|&i| outside(i as f64 * dt));
        match last {
            None => Ok(0.0),
            Some(i) if i == SCAN => {
                Err(CircuitError::DegenerateModel("loop does not settle within the horizon".into()))
            }
            Some(i) => {
                let (a, b) = (i as f64 * dt, (i + 1) as f64 * dt);
                Ok(super::bisect(a, b, |t| (self.step(t) - 1.0).abs() - SETTLE_BAND))
            }
        }
    }

    pub(crate) fn metrics(&self) -> Result<PllMetrics, CircuitError> {
        Ok(PllMetrics { f_locking_hz: self.f_locking(), t_settle_s: self.settle_time()? })
    }
}

/// Roots of `a s^3 + b s^2 + c s + d` with positive coefficients: one real
/// root found by bisection, the other two from the deflated quadratic.
fn cubic_roots(a: f64, b: f64, c: f64, d: f64) -> [Complex64; 3] {
    let poly = |s: f64| ((a * s + b) * s + c) * s + d;
    let bound = 1.0 + [b / a, c / a, d / a].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut lo = -bound;
    let mut hi = 0.0;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if poly(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let r = 0.5 * (lo + hi);
    // a s^3 + b s^2 + c s + d = (s - r)(a s^2 + q1 s + q0)
    let q1 = b + a * r;
    let q0 = c + q1 * r;
    let disc = Complex64::new(q1 * q1 - 4.0 * a * q0, 0.0).sqrt();
    let r1 = (-q1 + disc) / (2.0 * a);
    let r2 = (-q1 - disc) / (2.0 * a);
    [Complex64::new(r, 0.0), r1, r2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_roots_of_known_polynomial() {
        // (s + 1)(s + 2)(s + 3) = s^3 + 6 s^2 + 11 s + 6
        let mut roots: Vec<f64> = cubic_roots(1.0, 6.0, 11.0, 6.0).iter().map(|r| r.re).collect();
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (r, e) in roots.iter().zip([-3.0, -2.0, -1.0]) {
            assert!((r - e).abs() < 1e-9, "{r} vs {e}");
        }
    }

    #[test]
    fn step_response_matches_numerical_integration() {
        let pll = Pll::from_loop(1.0, 1.0, 1.0 / 10f64.sqrt(), 10f64.sqrt(), 1.0 / 10f64.sqrt()).unwrap();
        // integrate the controllable canonical form with RK4
        let (tp, k, tz) = (pll.tau_p, pll.loop_gain, pll.tau_z);
        let deriv = |x: [f64; 3]| -> [f64; 3] {
            // tp x''' + x'' + k tz x' + k x = u, y = k (x + tz x')
            [x[1], x[2], (1.0 - x[2] - k * tz * x[1] - k * x[0]) / tp]
        };
        let dt = 1e-3;
        let mut x = [0.0; 3];
        let mut t = 0.0;
        for _ in 0..20_000 {
            let k1 = deriv(x);
            let add = |a: [f64; 3], b: [f64; 3], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]];
            let k2 = deriv(add(x, k1, dt / 2.0));
            let k3 = deriv(add(x, k2, dt / 2.0));
            let k4 = deriv(add(x, k3, dt));
            for i in 0..3 {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            t += dt;
            if (t * 1000.0).round() as i64 % 1000 == 0 {
                let y = k * (x[0] + tz * x[1]);
                assert!((y - pll.step(t)).abs() < 1e-8, "t = {t}: {y} vs {}", pll.step(t));
            }
        }
    }

    #[test]
    fn settle_time_scales_inversely_with_bandwidth() {
        let b: f64 = 10.0;
        let base = Pll::from_loop(1.0, 1.0, 1.0 / b.sqrt(), b.sqrt(), 1.0 / b.sqrt()).unwrap();
        let w = 7.0;
        let fast = Pll::from_loop(1.0, 1.0, w * w / b.sqrt(), b.sqrt() / w, 1.0 / (b.sqrt() * w)).unwrap();
        let ts0 = base.settle_time().unwrap();
        let ts1 = fast.settle_time().unwrap();
        assert!((ts0 / ts1 - w).abs() < 1e-6 * w, "{ts0} / {ts1}");
    }
}
