//! Fourth-order Gm-C band-pass filter: two stagger-tuned biquads in cascade.
//!
//! Each stage has three locked mirrors: the input OTA (`in`), the damping
//! OTA (`damp`) and the mirror biasing both integrator OTAs (`tune`). With
//! integrating capacitors `C_k` the stage transfer function is
//!
//! ```text
//! H_k(s) = (gm_in/C_k) s / (s^2 + (gm_damp/C_k) s + (gm_tune/C_k)^2)
//! ```
//!
//! The first stage also has two internal poles, `gm_in/Cp_in` and
//! `gm_tune/Cp_tune`. A cascade of ideal biquads commutes and only exposes
//! the product of the input gains, so without these poles the six mirrors
//! would have several equivalent solutions.

use num_complex::Complex64;
use std::f64::consts::PI;

use super::{log_peak, bisect, to_db, CircuitError, CircuitSpec};

pub(crate) struct Stage {
    gm_in: f64,
    gm_damp: f64,
    gm_tune: f64,
    c: f64,
    /// Internal node capacitances (input OTA, integrator OTA), if modelled.
    parasitic: Option<(f64, f64)>,
}

impl Stage {
    fn response(&self, f: f64) -> Complex64 {
        let s = Complex64::new(0.0, 2.0 * PI * f);
        let w0 = self.gm_tune / self.c;
        let h = (self.gm_in / self.c) * s / (s * s + s * (self.gm_damp / self.c) + w0 * w0);
        match self.parasitic {
            Some((cp_in, cp_tune)) => {
                h / ((1.0 + s * (cp_in / self.gm_in)) * (1.0 + s * (cp_tune / self.gm_tune)))
            }
            None => h,
        }
    }
}

pub(crate) struct Bpf {
    stages: [Stage; 2],
}

pub(crate) struct BpfMetrics {
    pub peak_gain_db: f64,
    pub center_hz: f64,
    pub bandwidth_hz: f64,
}

/// Frequency range searched for the pass band.
const SEARCH: (f64, f64) = (1e2, 1e9);

impl Bpf {
    pub(crate) fn new(spec: &CircuitSpec, widths: &[f64]) -> Result<Self, CircuitError> {
        let beta = spec.get("beta")?;
        let gm = |w: f64| -> Result<f64, CircuitError> {
            if !(w > 0.0 && w.is_finite()) {
                return Err(CircuitError::InvalidParams(format!("BPF mirror width {w}")));
            }
            Ok((2.0 * beta * spec.mirror_current(w)?).sqrt())
        };
        let stage = |k: usize| -> Result<Stage, CircuitError> {
            let base = 3 * (k - 1);
            let st = Stage {
                gm_in: gm(widths[base])?,
                gm_damp: gm(widths[base + 1])?,
                gm_tune: gm(widths[base + 2])?,
                c: spec.get(&format!("c{k}"))?,
                parasitic: match k {
                    1 => Some((spec.get("cp_in1")?, spec.get("cp_tune1")?)),
                    _ => None,
                },
            };
            if !(st.c > 0.0 && st.parasitic.is_none_or(|(a, b)| a > 0.0 && b > 0.0)) {
                return Err(CircuitError::DegenerateModel(format!("stage {k} capacitances")));
            }
            Ok(st)
        };
        Ok(Bpf { stages: [stage(1)?, stage(2)?] })
    }

    pub(crate) fn response(&self, f: f64) -> Complex64 {
        self.stages[0].response(f) * self.stages[1].response(f)
    }

    pub(crate) fn magnitude(&self, f: f64) -> f64 {
        self.response(f).norm()
    }

    pub(crate) fn metrics(&self) -> Result<BpfMetrics, CircuitError> {
        let (center, peak) = log_peak(SEARCH.0, SEARCH.1, |f| self.magnitude(f));
        let half = peak / 2f64.sqrt();
        let edge = |lo: f64, hi: f64| bisect(lo.ln(), hi.ln(), |l| self.magnitude(l.exp()) - half).exp();
        if self.magnitude(SEARCH.0) >= half || self.magnitude(SEARCH.1) >= half {
            return Err(CircuitError::DegenerateModel("pass band edges outside search range".into()));
        }
        let f_lo = edge(SEARCH.0, center);
        let f_hi = edge(center, SEARCH.1);
        Ok(BpfMetrics { peak_gain_db: to_db(peak), center_hz: center, bandwidth_hz: f_hi - f_lo })
    }
}
