//! Single-pole OTA biased by one mirror.
//!
//! `gm = sqrt(2 beta I)`, `R_out = 1 / (lambda I)`, so the DC gain
//! `gm R_out` falls as `I^-1/2` while the output pole `lambda I / (2 pi C_L)`
//! rises linearly. The unity-gain frequency therefore grows like `sqrt(I)`:
//! a wider tail mirror strictly raises it.

use std::f64::consts::PI;

use super::{to_db, CircuitError, CircuitSpec};

pub(crate) struct Ota {
    a0: f64,
    f_pole: f64,
}

impl Ota {
    pub(crate) fn new(spec: &CircuitSpec, width: f64) -> Result<Self, CircuitError> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(CircuitError::InvalidParams(format!("tail width {width}")));
        }
        let i = spec.mirror_current(width)?;
        let beta = spec.get("beta")?;
        let lambda = spec.get("lambda")?;
        let c_load = spec.get("c_load")?;
        let gm = (2.0 * beta * i).sqrt();
        let a0 = gm / (lambda * i);
        let f_pole = lambda * i / (2.0 * PI * c_load);
        if !(a0 > 0.0 && f_pole > 0.0 && a0.is_finite() && f_pole.is_finite()) {
            return Err(CircuitError::DegenerateModel(format!("OTA gain {a0}, pole {f_pole} Hz")));
        }
        Ok(Ota { a0, f_pole })
    }

    pub(crate) fn magnitude(&self, f: f64) -> f64 {
        self.a0 / (1.0 + (f / self.f_pole).powi(2)).sqrt()
    }

    pub(crate) fn dc_gain_db(&self) -> f64 {
        to_db(self.a0)
    }

    pub(crate) fn unity_gain_frequency(&self) -> Result<f64, CircuitError> {
        if self.a0 <= 1.0 {
            return Err(CircuitError::DegenerateModel("OTA gain below unity".into()));
        }
        Ok(self.f_pole * (self.a0 * self.a0 - 1.0).sqrt())
    }
}
