//! Triangular waveform generator: an integrating capacitor charged by one
//! mirror and discharged by the other, switched by a comparator with
//! thresholds `v_low` / `v_high`. The waveform starts at `v_low`, rising.

use super::{CircuitError, CircuitSpec};

pub(crate) struct Twg {
    v_low: f64,
    v_high: f64,
    t_rise: f64,
    t_fall: f64,
}

impl Twg {
    pub(crate) fn new(spec: &CircuitSpec, widths: &[f64]) -> Result<Self, CircuitError> {
        let c = spec.get("c_int")?;
        let v_low = spec.get("v_low")?;
        let v_high = spec.get("v_high")?;
        if v_high <= v_low || c <= 0.0 {
            return Err(CircuitError::DegenerateModel("comparator window or capacitor".into()));
        }
        let mut currents = [0.0; 2];
        for (i, &w) in currents.iter_mut().zip(widths) {
            if !(w > 0.0 && w.is_finite()) {
                return Err(CircuitError::InvalidParams(format!("TWG mirror width {w}")));
            }
            *i = spec.mirror_current(w)?;
        }
        let swing = v_high - v_low;
        Ok(Twg { v_low, v_high, t_rise: c * swing / currents[0], t_fall: c * swing / currents[1] })
    }

    pub(crate) fn amplitude(&self) -> f64 {
        self.v_high - self.v_low
    }

    pub(crate) fn period(&self) -> f64 {
        self.t_rise + self.t_fall
    }

    pub(crate) fn rise_time(&self) -> f64 {
        self.t_rise
    }

    pub(crate) fn voltage(&self, t: f64) -> f64 {
        let phase = t.rem_euclid(self.period());
        if phase < self.t_rise {
            self.v_low + self.amplitude() * phase / self.t_rise
        } else {
            self.v_high - self.amplitude() * (phase - self.t_rise) / self.t_fall
        }
    }
}
