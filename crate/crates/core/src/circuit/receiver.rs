//! Superheterodyne receiver: LNA -> mixer (LO from the embedded PLL) ->
//! IF band-pass -> IF amplifier. The observable is the amplifier output
//! level versus RF input frequency; the mixer folds both the wanted band
//! (`f_lo + f_if`) and the image band (`f_lo - f_if`) into the IF chain.
//!
//! Constants prefixed `pll.` configure the embedded PLL.

use num_complex::Complex64;
use std::f64::consts::PI;

use super::{log_peak, pll::Pll, CircuitError, CircuitSpec};

pub(crate) struct Receiver {
    f_lo: f64,
    lna_gain: f64,
    lna_f0: f64,
    lna_q: f64,
    f_if: f64,
    if_q: f64,
    mix_gain: f64,
    amp_a0: f64,
    amp_pole: f64,
}

/// The embedded PLL's spec, with the `pll.` prefix stripped.
pub(crate) fn pll_spec(spec: &CircuitSpec) -> Result<CircuitSpec, CircuitError> {
    let constants = spec
        .constants
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("pll.").map(|k| (k.to_string(), *v)))
        .collect();
    let sub = CircuitSpec { i_ref: spec.i_ref, constants };
    sub.get("r_bias")?;
    Ok(sub)
}

impl Receiver {
    pub(crate) fn new(spec: &CircuitSpec, widths: &[f64]) -> Result<Self, CircuitError> {
        for &w in widths {
            if !(w > 0.0 && w.is_finite()) {
                return Err(CircuitError::InvalidParams(format!("receiver mirror width {w}")));
            }
        }
        let pll = Pll::new(&pll_spec(spec)?, widths[0])?;
        let beta = spec.get("beta")?;
        let gm = |w: f64| -> Result<f64, CircuitError> { Ok((2.0 * beta * spec.mirror_current(w)?).sqrt()) };

        let lna_gain = spec.get("lna_k")? * gm(widths[1])?;
        let f_if = gm(widths[2])? / (2.0 * PI * spec.get("if_c")?);
        let i_amp = spec.mirror_current(widths[3])?;
        let amp_lambda = spec.get("amp_lambda")?;
        let amp_a0 = gm(widths[3])? / (amp_lambda * i_amp);
        let amp_pole = amp_lambda * i_amp / (2.0 * PI * spec.get("amp_c")?);
        let rx = Receiver {
            f_lo: pll.f_locking(),
            lna_gain,
            lna_f0: spec.get("lna_f0")?,
            lna_q: spec.get("lna_q")?,
            f_if,
            if_q: spec.get("if_q")?,
            mix_gain: spec.get("mix_gain")?,
            amp_a0,
            amp_pole,
        };
        if [rx.lna_f0, rx.lna_q, rx.f_if, rx.if_q, rx.amp_pole].iter().any(|v| !(*v > 0.0)) {
            return Err(CircuitError::DegenerateModel("non-positive receiver frequency".into()));
        }
        Ok(rx)
    }

    pub(crate) fn lo_hz(&self) -> f64 {
        self.f_lo
    }

    fn resonator(q: f64, f0: f64, f: f64) -> f64 {
        1.0 / Complex64::new(1.0, q * (f / f0 - f0 / f)).norm()
    }

    pub(crate) fn magnitude(&self, f_rf: f64) -> f64 {
        let lna = self.lna_gain * Self::resonator(self.lna_q, self.lna_f0, f_rf);
        let f_if = (f_rf - self.f_lo).abs();
        if f_if == 0.0 {
            return 0.0;
        }
        let filt = Self::resonator(self.if_q, self.f_if, f_if);
        let amp = self.amp_a0 / (1.0 + (f_if / self.amp_pole).powi(2)).sqrt();
        lna * self.mix_gain * filt * amp
    }

    /// Peak of the wanted (upper) band: the search is limited to RF
    /// frequencies above the LO.
    pub(crate) fn passband_peak(&self, lo: f64, hi: f64) -> (f64, f64) {
        let start = lo.max(self.f_lo * (1.0 + 1e-6));
        if start >= hi {
            return log_peak(lo, hi, |f| self.magnitude(f));
        }
        log_peak(start, hi, |f| self.magnitude(f))
    }
}
