//! Behavioral circuit models.
//!
//! Every benchmark is an equation-level model driven by the widths of its
//! bias-mirror transistors. A mirror with width `W` delivers
//! `I = (W / w_ref) * i_ref`; the rest of each model is closed form, so a
//! simulation is a pure function of `(model, params, grid)`.
//!
//! Widths are expressed in nanometres throughout the crate.

mod bpf;
pub mod calibrate;
mod curve;
mod ota;
mod pll;
mod receiver;
mod twg;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use curve::{Axis, ResponseCurve, SamplingGrid, Spacing, YUnit};
pub use pll::PllMetrics;

/// Magnitudes below this are clamped before the dB conversion (-200 dB).
pub(crate) const MAG_FLOOR: f64 = 1e-10;

pub(crate) fn to_db(mag: f64) -> f64 {
    20.0 * mag.max(MAG_FLOOR).log10()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate model: {0}")]
    DegenerateModel(String),
    #[error("invalid sampling grid: {0}")]
    InvalidGrid(String),
    #[error("model constant `{0}` missing from circuit spec")]
    MissingConstant(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// The benchmark a model implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Ota,
    Bpf,
    Pll,
    Twg,
    Receiver,
}

impl Kind {
    pub const ALL: [Kind; 5] = [Kind::Ota, Kind::Bpf, Kind::Pll, Kind::Twg, Kind::Receiver];

    /// Number of locked bias mirrors, i.e. the length of the parameter vector.
    pub fn param_count(self) -> usize {
        match self {
            Kind::Ota | Kind::Pll => 1,
            Kind::Twg => 2,
            Kind::Receiver => 4,
            Kind::Bpf => 6,
        }
    }

    /// Slot names, in parameter order.
    pub fn slot_names(self) -> &'static [&'static str] {
        match self {
            Kind::Ota => &["tail"],
            Kind::Bpf => &["in1", "damp1", "tune1", "in2", "damp2", "tune2"],
            Kind::Pll => &["vco"],
            Kind::Twg => &["charge", "discharge"],
            Kind::Receiver => &["pll_vco", "lna", "if_filter", "amp"],
        }
    }

    /// Observables measured on this benchmark's output pin, by grid name.
    pub fn observables(self) -> &'static [&'static str] {
        match self {
            Kind::Ota | Kind::Bpf | Kind::Receiver => &["frequency"],
            Kind::Pll => &["transient", "frequency"],
            Kind::Twg => &["transient"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Ota => "ota",
            Kind::Bpf => "bpf",
            Kind::Pll => "pll",
            Kind::Twg => "twg",
            Kind::Receiver => "receiver",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown benchmark `{s}` (expected ota, bpf, pll, twg or receiver)"))
    }
}

/// Effective widths (nm) of the locked mirrors, one per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, CircuitError> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(CircuitError::InvalidParams(format!(
                "width {v} is not a finite positive value"
            )));
        }
        Ok(ParamVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, CircuitError> {
        ParamVector::new(self.0.iter().map(|v| v * factor).collect())
    }
}

/// Design knowledge: the reference current plus the named model constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub i_ref: f64,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
}

impl CircuitSpec {
    pub fn get(&self, name: &str) -> Result<f64, CircuitError> {
        self.constants
            .get(name)
            .copied()
            .ok_or_else(|| CircuitError::MissingConstant(name.to_string()))
    }

    /// Current delivered by a bias mirror of width `w` (nm).
    pub(crate) fn mirror_current(&self, w: f64) -> Result<f64, CircuitError> {
        let w_ref = self.get("w_ref")?;
        Ok(w / w_ref * self.i_ref)
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        if !(self.i_ref.is_finite() && self.i_ref > 0.0) {
            return Err(CircuitError::InvalidParams(format!("i_ref = {} must be positive", self.i_ref)));
        }
        if let Some((k, v)) = self.constants.iter().find(|(_, v)| !v.is_finite()) {
            return Err(CircuitError::InvalidParams(format!("constant {k} = {v} is not finite")));
        }
        Ok(())
    }
}

/// A calibrated behavioral model together with its canonical sampling grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitModel {
    pub kind: Kind,
    pub nominal_params: ParamVector,
    pub spec: CircuitSpec,
    pub grids: BTreeMap<String, SamplingGrid>,
}

const BUILTIN_OTA: &str = include_str!("../../models/ota.json");
const BUILTIN_BPF: &str = include_str!("../../models/bpf.json");
const BUILTIN_PLL: &str = include_str!("../../models/pll.json");
const BUILTIN_TWG: &str = include_str!("../../models/twg.json");
const BUILTIN_RECEIVER: &str = include_str!("../../models/receiver.json");

impl CircuitModel {
    /// The committed calibration for `kind` (see [`calibrate`]).
    pub fn builtin(kind: Kind) -> CircuitModel {
        let text = match kind {
            Kind::Ota => BUILTIN_OTA,
            Kind::Bpf => BUILTIN_BPF,
            Kind::Pll => BUILTIN_PLL,
            Kind::Twg => BUILTIN_TWG,
            Kind::Receiver => BUILTIN_RECEIVER,
        };
        let model: CircuitModel =
            serde_json::from_str(text).expect("committed model file is valid JSON");
        model.validate().expect("committed model file is consistent");
        model
    }

    pub fn from_json(text: &str) -> Result<CircuitModel, CircuitError> {
        let model: CircuitModel = serde_json::from_str(text)
            .map_err(|e| CircuitError::InvalidParams(format!("model file: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        self.check_params(&self.nominal_params)?;
        self.spec.validate()?;
        for grid in self.grids.values() {
            grid.validate()?;
        }
        Ok(())
    }

    pub fn check_params(&self, params: &ParamVector) -> Result<(), CircuitError> {
        if params.len() != self.kind.param_count() {
            return Err(CircuitError::InvalidParams(format!(
                "{} expects {} parameters, got {}",
                self.kind,
                self.kind.param_count(),
                params.len()
            )));
        }
        Ok(())
    }

    pub fn grid(&self, name: &str) -> Result<&SamplingGrid, CircuitError> {
        self.grids
            .get(name)
            .ok_or_else(|| CircuitError::InvalidGrid(format!("{} model has no `{name}` grid", self.kind)))
    }

    /// Simulate every observable of the output pin on the canonical grids.
    pub fn simulate_observables(
        &self,
        params: &ParamVector,
    ) -> Result<Vec<(String, ResponseCurve)>, CircuitError> {
        self.kind
            .observables()
            .iter()
            .map(|name| Ok((name.to_string(), simulate(self, params, self.grid(name)?)?)))
            .collect()
    }
}

/// Simulate `model` with `params` on `grid`. Frequency grids yield a
/// magnitude response in dB, time grids a transient voltage.
pub fn simulate(
    model: &CircuitModel,
    params: &ParamVector,
    grid: &SamplingGrid,
) -> Result<ResponseCurve, CircuitError> {
    model.check_params(params)?;
    grid.validate()?;
    match (model.kind, grid.axis) {
        (Kind::Ota, Axis::FrequencyHzLog) => {
            let ota = ota::Ota::new(&model.spec, params.values()[0])?;
            Ok(ResponseCurve::sample(grid, YUnit::Db, |f| to_db(ota.magnitude(f))))
        }
        (Kind::Bpf, Axis::FrequencyHzLog) => {
            let bpf = bpf::Bpf::new(&model.spec, params.values())?;
            Ok(ResponseCurve::sample(grid, YUnit::Db, |f| to_db(bpf.magnitude(f))))
        }
        (Kind::Pll, _) => {
            let pll = pll::Pll::new(&model.spec, params.values()[0])?;
            Ok(match grid.axis {
                Axis::TimeS => ResponseCurve::sample(grid, YUnit::Volts, |t| pll.control_voltage(t)),
                Axis::FrequencyHzLog => {
                    ResponseCurve::sample(grid, YUnit::Db, |f| to_db(pll.control_spectrum(f)))
                }
            })
        }
        (Kind::Twg, _) => simulate_twg(model, params, grid),
        (Kind::Receiver, _) => simulate_receiver(model, params, grid),
        (kind, axis) => Err(CircuitError::InvalidGrid(format!(
            "{kind} has no {axis:?} observable"
        ))),
    }
}

/// Triangular-wave generator transient.
pub fn simulate_twg(
    model: &CircuitModel,
    params: &ParamVector,
    grid: &SamplingGrid,
) -> Result<ResponseCurve, CircuitError> {
    if model.kind != Kind::Twg {
        return Err(CircuitError::Unsupported(format!("simulate_twg on {}", model.kind)));
    }
    model.check_params(params)?;
    grid.validate()?;
    if grid.axis != Axis::TimeS {
        return Err(CircuitError::InvalidGrid("the TWG output is a transient".into()));
    }
    let twg = twg::Twg::new(&model.spec, params.values())?;
    Ok(ResponseCurve::sample(grid, YUnit::Volts, |t| twg.voltage(t)))
}

/// Superheterodyne receiver: output level versus RF input frequency.
pub fn simulate_receiver(
    model: &CircuitModel,
    params: &ParamVector,
    grid: &SamplingGrid,
) -> Result<ResponseCurve, CircuitError> {
    if model.kind != Kind::Receiver {
        return Err(CircuitError::Unsupported(format!("simulate_receiver on {}", model.kind)));
    }
    model.check_params(params)?;
    grid.validate()?;
    if grid.axis != Axis::FrequencyHzLog {
        return Err(CircuitError::InvalidGrid("the receiver output is a frequency response".into()));
    }
    let rx = receiver::Receiver::new(&model.spec, params.values())?;
    Ok(ResponseCurve::sample(grid, YUnit::Db, |f| to_db(rx.magnitude(f))))
}

/// Locking frequency and settling time of the PLL (or of the PLL embedded
/// in the receiver).
pub fn simulate_pll_metrics(model: &CircuitModel, params: &ParamVector) -> Result<PllMetrics, CircuitError> {
    model.check_params(params)?;
    let (spec, width) = match model.kind {
        Kind::Pll => (model.spec.clone(), params.values()[0]),
        Kind::Receiver => (receiver::pll_spec(&model.spec)?, params.values()[0]),
        other => return Err(CircuitError::Unsupported(format!("PLL metrics on {other}"))),
    };
    pll::Pll::new(&spec, width)?.metrics()
}

/// Scalar characterization of a benchmark, as measured on its output pin.
pub fn characterize(model: &CircuitModel, params: &ParamVector) -> Result<BTreeMap<String, f64>, CircuitError> {
    model.check_params(params)?;
    let p = params.values();
    let mut out = BTreeMap::new();
    match model.kind {
        Kind::Ota => {
            let ota = ota::Ota::new(&model.spec, p[0])?;
            out.insert("gain_db".into(), ota.dc_gain_db());
            out.insert("ugf_hz".into(), ota.unity_gain_frequency()?);
        }
        Kind::Bpf => {
            let m = bpf::Bpf::new(&model.spec, p)?.metrics()?;
            out.insert("gain_db".into(), m.peak_gain_db);
            out.insert("fc_hz".into(), m.center_hz);
            out.insert("bw_hz".into(), m.bandwidth_hz);
        }
        Kind::Pll => {
            let m = pll::Pll::new(&model.spec, p[0])?.metrics()?;
            out.insert("f_locking_hz".into(), m.f_locking_hz);
            out.insert("t_settle_s".into(), m.t_settle_s);
        }
        Kind::Twg => {
            let twg = twg::Twg::new(&model.spec, p)?;
            out.insert("amplitude_v".into(), twg.amplitude());
            out.insert("period_s".into(), twg.period());
            out.insert("rise_time_s".into(), twg.rise_time());
        }
        Kind::Receiver => {
            let rx = receiver::Receiver::new(&model.spec, p)?;
            let grid = model.grid("frequency")?;
            let (center, peak) = rx.passband_peak(grid.start, grid.stop);
            out.insert("passband_center_hz".into(), center);
            out.insert("peak_gain_db".into(), to_db(peak));
        }
    }
    Ok(out)
}

/// The one scalar that best tracks a benchmark's locked width: OTA
/// unity-gain frequency, BPF center, PLL locking frequency, TWG period,
/// receiver passband center.
pub fn primary_metric(model: &CircuitModel, params: &ParamVector) -> Result<(&'static str, f64), CircuitError> {
    model.check_params(params)?;
    let p = params.values();
    Ok(match model.kind {
        Kind::Ota => ("ugf_hz", ota::Ota::new(&model.spec, p[0])?.unity_gain_frequency()?),
        Kind::Bpf => ("fc_hz", bpf::Bpf::new(&model.spec, p)?.metrics()?.center_hz),
        Kind::Pll => ("f_locking_hz", pll::Pll::new(&model.spec, p[0])?.f_locking()),
        Kind::Twg => ("period_s", twg::Twg::new(&model.spec, p)?.period()),
        Kind::Receiver => {
            let grid = model.grid("frequency")?;
            let rx = receiver::Receiver::new(&model.spec, p)?;
            ("passband_center_hz", rx.passband_peak(grid.start, grid.stop).0)
        }
    })
}

/// The LO frequency a receiver parameter vector produces. Only the oracle
/// side and tests use this; attacks see the receiver output alone.
pub fn receiver_lo_hz(model: &CircuitModel, params: &ParamVector) -> Result<f64, CircuitError> {
    if model.kind != Kind::Receiver {
        return Err(CircuitError::Unsupported(format!("receiver LO on {}", model.kind)));
    }
    model.check_params(params)?;
    Ok(receiver::Receiver::new(&model.spec, params.values())?.lo_hz())
}

/// Golden-section search for the maximum of `f` on `[lo, hi]`.
pub(crate) fn golden_max(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if (hi - lo).abs() <= 1e-14 * (hi.abs() + lo.abs()) {
            break;
        }
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        }
    }
    0.5 * (lo + hi)
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub(crate) fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Location and value of the maximum of `f` over a log-spaced frequency
/// range: dense scan followed by golden-section refinement in log space.
pub(crate) fn log_peak(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    const SCAN: usize = 4000;
    let (l0, l1) = (lo.ln(), hi.ln());
    let step = (l1 - l0) / (SCAN - 1) as f64;
    let best = (0..SCAN)
        .map(|i| l0 + step * i as f64)
        .map(|l| (l, f(l.exp())))
        .fold((l0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let a = (best.0 - step).max(l0);
    let b = (best.0 + step).min(l1);
    let l = golden_max(a, b, |l| f(l.exp()));
    (l.exp(), f(l.exp()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_models_are_consistent() {
        for kind in Kind::ALL {
            let m = CircuitModel::builtin(kind);
            assert_eq!(m.kind, kind);
            assert_eq!(m.nominal_params.len(), kind.param_count());
            for obs in kind.observables() {
                assert!(m.grids.contains_key(*obs), "{kind} lacks {obs} grid");
            }
        }
    }

    #[test]
    fn param_vector_rejects_non_positive() {
        assert!(ParamVector::new(vec![1.0, 0.0]).is_err());
        assert!(ParamVector::new(vec![f64::NAN]).is_err());
        assert!(ParamVector::new(vec![-3.0]).is_err());
        assert!(ParamVector::new(vec![2.0]).is_ok());
    }

    #[test]
    fn wrong_arity_is_invalid_params() {
        let m = CircuitModel::builtin(Kind::Bpf);
        let p = ParamVector::new(vec![1000.0]).unwrap();
        let err = simulate(&m, &p, m.grid("frequency").unwrap()).unwrap_err();
        assert!(matches!(err, CircuitError::InvalidParams(_)));
    }

    #[test]
    fn unit_scaling_is_identity() {
        for kind in Kind::ALL {
            let m = CircuitModel::builtin(kind);
            let scaled = m.nominal_params.scaled(1.0).unwrap();
            for obs in kind.observables() {
                let g = m.grid(obs).unwrap();
                let a = simulate(&m, &m.nominal_params, g).unwrap();
                let b = simulate(&m, &scaled, g).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn missing_constant_is_reported() {
        let mut m = CircuitModel::builtin(Kind::Ota);
        m.spec.constants.remove("beta");
        let err = simulate(&m, &m.nominal_params, m.grid("frequency").unwrap()).unwrap_err();
        assert_eq!(err, CircuitError::MissingConstant("beta".into()));
    }

    #[test]
    fn kind_parses_case_insensitively() {
        assert_eq!("OTA".parse::<Kind>().unwrap(), Kind::Ota);
        assert!("adc".parse::<Kind>().is_err());
    }
}
