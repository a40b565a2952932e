//! One-time calibration of the behavioral models.
//!
//! Design constants are solved so that the nominal widths reproduce the
//! published characterization of each benchmark:
//!
//! | benchmark | targets                                   |
//! |-----------|-------------------------------------------|
//! | OTA       | 41 dB DC gain, 1.2 GHz unity-gain freq.   |
//! | BPF       | 0 dB peak at 250 kHz, 150 kHz -3 dB BW    |
//! | PLL       | 1.8 GHz locking freq., 920 ns settling    |
//! | TWG       | 1 V swing, 2 us period                    |
//!
//! The receiver reuses the PLL calibration and places its pass band at
//! `f_lo + 200 MHz`. The results are committed under `models/`;
//! [`CircuitModel::builtin`] loads those files.
//!
//! The same design equations, run backwards, give the widths that a
//! measured characterization implies ([`invert_metrics`]). That inversion
//! needs the full set of design constants and is what the enumeration
//! attack relies on.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::bpf::Bpf;
use super::pll::Pll;
use super::{bisect, CircuitError, CircuitModel, CircuitSpec, Kind, ParamVector, SamplingGrid};

pub const OTA_GAIN_DB: f64 = 41.0;
pub const OTA_UGF_HZ: f64 = 1.2e9;
pub const BPF_GAIN_DB: f64 = 0.0;
pub const BPF_CENTER_HZ: f64 = 250e3;
pub const BPF_BW_HZ: f64 = 150e3;
pub const PLL_F_LOCK_HZ: f64 = 1.8e9;
pub const PLL_T_SETTLE_S: f64 = 920e-9;
pub const TWG_AMPLITUDE_V: f64 = 1.0;
pub const TWG_PERIOD_S: f64 = 2e-6;
pub const RECEIVER_IF_HZ: f64 = 200e6;

const W_REF: f64 = 1000.0;
/// Zero-to-pole spread of the PLL loop filter, `tau_z / tau_p`.
const PLL_POLE_SPREAD: f64 = 10.0;
/// First-stage internal poles (input OTA, integrator OTA) at nominal bias.
const BPF_PARASITIC_HZ: [f64; 2] = [10e6, 1e6];

fn spec(i_ref: f64, constants: &[(&str, f64)]) -> CircuitSpec {
    let mut map: BTreeMap<String, f64> = constants.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    map.insert("w_ref".into(), W_REF);
    CircuitSpec { i_ref, constants: map }
}

fn grids(entries: &[(&str, SamplingGrid)]) -> BTreeMap<String, SamplingGrid> {
    entries.iter().map(|(k, g)| (k.to_string(), g.clone())).collect()
}

fn gm(beta: f64, i: f64) -> f64 {
    (2.0 * beta * i).sqrt()
}

/// Width (nm) that gives transconductance `g` under `spec`'s mirror ratio.
fn width_for_gm(spec: &CircuitSpec, beta: f64, g: f64) -> Result<f64, CircuitError> {
    let i = g * g / (2.0 * beta);
    Ok(i / spec.i_ref * spec.get("w_ref")?)
}

pub fn calibrate(kind: Kind) -> Result<CircuitModel, CircuitError> {
    match kind {
        Kind::Ota => calibrate_ota(),
        Kind::Bpf => calibrate_bpf(),
        Kind::Pll => calibrate_pll(),
        Kind::Twg => calibrate_twg(),
        Kind::Receiver => calibrate_receiver(),
    }
}

pub fn calibrate_all() -> Result<Vec<CircuitModel>, CircuitError> {
    Kind::ALL.into_iter().map(calibrate).collect()
}

fn calibrate_ota() -> Result<CircuitModel, CircuitError> {
    let (i_ref, width, beta) = (20e-6, 2400.0, 2e-3);
    let i = width / W_REF * i_ref;
    let a0 = 10f64.powf(OTA_GAIN_DB / 20.0);
    let lambda = gm(beta, i) / (a0 * i);
    let f_pole = OTA_UGF_HZ / (a0 * a0 - 1.0).sqrt();
    let c_load = lambda * i / (2.0 * PI * f_pole);
    Ok(CircuitModel {
        kind: Kind::Ota,
        nominal_params: ParamVector::new(vec![width])?,
        spec: spec(i_ref, &[("beta", beta), ("lambda", lambda), ("c_load", c_load)]),
        grids: grids(&[("frequency", SamplingGrid::log_frequency(1e6, 1e10, 200))]),
    })
}

const BPF_TUNE_WIDTHS: [f64; 2] = [3000.0, 4000.0];
/// Stage centre frequencies relative to the overall centre. Identical stages
/// make the response symmetric under swapping their damping mirrors.
const BPF_STAGGER: [f64; 2] = [0.85, 1.0 / 0.85];

/// BPF widths for a common natural frequency `f0`, common Q `q` and
/// per-stage gain `g`: `gm_tune = 2 pi f0 C_k`, `gm_damp = gm_tune / q`,
/// `gm_in = g gm_damp`.
fn bpf_widths(spec: &CircuitSpec, f0: f64, q: f64, g: f64) -> Result<Vec<f64>, CircuitError> {
    let beta = spec.get("beta")?;
    let mut out = Vec::with_capacity(6);
    for k in 1..=2 {
        let gm_tune = 2.0 * PI * f0 * BPF_STAGGER[k - 1] * spec.get(&format!("c{k}"))?;
        let gm_damp = gm_tune / q;
        for g_x in [g * gm_damp, gm_damp, gm_tune] {
            out.push(width_for_gm(spec, beta, g_x)?);
        }
    }
    Ok(out)
}

/// Solve the BPF design equations for the widths that produce the given
/// peak gain, centre frequency and bandwidth.
fn solve_bpf(spec: &CircuitSpec, gain_db: f64, fc: f64, bw: f64) -> Result<Vec<f64>, CircuitError> {
    let (mut f0, mut q, mut g) = (fc, 1.0, 1.0);
    for _ in 0..60 {
        let bw_at = |q: f64| -> f64 {
            bpf_widths(spec, f0, q, g)
                .and_then(|w| Bpf::new(spec, &w)?.metrics())
                .map(|m| m.bandwidth_hz - bw)
                .unwrap_or(f64::NAN)
        };
        q = bisect(0.2, 20.0, |q| bw_at(q).max(-1e300));
        let m = Bpf::new(spec, &bpf_widths(spec, f0, q, g)?)?.metrics()?;
        let (df, dg) = (fc / m.center_hz, 10f64.powf((gain_db - m.peak_gain_db) / 40.0));
        f0 *= df;
        g *= dg;
        if (df - 1.0).abs() < 1e-14 && (dg - 1.0).abs() < 1e-14 {
            break;
        }
    }
    bpf_widths(spec, f0, q, g)
}

fn calibrate_bpf() -> Result<CircuitModel, CircuitError> {
    let (i_ref, beta) = (10e-6, 1e-3);
    let mut s = spec(i_ref, &[("beta", beta)]);
    for (k, w) in BPF_TUNE_WIDTHS.iter().enumerate() {
        let gm_tune = gm(beta, w / W_REF * i_ref);
        let c = gm_tune / (2.0 * PI * BPF_CENTER_HZ * BPF_STAGGER[k]);
        s.constants.insert(format!("c{}", k + 1), c);
        if k == 0 {
            // the input OTA is sized close to the integrators
            for (name, f) in [("cp_in1", BPF_PARASITIC_HZ[0]), ("cp_tune1", BPF_PARASITIC_HZ[1])] {
                s.constants.insert(name.into(), gm_tune / (2.0 * PI * f));
            }
        }
    }
    let widths = solve_bpf(&s, BPF_GAIN_DB, BPF_CENTER_HZ, BPF_BW_HZ)?;
    Ok(CircuitModel {
        kind: Kind::Bpf,
        nominal_params: ParamVector::new(widths)?,
        spec: s,
        grids: grids(&[("frequency", SamplingGrid::log_frequency(2.5e3, 2.5e7, 200))]),
    })
}

fn pll_constants(i_nominal: f64) -> Result<Vec<(&'static str, f64)>, CircuitError> {
    let b = PLL_POLE_SPREAD;
    // unit-crossover prototype; settling time scales as 1 / w_c
    let proto = Pll::from_loop(1.0, 1.0, 1.0 / b.sqrt(), b.sqrt(), 1.0 / b.sqrt())?;
    let w_c = proto.settle_time()? / PLL_T_SETTLE_S;
    let r_bias = 5e3;
    Ok(vec![
        ("k_loop", w_c * w_c / b.sqrt() / i_nominal),
        ("tau_z", b.sqrt() / w_c),
        ("tau_p", 1.0 / (b.sqrt() * w_c)),
        ("r_bias", r_bias),
        ("k_vco", PLL_F_LOCK_HZ / (r_bias * i_nominal)),
    ])
}

fn calibrate_pll() -> Result<CircuitModel, CircuitError> {
    let (i_ref, width) = (50e-6, 3600.0);
    let constants = pll_constants(width / W_REF * i_ref)?;
    let s = spec(i_ref, &constants);
    // loop crossover frequency
    let f_c = PLL_POLE_SPREAD.sqrt() / (2.0 * PI * s.get("tau_z")?);
    Ok(CircuitModel {
        kind: Kind::Pll,
        nominal_params: ParamVector::new(vec![width])?,
        spec: s,
        grids: grids(&[
            ("transient", SamplingGrid::linear_time(0.0, 5.0 * PLL_T_SETTLE_S, 2000)),
            ("frequency", SamplingGrid::log_frequency(f_c / 100.0, f_c * 100.0, 200)),
        ]),
    })
}

fn calibrate_twg() -> Result<CircuitModel, CircuitError> {
    let (i_ref, width) = (10e-6, 2000.0);
    let i = width / W_REF * i_ref;
    let (v_low, v_high) = (0.4, 0.4 + TWG_AMPLITUDE_V);
    let c_int = i * (TWG_PERIOD_S / 2.0) / TWG_AMPLITUDE_V;
    Ok(CircuitModel {
        kind: Kind::Twg,
        nominal_params: ParamVector::new(vec![width, width])?,
        spec: spec(i_ref, &[("c_int", c_int), ("v_low", v_low), ("v_high", v_high)]),
        grids: grids(&[("transient", SamplingGrid::linear_time(0.0, 1.0 * TWG_PERIOD_S, 500))]),
    })
}

fn calibrate_receiver() -> Result<CircuitModel, CircuitError> {
    let (i_ref, beta) = (50e-6, 2e-3);
    let widths = [3600.0, 2000.0, 1500.0, 2500.0];
    let current = |w: f64| w / W_REF * i_ref;
    let mut constants: Vec<(String, f64)> = pll_constants(current(widths[0]))?
        .into_iter()
        .map(|(k, v)| (format!("pll.{k}"), v))
        .collect();
    constants.push(("pll.w_ref".into(), W_REF));

    let lna_k = 10.0 / gm(beta, current(widths[1]));
    let if_c = gm(beta, current(widths[2])) / (2.0 * PI * RECEIVER_IF_HZ);
    let i_amp = current(widths[3]);
    let amp_lambda = gm(beta, i_amp) / (20.0 * i_amp);
    let amp_c = amp_lambda * i_amp / (2.0 * PI * 400e6);
    for (k, v) in [
        ("beta", beta),
        ("lna_k", lna_k),
        ("lna_f0", PLL_F_LOCK_HZ + RECEIVER_IF_HZ),
        ("lna_q", 3.0),
        ("if_c", if_c),
        ("if_q", 4.0),
        ("mix_gain", 1.0),
        ("amp_lambda", amp_lambda),
        ("amp_c", amp_c),
    ] {
        constants.push((k.into(), v));
    }
    let refs: Vec<(&str, f64)> = constants.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    Ok(CircuitModel {
        kind: Kind::Receiver,
        nominal_params: ParamVector::new(widths.to_vec())?,
        spec: spec(i_ref, &refs),
        grids: grids(&[("frequency", SamplingGrid::log_frequency(1e9, 3e9, 200))]),
    })
}

/// Write every calibrated model as `<dir>/<kind>.json`.
pub fn write_models(dir: &std::path::Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for model in calibrate_all().map_err(std::io::Error::other)? {
        let text = serde_json::to_string_pretty(&model).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(format!("{}.json", model.kind)), text + "\n")?;
    }
    Ok(())
}

/// Widths implied by a measured characterization (as produced by
/// [`super::characterize`]), given the design constants in `spec`.
pub fn invert_metrics(
    kind: Kind,
    spec: &CircuitSpec,
    metrics: &BTreeMap<String, f64>,
) -> Result<Vec<f64>, CircuitError> {
    spec.validate()?;
    let metric = |name: &str| {
        metrics
            .get(name)
            .copied()
            .ok_or_else(|| CircuitError::InvalidParams(format!("oracle metric `{name}` missing")))
    };
    let w_ref = spec.get("w_ref")?;
    let width_for_current = |i: f64| i / spec.i_ref * w_ref;
    match kind {
        Kind::Ota => {
            // unity-gain frequency -> gm -> I_bias -> W
            let target = metric("ugf_hz")?;
            super::ota::Ota::new(spec, w_ref)?;
            let ugf = |w: f64| -> f64 {
                super::ota::Ota::new(spec, w)
                    .and_then(|o| o.unity_gain_frequency())
                    .map(|f| f.ln() - target.ln())
                    .unwrap_or(f64::NAN)
            };
            // bracket in log-width
            let (lo, hi) = bracket(|l| ugf(l.exp()), w_ref.ln())?;
            Ok(vec![bisect(lo, hi, |l| ugf(l.exp())).exp()])
        }
        Kind::Pll => {
            let v = metric("f_locking_hz")? / spec.get("k_vco")?;
            Ok(vec![width_for_current(v / spec.get("r_bias")?)])
        }
        Kind::Twg => {
            let c = spec.get("c_int")?;
            let swing = metric("amplitude_v")?;
            let rise = metric("rise_time_s")?;
            let fall = metric("period_s")? - rise;
            if !(rise > 0.0 && fall > 0.0) {
                return Err(CircuitError::DegenerateModel("TWG rise/fall times".into()));
            }
            Ok(vec![width_for_current(c * swing / rise), width_for_current(c * swing / fall)])
        }
        Kind::Bpf => solve_bpf(spec, metric("gain_db")?, metric("fc_hz")?, metric("bw_hz")?),
        Kind::Receiver => Err(CircuitError::Unsupported(
            "no closed-form design inversion for the receiver chain".into(),
        )),
    }
}

/// Find `[lo, hi]` around `start` with a sign change of the increasing `f`.
fn bracket(f: impl Fn(f64) -> f64, start: f64) -> Result<(f64, f64), CircuitError> {
    let mut step = 1.0;
    for _ in 0..60 {
        let (lo, hi) = (start - step, start + step);
        let (a, b) = (f(lo), f(hi));
        if a.is_finite() && b.is_finite() && a <= 0.0 && b >= 0.0 {
            return Ok((lo, hi));
        }
        step *= 1.5;
    }
    Err(CircuitError::DegenerateModel("metric inversion did not bracket a solution".into()))
}
