use std::sync::Arc;
use std::time::Instant;

use super::{AttackConfig, AttackKind, ExperimentReport, HarnessError, OracleBundle, PassSummary, Status};
use crate::circuit::{Kind, ParamVector, ResponseCurve, SamplingGrid};
use crate::ga::{run_ga, Criterion, Encoding, FitnessFunction, GaConfig, GaOutcome, GaRun, GenerationStats, Genes, HaltReason};
use crate::circuit::CircuitSpec;
use crate::locking::{effective_width, Key, LockedView};
use crate::smt::{self, BruteCheck, CandidateKeySet, LockConstraint, SmtError};

/// A finished attack: the report plus the GA traces that produced it.
#[derive(Debug, Clone)]
pub struct AttackRun {
    pub report: ExperimentReport,
    /// `(label, trace)` per GA pass.
    pub traces: Vec<(String, Vec<GenerationStats>)>,
}

#[derive(Debug, Clone)]
pub struct Case1Result {
    pub widths: Vec<f64>,
    pub fitness: f64,
    pub relative_distance: f64,
    pub outcome: GaOutcome,
    pub wall_time_s: f64,
}

impl Case1Result {
    pub fn succeeded(&self) -> bool {
        self.outcome.halt_reason == HaltReason::Target
    }

    fn summary(&self) -> PassSummary {
        PassSummary {
            generations: self.outcome.generations(),
            wall_time_s: self.wall_time_s,
            params: self.widths.clone(),
            relative_distance: self.relative_distance,
            halt_reason: self.outcome.halt_reason,
        }
    }
}

type Decoder = Arc<dyn Fn(&Genes) -> Result<ParamVector, String> + Send + Sync>;
type WidthFn = Arc<dyn Fn(&Genes) -> Result<Vec<f64>, String> + Send + Sync>;

/// One halting criterion per oracle curve. Residuals are divided by the
/// root of the stopping threshold so that fitness 1 means "within
/// tolerance"; roulette keeps its contrast near the end of the search.
fn curve_criteria(view: &Arc<LockedView>, oracle: &OracleBundle, decode: &Decoder, threshold: f64) -> FitnessFunction {
    let scale = residual_scale(threshold);
    let mut ff = FitnessFunction::new();
    for (name, target) in &oracle.curves {
        let grid: SamplingGrid = oracle.grids[name].clone();
        let target: ResponseCurve = target.clone();
        let (view, decode) = (Arc::clone(view), Arc::clone(decode));
        let c: Criterion = Box::new(move |g| {
            let p = decode(g)?;
            let sim = view.simulate_params(&p, &grid).map_err(|e| e.to_string())?;
            Ok(sim.y.iter().zip(&target.y).map(|(a, b)| scale * (a - b)).collect())
        });
        ff = ff.with(c);
    }
    ff
}

fn residual_scale(threshold: f64) -> f64 {
    if threshold > 0.0 && threshold.is_finite() { 1.0 / threshold.sqrt() } else { 1.0 }
}

/// GA settings whose target matches [`curve_criteria`] built with the same
/// threshold.
fn scaled_ga(config: &AttackConfig, threshold: f64) -> GaConfig {
    let target_fitness = if threshold > 0.0 && threshold.is_finite() { 1.0 } else { threshold };
    GaConfig { target_fitness, ..config.ga.clone() }
}

/// Per-slot bounds a single replacement transistor can take: from the
/// narrowest column to every column conducting.
fn width_bounds(view: &LockedView) -> (Vec<f64>, Vec<f64>) {
    view.grids()
        .iter()
        .map(|g| (g.col_widths.iter().copied().fold(f64::INFINITY, f64::min), g.total_width()))
        .unzip()
}

/// Case 1: each locked grid is replaced by one transistor of unknown
/// width, recovered with real-encoded genes.
pub fn run_case1(view: &LockedView, oracle: &OracleBundle, config: &AttackConfig) -> Result<Case1Result, HarnessError> {
    run_case1_from(view, oracle, config, None)
}

/// [`run_case1`] with an optional starting point placed in the initial
/// population.
pub fn run_case1_from(
    view: &LockedView,
    oracle: &OracleBundle,
    config: &AttackConfig,
    initial: Option<Vec<f64>>,
) -> Result<Case1Result, HarnessError> {
    let started = Instant::now();
    let view = Arc::new(view.clone());
    let (lower, upper) = width_bounds(&view);
    let encoding = Encoding::Real { lower, upper };
    let decode: Decoder = Arc::new(|g| ParamVector::new(g.as_real().unwrap().to_vec()).map_err(|e| e.to_string()));
    let threshold = oracle.threshold(config.case1_tolerance_for(view.kind()));
    let ff = curve_criteria(&view, oracle, &decode, threshold);
    let ga = scaled_ga(config, threshold);
    let outcome = GaRun::new(&ga, &encoding, &ff, initial.map(Genes::Real).into_iter().collect())?.finish()?;
    let widths = outcome.best.genes.as_real().unwrap().to_vec();
    let fitness = oracle.fitness_of(|g| view.simulate_params(&ParamVector::new(widths.clone())?, g));
    Ok(Case1Result {
        widths,
        fitness,
        relative_distance: oracle.relative_distance(fitness),
        outcome,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Width residuals relative to the hint, in units of `tol`.
/// [`run_case1`] as a report: success when the recovered widths reproduce
/// the oracle within the case 1 tolerance.
pub fn run_case1_attack(view: &LockedView, oracle: &OracleBundle, config: &AttackConfig) -> Result<AttackRun, HarnessError> {
    let r = run_case1(view, oracle, config)?;
    let tol = config.case1_tolerance_for(view.kind());
    let report = ExperimentReport {
        benchmark: view.kind(),
        scheme: view.scheme(),
        k: view.k(),
        attack: AttackKind::Case1,
        seed: config.ga.seed,
        status: if r.relative_distance <= tol { Status::Success } else { Status::Failed },
        halt_reason: Some(r.outcome.halt_reason),
        k_prime: 0,
        recovered_key: None,
        key_block: None,
        recovered_params: Some(r.widths.clone()),
        generations: r.outcome.generations(),
        evaluations: r.outcome.evaluations,
        wall_time_s: r.wall_time_s,
        final_fitness: r.fitness,
        relative_distance: r.relative_distance,
        pass1: None,
    };
    Ok(AttackRun { report, traces: vec![("ga".into(), r.outcome.trace)] })
}

/// Enumerator result: the report, every candidate, and the simulation
/// check when one was possible.
#[derive(Debug, Clone)]
pub struct EnumerationRun {
    pub report: ExperimentReport,
    pub candidates: CandidateKeySet,
    pub checked: Option<BruteCheck>,
}

/// Exact enumeration baseline. Needs the circuit specification; the best
/// surviving candidate is reported as the recovered key.
pub fn run_enumeration(
    view: &LockedView,
    oracle: &OracleBundle,
    spec: Option<&CircuitSpec>,
    config: &AttackConfig,
) -> Result<EnumerationRun, HarnessError> {
    let started = Instant::now();
    let targets = smt::derive_targets(view, spec, &oracle.metrics)?;
    let constraint = LockConstraint::new(view, &targets)?;
    let candidates = smt::enumerate_keys(&constraint, config.width_tolerance, config.candidate_cap)?;
    let checked = match smt::brute_check(&candidates, view, oracle, config.match_tolerance) {
        Ok(c) => Some(c),
        Err(SmtError::NoMatch) => None,
        Err(e) => return Err(e.into()),
    };
    let best = checked.as_ref().map(|c| c.survivors[0].clone());
    let report = ExperimentReport {
        benchmark: view.kind(),
        scheme: view.scheme(),
        k: view.k(),
        attack: AttackKind::Enumerate,
        seed: config.ga.seed,
        status: if best.is_some() { Status::Success } else { Status::Failed },
        halt_reason: None,
        k_prime: candidates.len(),
        recovered_key: best.as_ref().map(|b| b.key.to_hex()),
        key_block: None,
        recovered_params: best.as_ref().and_then(|b| view.widths(&b.key).ok()),
        generations: 0,
        evaluations: checked.as_ref().map_or(0, |c| c.simulations),
        wall_time_s: started.elapsed().as_secs_f64(),
        final_fitness: best.as_ref().map_or(f64::INFINITY, |b| b.curve_fitness),
        relative_distance: best.as_ref().map_or(f64::INFINITY, |b| oracle.relative_distance(b.curve_fitness)),
        pass1: None,
    };
    Ok(EnumerationRun { report, candidates, checked })
}

fn width_guide(hint: Vec<f64>, tol: f64, widths: WidthFn) -> Criterion {
    Box::new(move |g| Ok(widths(g)?.iter().zip(&hint).map(|(w, h)| (w - h) / (tol * h)).collect()))
}

/// Deviation of each oracle metric from its measured value, in units of
/// `tol`: relative for plain quantities, as a log amplitude ratio for
/// decibels.
fn metric_guide(view: Arc<LockedView>, oracle: &OracleBundle, decode: Decoder, tol: f64) -> Criterion {
    let targets: Vec<(String, f64)> = oracle.metrics.iter().map(|(k, v)| (k.clone(), *v)).collect();
    Box::new(move |g| {
        let m = view.characterize(&decode(g)?).map_err(|e| e.to_string())?;
        targets
            .iter()
            .map(|(name, target)| {
                let v = *m.get(name).ok_or_else(|| format!("no metric {name}"))?;
                let dev = if name.ends_with("_db") { (v - target) * std::f64::consts::LN_10 / 20.0 } else { v / target - 1.0 };
                Ok(dev / tol)
            })
            .collect()
    })
}

/// Case 2: binary search over the whole key. A width hint adds one guide
/// criterion per slot, `(W(q) - w_hint) / (hint_tolerance * w_hint)`.
pub fn run_case2_ga(
    view: &LockedView,
    oracle: &OracleBundle,
    config: &AttackConfig,
    w_hint: Option<&[f64]>,
) -> Result<AttackRun, HarnessError> {
    if let Some(h) = w_hint {
        if h.len() != view.grids().len() || h.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(HarnessError::Unsupported(format!("width hint {h:?} for {} slots", view.grids().len())));
        }
    }
    let started = Instant::now();
    let view_arc = Arc::new(view.clone());
    let k = view.k();
    let widths: WidthFn = {
        let view = Arc::clone(&view_arc);
        Arc::new(move |g: &Genes| view.widths(&Key::new(g.as_binary().unwrap().to_vec())).map_err(|e| e.to_string()))
    };
    let decode: Decoder = {
        let widths = Arc::clone(&widths);
        Arc::new(move |g| ParamVector::new(widths(g)?).map_err(|e| e.to_string()))
    };
    let threshold = oracle.threshold(config.match_tolerance);
    let mut ff = curve_criteria(&view_arc, oracle, &decode, threshold);
    if config.metric_guides && threshold > 0.0 && threshold.is_finite() && config.metric_tolerance > 0.0 {
        ff = ff.with_guide(metric_guide(Arc::clone(&view_arc), oracle, Arc::clone(&decode), config.metric_tolerance));
    }
    if let Some(h) = w_hint {
        ff = ff.with_guide(width_guide(h.to_vec(), config.hint_tolerance, Arc::clone(&widths)));
    }
    let ga = scaled_ga(config, threshold);
    let outcome = run_ga(&ga, &Encoding::Binary { len: k }, &ff)?;
    let key = Key::new(outcome.best.genes.as_binary().unwrap().to_vec());

    // verification before report
    let fitness = oracle.fitness_of(|g| {
        let p = view.params(&key).map_err(|e| crate::circuit::CircuitError::InvalidParams(e.to_string()))?;
        view.simulate_params(&p, g)
    });
    let rel = oracle.relative_distance(fitness);
    let status = if rel <= config.match_tolerance { Status::Success } else { Status::Failed };
    let report = ExperimentReport {
        benchmark: view.kind(),
        scheme: view.scheme(),
        k,
        attack: AttackKind::Case2Ga,
        seed: config.ga.seed,
        status,
        halt_reason: Some(outcome.halt_reason),
        k_prime: 1,
        recovered_key: Some(key.to_hex()),
        key_block: None,
        recovered_params: view.widths(&key).ok(),
        generations: outcome.generations(),
        evaluations: outcome.evaluations,
        wall_time_s: started.elapsed().as_secs_f64(),
        final_fitness: fitness,
        relative_distance: rel,
        pass1: None,
    };
    Ok(AttackRun { report, traces: vec![("ga".into(), outcome.trace)] })
}

/// Recover the widths first, then search the key with them as a hint.
pub fn two_pass(view: &LockedView, oracle: &OracleBundle, config: &AttackConfig) -> Result<AttackRun, HarnessError> {
    let started = Instant::now();
    let pass1 = run_case1(view, oracle, config)?;
    let mut run = run_case2_ga(view, oracle, config, Some(&pass1.widths))?;
    run.report.attack = AttackKind::TwoPass;
    run.report.pass1 = Some(pass1.summary());
    run.report.wall_time_s = started.elapsed().as_secs_f64();
    run.traces.insert(0, ("pass1".into(), pass1.outcome.trace));
    run.traces[1].0 = "pass2".into();
    Ok(run)
}

/// Receiver experiment: the only observable is the receiver output. Pass 1
/// recovers all mirror widths; pass 2 searches the PLL key block with the
/// other slots held at their first-pass widths.
pub fn run_receiver_attack(view: &LockedView, oracle: &OracleBundle, config: &AttackConfig) -> Result<AttackRun, HarnessError> {
    if view.kind() != Kind::Receiver {
        return Err(HarnessError::Unsupported(format!("receiver attack on {}", view.kind())));
    }
    let started = Instant::now();
    let pll = view.grids()[0].clone();
    let block = pll.key_bits();
    let (start, len) = (block[0], block.len());
    if block != (start..start + len).collect::<Vec<_>>() {
        return Err(HarnessError::Unsupported("PLL key bits are not one contiguous block".into()));
    }

    let pass1 = run_case1(view, oracle, config)?;
    let fixed = pass1.widths.clone();
    let k = view.k();
    let block_key = move |g: &Genes| {
        let mut bits = vec![false; k];
        bits[start..start + len].copy_from_slice(g.as_binary().unwrap());
        Key::new(bits)
    };
    let widths: WidthFn = {
        let (pll, fixed) = (pll.clone(), fixed.clone());
        Arc::new(move |g: &Genes| {
            let mut w = fixed.clone();
            w[0] = effective_width(&pll, &block_key(g)).map_err(|e| e.to_string())?;
            Ok(w)
        })
    };
    let decode: Decoder = {
        let widths = Arc::clone(&widths);
        Arc::new(move |g| ParamVector::new(widths(g)?).map_err(|e| e.to_string()))
    };
    let view_arc = Arc::new(view.clone());
    let pll_width = {
        let widths = Arc::clone(&widths);
        Arc::new(move |g: &Genes| Ok(vec![widths(g)?[0]])) as WidthFn
    };
    let threshold = oracle.threshold(config.receiver_tolerance);
    let ff = curve_criteria(&view_arc, oracle, &decode, threshold)
        .with_guide(width_guide(vec![fixed[0]], config.hint_tolerance, pll_width));
    let ga = scaled_ga(config, threshold);
    let outcome = run_ga(&ga, &Encoding::Binary { len }, &ff)?;
    let genes = outcome.best.genes.clone();
    let params = widths(&genes).map_err(HarnessError::Unsupported)?;
    let fitness = oracle.fitness_of(|g| view.simulate_params(&ParamVector::new(params.clone())?, g));
    let rel = oracle.relative_distance(fitness);
    let status = if rel <= config.receiver_tolerance { Status::Success } else { Status::Failed };
    let report = ExperimentReport {
        benchmark: Kind::Receiver,
        scheme: view.scheme(),
        k,
        attack: AttackKind::Receiver,
        seed: config.ga.seed,
        status,
        halt_reason: Some(outcome.halt_reason),
        k_prime: 1,
        recovered_key: Some(Key::new(genes.as_binary().unwrap().to_vec()).to_hex()),
        key_block: Some((start, len)),
        recovered_params: Some(params),
        generations: outcome.generations(),
        evaluations: outcome.evaluations,
        wall_time_s: started.elapsed().as_secs_f64(),
        final_fitness: fitness,
        relative_distance: rel,
        pass1: Some(pass1.summary()),
    };
    Ok(AttackRun { report, traces: vec![("pass1".into(), pass1.outcome.trace), ("pass2".into(), outcome.trace)] })
}
