//! Specification-driven key enumeration.
//!
//! The attacker inverts the design equations at the oracle's measured
//! characterization to get a target width per locked slot, then solves
//! each slot's lock equation exactly: a subset sum over column widths,
//! expanded to every key-bit pattern that realizes the chosen column
//! states. Candidates are finally simulated against the oracle.
//!
//! Unlike the GA, this needs the circuit specification (`i_ref` and the
//! model constants), passed separately from the locked netlist.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{calibrate, CircuitError, CircuitSpec, ParamVector};
use crate::harness::OracleBundle;
use crate::locking::{Key, LockError, LockedView};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmtError {
    #[error("circuit specification missing: {0}")]
    SpecMissing(String),
    #[error("{count} candidate keys exceed the cap of {cap}")]
    CandidateOverflow { count: f64, cap: usize },
    #[error("no candidate key reproduces the oracle")]
    NoMatch,
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Lock(#[from] LockError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

/// Default relative width tolerance for the subset-sum match.
pub const DEFAULT_WIDTH_TOL: f64 = 5e-3;
pub const DEFAULT_CANDIDATE_CAP: usize = 1_000_000;

/// Widths each locked slot must have, from the design equations.
pub fn derive_targets(
    view: &LockedView,
    spec: Option<&CircuitSpec>,
    oracle_metrics: &BTreeMap<String, f64>,
) -> Result<Vec<f64>, SmtError> {
    let spec = spec.ok_or_else(|| SmtError::SpecMissing("no circuit specification supplied".into()))?;
    if !(spec.i_ref.is_finite() && spec.i_ref > 0.0) {
        return Err(SmtError::SpecMissing("reference current i_ref".into()));
    }
    let targets = calibrate::invert_metrics(view.kind(), spec, oracle_metrics).map_err(|e| match e {
        CircuitError::MissingConstant(c) => SmtError::SpecMissing(format!("model constant `{c}`")),
        CircuitError::Unsupported(m) => SmtError::Unsupported(m),
        other => SmtError::Circuit(other),
    })?;
    if targets.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(SmtError::Circuit(CircuitError::DegenerateModel(format!("targets {targets:?}"))));
    }
    Ok(targets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub width: f64,
    /// Key bits in series; the column conducts iff all are 1.
    pub bits: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotConstraint {
    pub target: f64,
    pub columns: Vec<Column>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockConstraint {
    pub k: usize,
    pub slots: Vec<SlotConstraint>,
}

impl LockConstraint {
    pub fn new(view: &LockedView, targets: &[f64]) -> Result<Self, SmtError> {
        if targets.len() != view.grids().len() {
            return Err(SmtError::Unsupported(format!(
                "{} targets for {} slots",
                targets.len(),
                view.grids().len()
            )));
        }
        let slots = view
            .grids()
            .iter()
            .zip(targets)
            .map(|(g, &target)| SlotConstraint {
                target,
                columns: (0..g.n).map(|i| Column { width: g.col_widths[i], bits: g.column_bits(i) }).collect(),
            })
            .collect();
        Ok(LockConstraint { k: view.k(), slots })
    }

    /// The constraint system in SMT-LIB 2 (QF_LRA), for running an
    /// external solver out of band.
    pub fn to_smtlib(&self, tol: f64) -> String {
        let mut s = String::from("(set-logic QF_LRA)\n");
        for b in 0..self.k {
            writeln!(s, "(declare-const q{b} Bool)").unwrap();
        }
        for (n, slot) in self.slots.iter().enumerate() {
            let terms: Vec<String> = slot
                .columns
                .iter()
                .map(|c| {
                    let gate = match c.bits.as_slice() {
                        [] => "true".to_string(),
                        [b] => format!("q{b}"),
                        bits => format!("(and {})", bits.iter().map(|b| format!("q{b}")).collect::<Vec<_>>().join(" ")),
                    };
                    format!("(ite {gate} {} 0.0)", decimal(c.width))
                })
                .collect();
            writeln!(s, "(define-fun w{n} () Real (+ 0.0 {}))", terms.join(" ")).unwrap();
            let (lo, hi) = (slot.target * (1.0 - tol), slot.target * (1.0 + tol));
            writeln!(s, "(assert (and (>= w{n} {}) (<= w{n} {})))", decimal(lo), decimal(hi)).unwrap();
        }
        s.push_str("(check-sat)\n(get-model)\n");
        s
    }
}

fn decimal(v: f64) -> String {
    let s = format!("{v:.12}");
    if s.contains('.') { s } else { format!("{s}.0") }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub key: Key,
    /// Sum over slots of `|W(q) - W_target|`.
    pub width_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateKeySet {
    pub candidates: Vec<Candidate>,
    /// Column selections found per slot.
    pub selections_per_slot: Vec<usize>,
}

impl CandidateKeySet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn contains(&self, key: &Key) -> bool {
        self.candidates.iter().any(|c| &c.key == key)
    }
}

/// Column on/off selections of one slot whose width is within `tol_abs`
/// of the target. Depth-first over columns sorted by width, pruned by the
/// reachable range.
fn slot_selections(slot: &SlotConstraint, tol_abs: f64) -> Vec<Vec<bool>> {
    let n = slot.columns.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| slot.columns[b].width.total_cmp(&slot.columns[a].width));
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + slot.columns[order[i]].width;
    }
    let slack = tol_abs * (1.0 + 1e-9) + 1e-9 * slot.target;
    let (lo, hi) = (slot.target - slack, slot.target + slack);
    let mut out = Vec::new();
    let mut state = vec![false; n];

    fn walk(
        depth: usize,
        sum: f64,
        ctx: (&[usize], &[f64], &SlotConstraint, f64, f64, f64),
        state: &mut Vec<bool>,
        out: &mut Vec<Vec<bool>>,
    ) {
        let (order, suffix, slot, lo, hi, tol_abs) = ctx;
        if sum > hi || sum + suffix[depth] < lo {
            return;
        }
        if depth == order.len() {
            // exact check in the same summation order as the lock equation
            let w = (0..state.len()).fold(0.0, |acc, i| acc + slot.columns[i].width * if state[i] { 1.0 } else { 0.0 });
            if (w - slot.target).abs() <= tol_abs {
                out.push(state.clone());
            }
            return;
        }
        let col = order[depth];
        state[col] = true;
        walk(depth + 1, sum + slot.columns[col].width, ctx, state, out);
        state[col] = false;
        walk(depth + 1, sum, ctx, state, out);
    }

    walk(0, 0.0, (&order, &suffix, slot, lo, hi, tol_abs), &mut state, &mut out);
    out
}

/// All bit patterns (bits listed by `cols`) realizing the column states.
fn expand(columns: &[Column], states: &[bool]) -> Vec<Vec<(usize, bool)>> {
    let mut patterns: Vec<Vec<(usize, bool)>> = vec![Vec::new()];
    for (c, &on) in columns.iter().zip(states) {
        let choices: Vec<u64> = if on {
            vec![(1u64 << c.bits.len()) - 1]
        } else {
            (0..(1u64 << c.bits.len()) - 1).collect()
        };
        if c.bits.is_empty() && !on {
            // an ungated column cannot be off
            return Vec::new();
        }
        patterns = patterns
            .into_iter()
            .flat_map(|p| {
                choices.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.extend(c.bits.iter().enumerate().map(|(i, &b)| (b, v >> i & 1 == 1)));
                    q
                })
            })
            .collect();
    }
    patterns
}

fn pattern_count(columns: &[Column], states: &[bool]) -> f64 {
    columns
        .iter()
        .zip(states)
        .map(|(c, &on)| if on { 1.0 } else { (2f64.powi(c.bits.len() as i32) - 1.0).max(0.0) })
        .product()
}

/// Every key whose per-slot width lies within `tol` (relative) of the
/// targets, sorted by total width residual, then by key.
pub fn enumerate_keys(constraint: &LockConstraint, tol: f64, cap: usize) -> Result<CandidateKeySet, SmtError> {
    let mut per_slot = Vec::new();
    let mut selections_per_slot = Vec::new();
    let mut total = 1.0;
    for slot in &constraint.slots {
        let tol_abs = tol * slot.target;
        let sels = slot_selections(slot, tol_abs);
        selections_per_slot.push(sels.len());
        let count: f64 = sels.iter().map(|s| pattern_count(&slot.columns, s)).sum();
        total *= count;
        per_slot.push(sels);
    }
    if total > cap as f64 {
        return Err(SmtError::CandidateOverflow { count: total, cap });
    }

    let mut partial: Vec<(Vec<bool>, f64)> = vec![(vec![false; constraint.k], 0.0)];
    for (slot, sels) in constraint.slots.iter().zip(&per_slot) {
        let mut options = Vec::new();
        for s in sels {
            let w = (0..s.len()).fold(0.0, |acc, i| acc + slot.columns[i].width * if s[i] { 1.0 } else { 0.0 });
            let residual = (w - slot.target).abs();
            for p in expand(&slot.columns, s) {
                options.push((p, residual));
            }
        }
        partial = partial
            .into_iter()
            .flat_map(|(bits, r)| {
                options.iter().map(move |(p, pr)| {
                    let mut b = bits.clone();
                    for &(i, v) in p {
                        b[i] = v;
                    }
                    (b, r + pr)
                })
            })
            .collect();
    }
    let mut candidates: Vec<Candidate> =
        partial.into_iter().map(|(b, r)| Candidate { key: Key::new(b), width_residual: r }).collect();
    candidates.sort_by(|a, b| a.width_residual.total_cmp(&b.width_residual).then_with(|| a.key.cmp(&b.key)));
    Ok(CandidateKeySet { candidates, selections_per_slot })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckedKey {
    pub key: Key,
    pub width_residual: f64,
    /// Squared-residual fitness against the oracle curves.
    pub curve_fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteCheck {
    /// Every candidate with its fitness, in candidate order.
    pub checked: Vec<CheckedKey>,
    /// Candidates within the match tolerance, best first.
    pub survivors: Vec<CheckedKey>,
    pub simulations: usize,
}

/// Simulate every candidate against the oracle. Candidates with equal
/// widths share one simulation.
pub fn brute_check(
    candidates: &CandidateKeySet,
    view: &LockedView,
    oracle: &OracleBundle,
    rel_tol: f64,
) -> Result<BruteCheck, SmtError> {
    let widths: Vec<Vec<f64>> = candidates
        .candidates
        .iter()
        .map(|c| view.widths(&c.key))
        .collect::<Result<_, _>>()?;
    let mut distinct: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut unique: Vec<&Vec<f64>> = Vec::new();
    for w in &widths {
        distinct.entry(w.iter().map(|v| v.to_bits()).collect()).or_insert_with(|| {
            unique.push(w);
            unique.len() - 1
        });
    }
    let fitness: Vec<f64> = unique
        .par_iter()
        .map(|w| match ParamVector::new(w.to_vec()) {
            Ok(p) => oracle.fitness_of(|g| view.simulate_params(&p, g)),
            Err(_) => f64::INFINITY,
        })
        .collect();
    let threshold = oracle.threshold(rel_tol);
    let checked: Vec<CheckedKey> = candidates
        .candidates
        .iter()
        .zip(&widths)
        .map(|(c, w)| {
            let id = distinct[&w.iter().map(|v| v.to_bits()).collect::<Vec<_>>()];
            CheckedKey { key: c.key.clone(), width_residual: c.width_residual, curve_fitness: fitness[id] }
        })
        .collect();
    let mut survivors: Vec<CheckedKey> = checked.iter().filter(|c| c.curve_fitness <= threshold).cloned().collect();
    survivors.sort_by(|a, b| a.curve_fitness.total_cmp(&b.curve_fitness).then_with(|| a.key.cmp(&b.key)));
    if survivors.is_empty() {
        return Err(SmtError::NoMatch);
    }
    Ok(BruteCheck { checked, survivors, simulations: unique.len() })
}

/// Candidate CSV: `key_hex,width_residual,curve_fitness`. The fitness
/// column is empty for candidates that were not simulated.
pub fn write_candidates_csv<W: Write>(
    candidates: &CandidateKeySet,
    checked: Option<&BruteCheck>,
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["key_hex", "width_residual", "curve_fitness"])?;
    for (i, c) in candidates.candidates.iter().enumerate() {
        let f = checked.map(|b| format!("{:.11e}", b.checked[i].curve_fitness)).unwrap_or_default();
        w.write_record([c.key.to_hex(), format!("{:.11e}", c.width_residual), f])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{CircuitModel, Kind};
    use crate::locking::{make_pb_lock, make_smt_lock};

    fn toy() -> SlotConstraint {
        SlotConstraint {
            target: 5.0,
            columns: vec![
                Column { width: 1.0, bits: vec![0, 1] },
                Column { width: 4.0, bits: vec![2] },
                Column { width: 5.0, bits: vec![3, 4] },
            ],
        }
    }

    #[test]
    fn toy_enumeration_counts_off_patterns() {
        let c = LockConstraint { k: 5, slots: vec![toy()] };
        let set = enumerate_keys(&c, 0.0, 100).unwrap();
        // {1, 4} on with column 3 off (3 patterns), or {5} on with 1 off (3) and 4 off (1)
        assert_eq!(set.selections_per_slot, vec![2]);
        assert_eq!(set.len(), 6);
        for cand in &set.candidates {
            let grid_w = c.slots[0]
                .columns
                .iter()
                .filter(|col| col.bits.iter().all(|&b| cand.key.bit(b)))
                .map(|col| col.width)
                .sum::<f64>();
            assert_eq!(grid_w, 5.0);
        }
    }

    #[test]
    fn zero_target_selects_all_off() {
        let mut slot = toy();
        slot.target = 0.0;
        let c = LockConstraint { k: 5, slots: vec![slot] };
        let set = enumerate_keys(&c, DEFAULT_WIDTH_TOL, 100).unwrap();
        assert_eq!(set.len(), 9);
        assert!(set.candidates.iter().all(|c| c.width_residual == 0.0));
    }

    #[test]
    fn overflow_guard() {
        let c = LockConstraint { k: 5, slots: vec![SlotConstraint { target: 0.0, ..toy() }] };
        assert!(matches!(enumerate_keys(&c, 0.0, 8), Err(SmtError::CandidateOverflow { .. })));
    }

    #[test]
    fn targets_need_the_specification() {
        let base = CircuitModel::builtin(Kind::Ota);
        let lock = make_smt_lock(&base, 16, 1).unwrap();
        let oracle = OracleBundle::measure(&lock).unwrap();
        assert!(matches!(derive_targets(lock.view(), None, &oracle.metrics), Err(SmtError::SpecMissing(_))));
        let mut spec = base.spec.clone();
        spec.i_ref = f64::NAN;
        assert!(matches!(derive_targets(lock.view(), Some(&spec), &oracle.metrics), Err(SmtError::SpecMissing(_))));
        let mut spec = base.spec.clone();
        spec.constants.remove("beta");
        assert!(matches!(derive_targets(lock.view(), Some(&spec), &oracle.metrics), Err(SmtError::SpecMissing(_))));
        let t = derive_targets(lock.view(), Some(&base.spec), &oracle.metrics).unwrap();
        assert!((t[0] / base.nominal_params.values()[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn pll_target_is_nominal() {
        let base = CircuitModel::builtin(Kind::Pll);
        let lock = make_pb_lock(&base, 16, 4).unwrap();
        let oracle = OracleBundle::measure(&lock).unwrap();
        let t = derive_targets(lock.view(), Some(&base.spec), &oracle.metrics).unwrap();
        assert!((t[0] / base.nominal_params.values()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn smtlib_export_declares_every_bit() {
        let base = CircuitModel::builtin(Kind::Twg);
        let lock = make_smt_lock(&base, 16, 2).unwrap();
        let c = LockConstraint::new(lock.view(), base.nominal_params.values()).unwrap();
        let text = c.to_smtlib(DEFAULT_WIDTH_TOL);
        assert_eq!(text.matches("declare-const").count(), 16);
        assert_eq!(text.matches("(assert").count(), 2);
        assert_eq!(text.matches('(').count(), text.matches(')').count());
    }
}
