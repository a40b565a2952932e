//! Experiment orchestration. The oracle side measures the unlocked
//! circuit into an [`OracleBundle`]; attacks see only that bundle and the
//! keyless [`LockedView`](crate::locking::LockedView).

mod attack;
mod census;
mod compare;
mod results;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{self, CircuitError, Kind, ResponseCurve, SamplingGrid};
use crate::ga::{GaConfig, GaError, HaltReason};
use crate::locking::{LockError, LockedNetlist, Scheme};
use crate::smt::SmtError;

pub use attack::{
    run_case1, run_case1_attack, run_case1_from, run_case2_ga, run_enumeration, run_receiver_attack, two_pass, AttackRun,
    Case1Result, EnumerationRun,
};
pub use census::{key_census, sampled_census, write_census_csv, Census, CensusBin};
pub use compare::{compare_attacks, write_comparison_csv, write_scaling_csv, ComparisonRow, Comparison, ScalingRow};
pub use results::{results_dir, write_run};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Lock(#[from] LockError),
    #[error(transparent)]
    Ga(#[from] GaError),
    #[error(transparent)]
    Smt(#[from] SmtError),
    #[error("2^{k} keys exceed the census cap of 2^{cap_bits}")]
    CapExceeded { k: usize, cap_bits: u32 },
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// What the attacker measures on the unlocked chip: the output curves on
/// their sampling grids and the scalar characterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBundle {
    pub benchmark: Kind,
    pub curves: BTreeMap<String, ResponseCurve>,
    pub grids: BTreeMap<String, SamplingGrid>,
    pub metrics: BTreeMap<String, f64>,
}

impl OracleBundle {
    /// Simulate the locked netlist under its locking key.
    pub fn measure(locked: &LockedNetlist) -> Result<Self, HarnessError> {
        let params = locked.unlocked_params()?;
        let base = locked.base();
        let mut curves = BTreeMap::new();
        let mut grids = BTreeMap::new();
        for name in base.kind.observables() {
            let grid = base.grid(name)?.clone();
            curves.insert(name.to_string(), circuit::simulate(base, &params, &grid)?);
            grids.insert(name.to_string(), grid);
        }
        let metrics = circuit::characterize(base, &params)?;
        Ok(OracleBundle { benchmark: base.kind, curves, grids, metrics })
    }

    /// Sum of squared oracle samples over every curve.
    pub fn energy(&self) -> f64 {
        self.curves.values().flat_map(|c| c.y.iter()).map(|y| y * y).sum()
    }

    /// Absolute fitness matching a relative L2 distance of `rel`.
    pub fn threshold(&self, rel: f64) -> f64 {
        if rel.is_infinite() {
            return f64::INFINITY;
        }
        rel * rel * self.energy()
    }

    pub fn relative_distance(&self, fitness: f64) -> f64 {
        (fitness / self.energy()).sqrt()
    }

    /// Squared residuals of `simulate` against every oracle curve; failed
    /// simulations score `+inf`.
    pub fn fitness_of(
        &self,
        simulate: impl Fn(&SamplingGrid) -> Result<ResponseCurve, CircuitError>,
    ) -> f64 {
        let mut total = 0.0;
        for (name, curve) in &self.curves {
            match simulate(&self.grids[name]) {
                Ok(c) if c.y.len() == curve.y.len() => {
                    total += c.y.iter().zip(&curve.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                }
                _ => return f64::INFINITY,
            }
        }
        if total.is_nan() { f64::INFINITY } else { total }
    }
}

/// Attack settings. Tolerances are relative L2 distances between
/// simulated and oracle curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub ga: GaConfig,
    /// A key matches the oracle within this distance.
    pub match_tolerance: f64,
    /// Stopping distance for real-encoded parameter recovery; `None` picks
    /// a per-benchmark default.
    pub case1_tolerance: Option<f64>,
    /// Stopping distance for the receiver key search, whose other slots
    /// carry first-pass estimates.
    pub receiver_tolerance: f64,
    /// Key searches also steer by the oracle's scalar characterization.
    pub metric_guides: bool,
    /// Relative metric deviation that weighs as much as a curve at the
    /// match tolerance. Below `match_tolerance` so the metrics lead.
    pub metric_tolerance: f64,
    /// Same weighting for the relative deviation from a width hint.
    pub hint_tolerance: f64,
    /// Relative width tolerance of the enumerator.
    pub width_tolerance: f64,
    pub candidate_cap: usize,
    /// Census exhausts at most `2^census_cap_bits` keys, else samples.
    pub census_cap_bits: u32,
    pub census_samples: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            ga: GaConfig::default(),
            match_tolerance: 1e-6,
            case1_tolerance: None,
            receiver_tolerance: 1e-3,
            metric_guides: true,
            metric_tolerance: 1e-7,
            hint_tolerance: 1e-7,
            width_tolerance: crate::smt::DEFAULT_WIDTH_TOL,
            candidate_cap: crate::smt::DEFAULT_CANDIDATE_CAP,
            census_cap_bits: 24,
            census_samples: 500_000,
        }
    }
}

impl AttackConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        AttackConfig { ga: GaConfig { seed, ..self.ga.clone() }, ..self.clone() }
    }

    pub fn case1_tolerance_for(&self, kind: Kind) -> f64 {
        self.case1_tolerance.unwrap_or_else(|| default_case1_tolerance(kind))
    }
}

/// Curve distance at which real-encoded widths sit within about 0.05% of
/// the truth. Scales with how weakly the least sensitive mirror moves the
/// response.
pub fn default_case1_tolerance(kind: Kind) -> f64 {
    match kind {
        Kind::Ota => 7e-5,
        Kind::Bpf => 2.5e-6,
        Kind::Pll => 3.5e-5,
        Kind::Twg => 1.3e-4,
        Kind::Receiver => 3e-4,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Case1,
    Case2Ga,
    TwoPass,
    Receiver,
    Enumerate,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Case1 => "case1",
            AttackKind::Case2Ga => "ga",
            AttackKind::TwoPass => "two_pass",
            AttackKind::Receiver => "receiver",
            AttackKind::Enumerate => "enum",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Success,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassSummary {
    pub generations: usize,
    pub wall_time_s: f64,
    pub params: Vec<f64>,
    pub relative_distance: f64,
    pub halt_reason: HaltReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub benchmark: Kind,
    pub scheme: Scheme,
    pub k: usize,
    pub attack: AttackKind,
    pub seed: u64,
    pub status: Status,
    pub halt_reason: Option<HaltReason>,
    /// Number of keys the attack returns.
    pub k_prime: usize,
    /// Hex of the recovered key (or key block).
    pub recovered_key: Option<String>,
    /// Key bits covered by `recovered_key`, when only a block is attacked.
    pub key_block: Option<(usize, usize)>,
    pub recovered_params: Option<Vec<f64>>,
    pub generations: usize,
    pub evaluations: usize,
    pub wall_time_s: f64,
    /// Fitness of the recovered artifact, re-simulated.
    pub final_fitness: f64,
    pub relative_distance: f64,
    pub pass1: Option<PassSummary>,
}
