use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{run_case2_ga, AttackConfig, HarnessError, OracleBundle, Status};
use crate::circuit::{CircuitModel, Kind};
use crate::locking::{equal_partition, make_lock, Scheme};
use crate::smt::{self, LockConstraint, SmtError};

/// One row of the attack comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub bench: Kind,
    pub scheme: Scheme,
    pub k: usize,
    pub attack: String,
    /// Keys returned by the attack.
    pub k_prime: u64,
    /// Median over seeds for the GA; enumeration plus checking for the
    /// enumerator.
    pub t_s: f64,
    /// Whether the returned keys include the locking key.
    pub contains_locking_key: bool,
}

/// One GA run of the scaling series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub bench: Kind,
    pub scheme: Scheme,
    pub k: usize,
    pub seed: u64,
    pub generations: usize,
    pub t_s: f64,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub scaling: Vec<ScalingRow>,
}

impl Comparison {
    /// Median GA generations per key length, in key-length order.
    pub fn median_generations(&self) -> Vec<(usize, f64)> {
        let mut ks: Vec<usize> = self.scaling.iter().map(|r| r.k).collect();
        ks.dedup();
        ks.into_iter()
            .map(|k| {
                let g: Vec<f64> = self.scaling.iter().filter(|r| r.k == k).map(|r| r.generations as f64).collect();
                (k, median(&g))
            })
            .collect()
    }
}

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// GA versus enumerator on `bench` locked with `scheme` for each key
/// length. The lock for key length `k` is generated from `lock_seed + k`;
/// the GA runs once per seed. The enumerator is given the circuit
/// specification of the committed model.
pub fn compare_attacks(
    bench: Kind,
    scheme: Scheme,
    ks: &[usize],
    seeds: &[u64],
    lock_seed: u64,
    config: &AttackConfig,
) -> Result<Comparison, HarnessError> {
    let base = CircuitModel::builtin(bench);
    let mut rows = Vec::new();
    let mut scaling = Vec::new();
    for &k in ks {
        let lock = make_lock(&base, scheme, &equal_partition(k, bench.param_count()), lock_seed + k as u64)?;
        let oracle = OracleBundle::measure(&lock)?;

        let mut times = Vec::new();
        let mut all_found = true;
        for &seed in seeds {
            let run = run_case2_ga(lock.view(), &oracle, &config.with_seed(seed), None)?;
            let r = run.report;
            times.push(r.wall_time_s);
            all_found &= r.status == Status::Success;
            scaling.push(ScalingRow { bench, scheme, k, seed, generations: r.generations, t_s: r.wall_time_s, status: r.status });
        }
        rows.push(ComparisonRow {
            bench,
            scheme,
            k,
            attack: "ga".into(),
            k_prime: 1,
            t_s: median(&times),
            contains_locking_key: all_found && scheme == Scheme::Smt,
        });

        let started = Instant::now();
        let targets = smt::derive_targets(lock.view(), Some(&base.spec), &oracle.metrics)?;
        let constraint = LockConstraint::new(lock.view(), &targets)?;
        let (k_prime, contains) = match smt::enumerate_keys(&constraint, config.width_tolerance, config.candidate_cap) {
            Ok(set) => {
                let contains = set.contains(lock.locking_key());
                // the brute check may legitimately find nothing when the
                // width tolerance is tight; K' counts what the solver returns
                match smt::brute_check(&set, lock.view(), &oracle, config.match_tolerance) {
                    Ok(_) | Err(SmtError::NoMatch) => {}
                    Err(e) => return Err(e.into()),
                }
                (set.len() as u64, contains)
            }
            Err(SmtError::CandidateOverflow { count, .. }) => (count as u64, true),
            Err(e) => return Err(e.into()),
        };
        rows.push(ComparisonRow {
            bench,
            scheme,
            k,
            attack: "enum".into(),
            k_prime,
            t_s: started.elapsed().as_secs_f64(),
            contains_locking_key: contains,
        });
    }
    Ok(Comparison { rows, scaling })
}

/// `bench,scheme,k,attack,Kprime,t_s`
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bench", "scheme", "k", "attack", "Kprime", "t_s"])?;
    for r in rows {
        w.write_record([
            r.bench.name().to_string(),
            r.scheme.name().to_string(),
            r.k.to_string(),
            r.attack.clone(),
            r.k_prime.to_string(),
            format!("{:.6}", r.t_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `bench,scheme,k,seed,generations,t_s,status`
pub fn write_scaling_csv<W: Write>(rows: &[ScalingRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bench", "scheme", "k", "seed", "generations", "t_s", "status"])?;
    for r in rows {
        w.write_record([
            r.bench.name().to_string(),
            r.scheme.name().to_string(),
            r.k.to_string(),
            r.seed.to_string(),
            r.generations.to_string(),
            format!("{:.6}", r.t_s),
            format!("{:?}", r.status).to_lowercase(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
