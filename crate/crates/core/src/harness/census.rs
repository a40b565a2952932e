use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{HarnessError, OracleBundle};
use crate::circuit::ParamVector;
use crate::locking::{Key, LockedView};

/// One distinct effective-width vector reached by the census.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusBin {
    pub widths: Vec<f64>,
    pub metric: Option<f64>,
    pub relative_distance: f64,
    pub keys: u64,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Census {
    pub exhaustive: bool,
    /// Keys examined (all `2^k`, or the sample size).
    pub examined: u64,
    /// Examined keys within tolerance of the oracle.
    pub count: u64,
    /// The matching keys, ascending.
    pub keys: Vec<Key>,
    pub metric_name: String,
    pub bins: Vec<CensusBin>,
}

impl Census {
    pub fn contains(&self, key: &Key) -> bool {
        self.keys.binary_search(key).is_ok()
    }
}

/// Per grid, `(column width, key-bit mask)` in column order.
fn column_masks(view: &LockedView) -> Vec<Vec<(f64, u64)>> {
    view.grids()
        .iter()
        .map(|g| {
            (0..g.n)
                .map(|i| (g.col_widths[i], g.column_bits(i).iter().fold(0u64, |m, b| m | 1 << b)))
                .collect()
        })
        .collect()
}

/// Same summation as the lock equation, on an integer key.
fn widths_of(masks: &[Vec<(f64, u64)>], key: u64) -> Vec<f64> {
    masks
        .iter()
        .map(|cols| cols.iter().fold(0.0, |acc, &(w, m)| acc + w * if key & m == m { 1.0 } else { 0.0 }))
        .collect()
}

fn width_bits(w: &[f64]) -> Vec<u64> {
    w.iter().map(|v| v.to_bits()).collect()
}

fn judge(view: &LockedView, oracle: &OracleBundle, widths: &[f64], threshold: f64) -> (f64, bool, Option<f64>) {
    let Ok(params) = ParamVector::new(widths.to_vec()) else {
        return (f64::INFINITY, f64::INFINITY <= threshold, None);
    };
    let f = oracle.fitness_of(|g| view.simulate_params(&params, g));
    let metric = view.primary_metric(&params).ok().map(|m| m.1);
    (oracle.relative_distance(f), f <= threshold, metric)
}

fn metric_name(view: &LockedView) -> String {
    let w: Vec<f64> = view.grids().iter().map(|g| g.total_width()).collect();
    ParamVector::new(w)
        .ok()
        .and_then(|p| view.primary_metric(&p).ok())
        .map_or("metric", |m| m.0)
        .to_string()
}

/// Count the keys whose response lies within `rel_tol` of the oracle, over
/// all `2^k` keys. Fails with `CapExceeded` beyond `2^cap_bits` keys.
pub fn key_census(view: &LockedView, oracle: &OracleBundle, rel_tol: f64, cap_bits: u32) -> Result<Census, HarnessError> {
    let k = view.k();
    if k > cap_bits as usize || k >= 64 {
        return Err(HarnessError::CapExceeded { k, cap_bits });
    }
    let masks = column_masks(view);
    let total = 1u64 << k;
    let mut groups: HashMap<Vec<u64>, u64> = (0..total)
        .into_par_iter()
        .fold(HashMap::new, |mut m: HashMap<Vec<u64>, u64>, i| {
            *m.entry(width_bits(&widths_of(&masks, i))).or_default() += 1;
            m
        })
        .reduce(HashMap::new, |mut a, b| {
            for (w, c) in b {
                *a.entry(w).or_default() += c;
            }
            a
        });
    let threshold = oracle.threshold(rel_tol);
    let bins = judge_groups(view, oracle, &mut groups, threshold);
    let matching: HashMap<Vec<u64>, bool> =
        bins.iter().map(|b| (width_bits(&b.widths), b.matches)).collect();
    let keys: Vec<Key> = (0..total)
        .into_par_iter()
        .filter(|&i| matching[&width_bits(&widths_of(&masks, i))])
        .map(|i| Key::from_index(i, k))
        .collect();
    Ok(Census {
        exhaustive: true,
        examined: total,
        count: keys.len() as u64,
        keys,
        metric_name: metric_name(view),
        bins,
    })
}

fn judge_groups(view: &LockedView, oracle: &OracleBundle, groups: &mut HashMap<Vec<u64>, u64>, threshold: f64) -> Vec<CensusBin> {
    let ordered: BTreeMap<Vec<u64>, u64> = groups.drain().collect();
    let ordered: Vec<(Vec<u64>, u64)> = ordered.into_iter().collect();
    ordered
        .par_iter()
        .map(|(bits, count)| {
            let widths: Vec<f64> = bits.iter().map(|b| f64::from_bits(*b)).collect();
            let (rel, matches, metric) = judge(view, oracle, &widths, threshold);
            CensusBin { widths, metric, relative_distance: rel, keys: *count, matches }
        })
        .collect()
}

/// Census over `samples` uniformly drawn keys (any `k`).
pub fn sampled_census(
    view: &LockedView,
    oracle: &OracleBundle,
    rel_tol: f64,
    samples: usize,
    seed: u64,
) -> Result<Census, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn: Vec<Key> = (0..samples).map(|_| Key::random(view.k(), &mut rng)).collect();
    let widths: Vec<Vec<f64>> = drawn.par_iter().map(|key| view.widths(key)).collect::<Result<_, _>>()?;
    let mut groups: HashMap<Vec<u64>, u64> = HashMap::new();
    for w in &widths {
        *groups.entry(width_bits(w)).or_default() += 1;
    }
    let bins = judge_groups(view, oracle, &mut groups, oracle.threshold(rel_tol));
    let matching: HashMap<Vec<u64>, bool> =
        bins.iter().map(|b| (width_bits(&b.widths), b.matches)).collect();
    let mut keys: Vec<Key> = drawn
        .into_iter()
        .zip(&widths)
        .filter(|(_, w)| matching[&width_bits(w)])
        .map(|(k, _)| k)
        .collect();
    let count = keys.len() as u64;
    keys.sort();
    keys.dedup();
    Ok(Census { exhaustive: false, examined: samples as u64, count, keys, metric_name: metric_name(view), bins })
}

/// Histogram CSV: `w_0..w_{s-1},<metric>,relative_distance,keys,match`.
pub fn write_census_csv<W: Write>(census: &Census, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let slots = census.bins.first().map_or(0, |b| b.widths.len());
    let mut header: Vec<String> = (0..slots).map(|i| format!("w_{i}")).collect();
    header.extend([census.metric_name.clone(), "relative_distance".into(), "keys".into(), "match".into()]);
    w.write_record(&header)?;
    for b in &census.bins {
        let mut row: Vec<String> = b.widths.iter().map(|v| format!("{v:.11e}")).collect();
        row.push(b.metric.map(|m| format!("{m:.11e}")).unwrap_or_default());
        row.push(format!("{:.11e}", b.relative_distance));
        row.push(b.keys.to_string());
        row.push(b.matches.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{CircuitModel, Kind};
    use crate::locking::{make_pb_lock, make_smt_lock};

    #[test]
    fn infinite_tolerance_counts_every_key() {
        let lock = make_pb_lock(&CircuitModel::builtin(Kind::Ota), 8, 3).unwrap();
        let oracle = OracleBundle::measure(&lock).unwrap();
        let c = key_census(lock.view(), &oracle, f64::INFINITY, 24).unwrap();
        assert_eq!(c.count, 256);
        assert_eq!(c.bins.iter().map(|b| b.keys).sum::<u64>(), 256);
        assert!(c.keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn smt_census_is_the_locking_key() {
        let lock = make_smt_lock(&CircuitModel::builtin(Kind::Ota), 12, 5).unwrap();
        let oracle = OracleBundle::measure(&lock).unwrap();
        let c = key_census(lock.view(), &oracle, 1e-6, 24).unwrap();
        assert_eq!(c.keys, vec![lock.locking_key().clone()]);
        assert!(c.contains(lock.locking_key()));
    }

    #[test]
    fn pb_census_holds_the_locking_key() {
        let lock = make_pb_lock(&CircuitModel::builtin(Kind::Ota), 12, 5).unwrap();
        let oracle = OracleBundle::measure(&lock).unwrap();
        let c = key_census(lock.view(), &oracle, 1e-6, 24).unwrap();
        assert!(c.count >= 2);
        assert!(c.contains(lock.locking_key()));
    }

    #[test]
    fn cap_is_enforced() {
        let lock = make_smt_lock(&CircuitModel::builtin(Kind::Ota), 16, 5).unwrap();
        let oracle = OracleBundle::measure(&lock).unwrap();
        assert!(matches!(key_census(lock.view(), &oracle, 1e-6, 12), Err(HarnessError::CapExceeded { k: 16, .. })));
        let s = sampled_census(lock.view(), &oracle, 1e-6, 1000, 1).unwrap();
        assert_eq!(s.examined, 1000);
        assert!(!s.exhaustive);
    }
}
