//! Key-gated transistor grids.
//!
//! A locked bias mirror is an `m x n` grid. Column `i` has width `W'_i`;
//! row 0 holds the sized transistor and rows `1..m` hold series
//! transistors gated by key bits. A column conducts only when every
//! present gate in it sees a 1, so the effective width is
//!
//! ```text
//! W(q) = sum_i W'_i * prod_{j >= 1} q'_ij      (absent position -> 1)
//! ```
//!
//! Multi-slot circuits get one grid per locked mirror; each grid owns a
//! contiguous block of the key.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{self, CircuitError, CircuitModel, Kind, ParamVector, ResponseCurve, SamplingGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LockError {
    #[error("key has {got} bits, lock needs {expected}")]
    KeyLengthMismatch { expected: usize, got: usize },
    #[error("lock generation failed: {0}")]
    GenerationFailure(String),
    #[error("invalid lock grid: {0}")]
    InvalidGrid(String),
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

/// A key bitvector. Bit `i` is bit `i` (LSB first) of the hex integer.
/// Keys order by length, then by integer value.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Key(Vec<bool>);

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.iter().rev().cmp(other.0.iter().rev()))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Key {
    pub fn new(bits: Vec<bool>) -> Self {
        Key(bits)
    }

    pub fn zeros(k: usize) -> Self {
        Key(vec![false; k])
    }

    pub fn ones(k: usize) -> Self {
        Key(vec![true; k])
    }

    /// The `k`-bit key whose integer value is `index` (k <= 64).
    pub fn from_index(index: u64, k: usize) -> Self {
        Key((0..k).map(|i| i < 64 && (index >> i) & 1 == 1).collect())
    }

    pub fn random<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        Key((0..k).map(|_| rng.gen()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bit(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    /// Bits `start..start + len` as a key of their own.
    pub fn block(&self, start: usize, len: usize) -> Key {
        Key(self.0[start..start + len].to_vec())
    }

    pub fn to_hex(&self) -> String {
        let digits = self.0.len().div_ceil(4).max(1);
        (0..digits)
            .rev()
            .map(|d| {
                let nibble = (0..4)
                    .filter(|b| self.0.get(4 * d + b).copied().unwrap_or(false))
                    .fold(0u32, |acc, b| acc | 1 << b);
                char::from_digit(nibble, 16).unwrap()
            })
            .collect()
    }

    pub fn from_hex(hex: &str, k: usize) -> Result<Key, LockError> {
        let hex = hex.trim().trim_start_matches("0x");
        let mut bits = vec![false; k];
        for (d, c) in hex.chars().rev().enumerate() {
            let nibble = c
                .to_digit(16)
                .ok_or_else(|| LockError::InvalidKey(format!("`{c}` is not a hex digit")))?;
            for b in 0..4 {
                if nibble >> b & 1 == 1 {
                    let i = 4 * d + b;
                    if i >= k {
                        return Err(LockError::InvalidKey(format!("hex value exceeds {k} bits")));
                    }
                    bits[i] = true;
                }
            }
        }
        Ok(Key(bits))
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Key({}b:{})", self.0.len(), self.to_hex())
    }
}

#[derive(Serialize, Deserialize)]
struct KeyWire {
    k: usize,
    hex: String,
}

impl Serialize for Key {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        KeyWire { k: self.len(), hex: self.to_hex() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Key {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = KeyWire::deserialize(d)?;
        Key::from_hex(&w.hex, w.k).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Smt,
    Pb,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Smt => "smt",
            Scheme::Pb => "pb",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "smt" | "smt-lock" => Ok(Scheme::Smt),
            "pb" | "pb-lock" => Ok(Scheme::Pb),
            _ => Err(format!("unknown scheme `{s}` (expected smt or pb)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockGrid {
    pub m: usize,
    pub n: usize,
    pub col_widths: Vec<f64>,
    /// `placement[row][col]`
    pub placement: Vec<Vec<bool>>,
    /// `key_map[row][col]`: key-bit index gating that position.
    pub key_map: Vec<Vec<Option<usize>>>,
}

impl LockGrid {
    pub fn validate(&self) -> Result<(), LockError> {
        let bad = |msg: String| Err(LockError::InvalidGrid(msg));
        if self.m < 1 || self.n < 1 {
            return bad(format!("{} x {} grid", self.m, self.n));
        }
        if self.col_widths.len() != self.n
            || self.placement.len() != self.m
            || self.key_map.len() != self.m
            || self.placement.iter().any(|r| r.len() != self.n)
            || self.key_map.iter().any(|r| r.len() != self.n)
        {
            return bad("shape does not match m x n".into());
        }
        if let Some(w) = self.col_widths.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return bad(format!("column width {w}"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for j in 0..self.m {
            for i in 0..self.n {
                match (j, self.placement[j][i], self.key_map[j][i]) {
                    (0, false, _) => return bad(format!("column {i} has no sized transistor")),
                    (0, true, Some(_)) => return bad("row 0 carries no key bit".into()),
                    (_, true, None) if j > 0 => return bad(format!("position ({j}, {i}) has no key bit")),
                    (_, false, Some(_)) => return bad(format!("absent position ({j}, {i}) has a key bit")),
                    (_, _, Some(b)) if !seen.insert(b) => return bad(format!("key bit {b} used twice")),
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Key-bit indices gating column `i`.
    pub fn column_bits(&self, i: usize) -> Vec<usize> {
        (1..self.m).filter_map(|j| self.key_map[j][i]).collect()
    }

    /// All key-bit indices used by this grid, ascending.
    pub fn key_bits(&self) -> Vec<usize> {
        let mut bits: Vec<usize> = (0..self.n).flat_map(|i| self.column_bits(i)).collect();
        bits.sort_unstable();
        bits
    }

    pub fn max_bit(&self) -> Option<usize> {
        self.key_map.iter().flatten().flatten().copied().max()
    }

    /// Sum of all column widths, the width with every column conducting.
    pub fn total_width(&self) -> f64 {
        self.col_widths.iter().sum()
    }

    /// Width at which the column states encoded by `on` put the grid.
    pub(crate) fn width_of_states(&self, on: impl Fn(usize) -> bool) -> f64 {
        (0..self.n).fold(0.0, |acc, i| acc + self.col_widths[i] * if on(i) { 1.0 } else { 0.0 })
    }
}

pub fn effective_width(grid: &LockGrid, key: &Key) -> Result<f64, LockError> {
    if let Some(b) = grid.max_bit() {
        if b >= key.len() {
            return Err(LockError::KeyLengthMismatch { expected: b + 1, got: key.len() });
        }
    }
    Ok(grid.width_of_states(|i| {
        (1..grid.m).all(|j| !grid.placement[j][i] || grid.key_map[j][i].is_some_and(|b| key.bit(b)))
    }))
}

/// The attack-facing description of a locked circuit: everything except
/// the locking key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ViewWire", into = "ViewWire")]
pub struct LockedView {
    scheme: Scheme,
    k: usize,
    grids: Vec<LockGrid>,
    base: CircuitModel,
}

#[derive(Serialize, Deserialize)]
struct ViewWire {
    scheme: Scheme,
    k: usize,
    grids: Vec<LockGrid>,
    base_ref: Kind,
}

impl From<LockedView> for ViewWire {
    fn from(v: LockedView) -> Self {
        ViewWire { scheme: v.scheme, k: v.k, grids: v.grids, base_ref: v.base.kind }
    }
}

impl TryFrom<ViewWire> for LockedView {
    type Error = LockError;

    fn try_from(w: ViewWire) -> Result<Self, LockError> {
        LockedView::new(w.scheme, w.k, w.grids, CircuitModel::builtin(w.base_ref))
    }
}

impl LockedView {
    pub fn new(scheme: Scheme, k: usize, grids: Vec<LockGrid>, base: CircuitModel) -> Result<Self, LockError> {
        if grids.len() != base.kind.param_count() {
            return Err(LockError::InvalidGrid(format!(
                "{} grids for {} locked slots",
                grids.len(),
                base.kind.param_count()
            )));
        }
        let mut used = Vec::new();
        for g in &grids {
            g.validate()?;
            used.extend(g.key_bits());
        }
        used.sort_unstable();
        if used != (0..k).collect::<Vec<_>>() {
            return Err(LockError::InvalidGrid(format!("grids do not partition the {k} key bits")));
        }
        Ok(LockedView { scheme, k, grids, base })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn kind(&self) -> Kind {
        self.base.kind
    }

    pub fn grids(&self) -> &[LockGrid] {
        &self.grids
    }

    pub fn sampling_grid(&self, name: &str) -> Result<&SamplingGrid, CircuitError> {
        self.base.grid(name)
    }

    pub fn widths(&self, key: &Key) -> Result<Vec<f64>, LockError> {
        if key.len() != self.k {
            return Err(LockError::KeyLengthMismatch { expected: self.k, got: key.len() });
        }
        self.grids.iter().map(|g| effective_width(g, key)).collect()
    }

    pub fn params(&self, key: &Key) -> Result<ParamVector, LockError> {
        Ok(ParamVector::new(self.widths(key)?)?)
    }

    /// Scalar characterization at the given widths (see
    /// [`circuit::primary_metric`]).
    pub fn primary_metric(&self, params: &ParamVector) -> Result<(&'static str, f64), CircuitError> {
        circuit::primary_metric(&self.base, params)
    }

    pub fn characterize(&self, params: &ParamVector) -> Result<std::collections::BTreeMap<String, f64>, CircuitError> {
        circuit::characterize(&self.base, params)
    }

    /// Simulate the locked circuit with its grids replaced by single
    /// transistors of the given widths.
    pub fn simulate_params(&self, params: &ParamVector, grid: &SamplingGrid) -> Result<ResponseCurve, CircuitError> {
        circuit::simulate(&self.base, params, grid)
    }
}

pub fn locked_simulate(view: &LockedView, key: &Key, grid: &SamplingGrid) -> Result<ResponseCurve, LockError> {
    Ok(view.simulate_params(&view.params(key)?, grid)?)
}

/// Oracle-side lock: the view plus the locking key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockedNetlist {
    #[serde(flatten)]
    view: LockedView,
    locking_key: Key,
}

impl LockedNetlist {
    pub fn new(view: LockedView, locking_key: Key) -> Result<Self, LockError> {
        if locking_key.len() != view.k {
            return Err(LockError::KeyLengthMismatch { expected: view.k, got: locking_key.len() });
        }
        Ok(LockedNetlist { view, locking_key })
    }

    pub fn view(&self) -> &LockedView {
        &self.view
    }

    pub fn locking_key(&self) -> &Key {
        &self.locking_key
    }

    pub fn base(&self) -> &CircuitModel {
        &self.view.base
    }

    pub fn unlocked_params(&self) -> Result<ParamVector, LockError> {
        self.view.params(&self.locking_key)
    }
}

/// `k` bits split into `slots` contiguous blocks, the remainder going to
/// the last block.
pub fn equal_partition(k: usize, slots: usize) -> Vec<usize> {
    let base = k / slots;
    let mut blocks = vec![base; slots];
    blocks[slots - 1] += k - base * slots;
    blocks
}

/// Receiver partition: a fixed 40-bit block for the PLL slot and the rest
/// split evenly over the remaining slots.
pub const RECEIVER_PLL_BITS: usize = 40;

pub fn receiver_partition(k: usize) -> Vec<usize> {
    let rest = Kind::Receiver.param_count() - 1;
    let mut blocks = vec![RECEIVER_PLL_BITS];
    blocks.extend(equal_partition(k.saturating_sub(RECEIVER_PLL_BITS), rest));
    blocks
}

pub fn make_smt_lock(base: &CircuitModel, k: usize, seed: u64) -> Result<LockedNetlist, LockError> {
    make_lock(base, Scheme::Smt, &equal_partition(k, base.kind.param_count()), seed)
}

pub fn make_pb_lock(base: &CircuitModel, k: usize, seed: u64) -> Result<LockedNetlist, LockError> {
    make_lock(base, Scheme::Pb, &equal_partition(k, base.kind.param_count()), seed)
}

const MAX_RETRIES: usize = 100;
const GRID_ROWS: usize = 3;

/// SMT-Lock decoy columns are at least this much wider than the target.
const DECOY_MIN: f64 = 2.0;
const DECOY_MAX: f64 = 4.0;
/// Relative width gap every wrong key must leave, checked exhaustively on
/// small slots.
pub const SMT_SEPARATION: f64 = 5e-3;
const EXHAUSTIVE_SLOT_BITS: usize = 20;

/// Lock every slot of `base` with the given key partition.
pub fn make_lock(base: &CircuitModel, scheme: Scheme, partition: &[usize], seed: u64) -> Result<LockedNetlist, LockError> {
    let slots = base.kind.param_count();
    if partition.len() != slots || partition.contains(&0) {
        return Err(LockError::GenerationFailure(format!(
            "key partition {partition:?} does not give each of the {slots} slots at least one bit"
        )));
    }
    let k: usize = partition.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grids = Vec::with_capacity(slots);
    let mut key = vec![false; k];
    let mut start = 0;
    for (&bits, &target) in partition.iter().zip(base.nominal_params.values()) {
        let block: Vec<usize> = (start..start + bits).collect();
        let (grid, slot_key) = (0..MAX_RETRIES)
            .find_map(|_| match scheme {
                Scheme::Smt => smt_slot(&block, target, &mut rng),
                Scheme::Pb => pb_slot(&block, target, &mut rng),
            })
            .ok_or_else(|| {
                LockError::GenerationFailure(format!("no valid {scheme} grid for a {bits}-bit slot"))
            })?;
        for (b, v) in block.iter().zip(slot_key) {
            key[*b] = v;
        }
        grids.push(grid);
        start += bits;
    }
    let view = LockedView::new(scheme, k, grids, base.clone())?;
    let netlist = LockedNetlist::new(view, Key::new(key))?;
    debug_assert_eq!(netlist.unlocked_params()?.values(), base.nominal_params.values());
    Ok(netlist)
}

/// Lay out columns of key bits on an m = 3 grid. `columns[i]` lists the
/// bits gating column `i`; the bit indices are shuffled onto positions.
fn layout(block: &[usize], sizes: &[usize], widths: Vec<f64>, rng: &mut ChaCha8Rng) -> (LockGrid, Vec<Vec<usize>>) {
    let mut bits = block.to_vec();
    bits.shuffle(rng);
    let n = sizes.len();
    let mut placement = vec![vec![false; n]; GRID_ROWS];
    let mut key_map = vec![vec![None; n]; GRID_ROWS];
    let mut columns = Vec::with_capacity(n);
    let mut next = bits.into_iter();
    for (i, &size) in sizes.iter().enumerate() {
        placement[0][i] = true;
        let mut col = Vec::new();
        for row in 1..=size {
            let b = next.next().expect("column sizes sum to the block length");
            placement[row][i] = true;
            key_map[row][i] = Some(b);
            col.push(b);
        }
        columns.push(col);
    }
    (LockGrid { m: GRID_ROWS, n, col_widths: widths, placement, key_map }, columns)
}

/// Bit values (in block order) that turn on exactly the columns in `on`.
fn block_key(block: &[usize], columns: &[Vec<usize>], on: &[bool]) -> Vec<bool> {
    let mut value = vec![false; block.len()];
    for (col, &state) in columns.iter().zip(on) {
        for b in col {
            value[b - block[0]] = state;
        }
    }
    value
}

/// Adjust `x` by a few ulps until `f(x) == target` exactly.
fn nudge_exact(x: f64, target: f64, f: impl Fn(f64) -> f64) -> Option<f64> {
    let mut candidates = vec![x];
    let (mut up, mut down) = (x, x);
    for _ in 0..64 {
        up = up.next_up();
        down = down.next_down();
        candidates.push(up);
        candidates.push(down);
    }
    candidates.into_iter().find(|&c| c > 0.0 && f(c) == target)
}

/// One SMT-Lock slot: single-bit decoy columns wider than the target that
/// must stay off, and 1- or 2-bit columns that must all conduct and whose
/// widths add up to the target.
fn smt_slot(block: &[usize], target: f64, rng: &mut ChaCha8Rng) -> Option<(LockGrid, Vec<bool>)> {
    let kb = block.len();
    let decoys = kb / 3;
    let on_bits = kb - decoys;
    let on_cols = on_bits.div_ceil(2);
    let mut sizes: Vec<usize> = vec![2; on_bits / 2];
    if on_bits % 2 == 1 {
        sizes.push(1);
    }
    let shares: Vec<f64> = (0..on_cols).map(|_| rng.gen_range(1.0..4.0)).collect();
    let total: f64 = shares.iter().sum();
    let mut cols: Vec<(usize, f64, bool)> = sizes
        .iter()
        .zip(&shares)
        .map(|(&s, &u)| (s, target * u / total, true))
        .chain((0..decoys).map(|_| (1, target * rng.gen_range(DECOY_MIN..DECOY_MAX), false)))
        .collect();
    cols.shuffle(rng);

    let last_on = cols.iter().rposition(|c| c.2)?;
    let partial = cols[..last_on]
        .iter()
        .fold(0.0, |acc, c| acc + c.1 * if c.2 { 1.0 } else { 0.0 });
    cols[last_on].1 = nudge_exact(target - partial, target, |x| partial + x)?;

    let sizes: Vec<usize> = cols.iter().map(|c| c.0).collect();
    let widths: Vec<f64> = cols.iter().map(|c| c.1).collect();
    let on: Vec<bool> = cols.iter().map(|c| c.2).collect();
    let (grid, columns) = layout(block, &sizes, widths, rng);
    let key = block_key(block, &columns, &on);
    smt_slot_is_unique(&grid, block, &key, target).then_some((grid, key))
}

/// Every other bit pattern of the slot must miss the target by at least
/// [`SMT_SEPARATION`]. Checked by exhaustion on small slots; on larger
/// ones the construction guarantees it once the width bounds hold.
fn smt_slot_is_unique(grid: &LockGrid, block: &[usize], key: &[bool], target: f64) -> bool {
    let off = block[0];
    let slot_key = |pattern: &[bool]| {
        let mut bits = vec![false; off + block.len()];
        bits[off..].copy_from_slice(pattern);
        Key::new(bits)
    };
    if effective_width(grid, &slot_key(key)).ok() != Some(target) {
        return false;
    }
    if block.len() <= EXHAUSTIVE_SLOT_BITS {
        let locking: u64 = key.iter().enumerate().map(|(i, &b)| (b as u64) << i).sum();
        return (0..1u64 << block.len()).filter(|&p| p != locking).all(|p| {
            let pattern: Vec<bool> = (0..block.len()).map(|i| p >> i & 1 == 1).collect();
            let w = effective_width(grid, &slot_key(&pattern)).unwrap();
            (w - target).abs() > SMT_SEPARATION * target
        });
    }
    (0..grid.n).all(|i| {
        let w = grid.col_widths[i];
        let on = grid.column_bits(i).iter().all(|b| key[b - off]);
        if on {
            w >= 1e-3 * target
        } else {
            grid.column_bits(i).len() == 1 && w >= DECOY_MIN * target
        }
    })
}

/// One PB-Lock slot: columns of up to two bits with widths drawn from
/// `{1, 2, 3, 4} W_unit`, a random key, and `W_unit` chosen so the
/// conducting columns sum to the target.
fn pb_slot(block: &[usize], target: f64, rng: &mut ChaCha8Rng) -> Option<(LockGrid, Vec<bool>)> {
    let kb = block.len();
    let n = kb.div_ceil(2);
    let mut sizes = vec![2; kb / 2];
    if kb % 2 == 1 {
        sizes.push(1);
    }
    let multiples: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=4) as f64).collect();
    let (grid, columns) = layout(block, &sizes, vec![1.0; n], rng);
    let key: Vec<bool> = (0..kb).map(|_| rng.gen()).collect();
    let on: Vec<bool> = columns.iter().map(|c| c.iter().all(|b| key[b - block[0]])).collect();
    let units: f64 = multiples.iter().zip(&on).filter(|p| *p.1).map(|p| p.0).sum();
    if units == 0.0 {
        return None;
    }
    let sum = |u: f64| (0..n).fold(0.0, |acc, i| acc + multiples[i] * u * if on[i] { 1.0 } else { 0.0 });
    let unit = nudge_exact(target / units, target, sum)?;
    let grid = LockGrid { col_widths: multiples.iter().map(|c| c * unit).collect(), ..grid };
    Some((grid, key))
}
