//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! with its measurements and wall time.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::collections::BTreeSet;
use std::time::Instant;

use analock::circuit::{self, CircuitModel, Kind};
use analock::ga::*;
use analock::harness::*;
use analock::locking::*;
use analock::smt::{self, LockConstraint, SmtError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LOCK_SEED: u64 = 100;
const SEEDS: std::ops::Range<u64> = 0..10;
const BENCHES: [Kind; 4] = [Kind::Ota, Kind::Bpf, Kind::Pll, Kind::Twg];

/// Criteria expected to fail with the committed models. The BPF Case 1
/// width recovery is ill-conditioned; see "Known red" in the README.
const KNOWN_RED: [usize; 1] = [4];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn locked(kind: Kind, scheme: Scheme, k: usize, seed: u64) -> (LockedNetlist, OracleBundle) {
    let lock = make_lock(&CircuitModel::builtin(kind), scheme, &equal_partition(k, kind.param_count()), seed).unwrap();
    let oracle = OracleBundle::measure(&lock).unwrap();
    (lock, oracle)
}

fn recovered(report: &ExperimentReport, k: usize) -> Option<Key> {
    report.recovered_key.as_deref().map(|h| Key::from_hex(h, k).unwrap())
}

fn random_grid(rng: &mut ChaCha8Rng) -> (LockGrid, usize) {
    let k = rng.gen_range(1..=12);
    let m = rng.gen_range(1..=4);
    let n = rng.gen_range(1..=6);
    let mut pool: Vec<usize> = (0..k).collect();
    pool.shuffle(rng);
    let mut placement = vec![vec![false; n]; m];
    let mut key_map = vec![vec![None; n]; m];
    for i in 0..n {
        placement[0][i] = true;
        for j in 1..m {
            if rng.gen_bool(0.6) {
                if let Some(b) = pool.pop() {
                    placement[j][i] = true;
                    key_map[j][i] = Some(b);
                }
            }
        }
    }
    let col_widths = (0..n).map(|_| rng.gen_range(10.0..5000.0)).collect();
    (LockGrid { m, n, col_widths, placement, key_map }, k)
}

/// Product form of the lock equation on an integer key.
fn product_width(g: &LockGrid, key: u64) -> f64 {
    let mut w = 0.0;
    for i in 0..g.n {
        let mut gate = 1.0;
        for j in 1..g.m {
            if g.placement[j][i] {
                let b = g.key_map[j][i].unwrap();
                gate *= ((key >> b) & 1) as f64;
            }
        }
        w += g.col_widths[i] * gate;
    }
    w
}

fn effective_width_matches_exhaustive() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut keys = 0u64;
    for _ in 0..50 {
        let (g, k) = random_grid(&mut rng);
        g.validate().unwrap();
        for idx in 0..1u64 << k {
            keys += 1;
            if effective_width(&g, &Key::from_index(idx, k)).unwrap() != product_width(&g, idx) {
                return verdict(false, format!("mismatch on {g:?} key {idx}"));
            }
        }
    }
    verdict(true, format!("50 grids, {keys} keys, exact"))
}

fn smt_unique_key_found_by_ga() -> Verdict {
    let cfg = AttackConfig::default();
    let mut notes = Vec::new();
    let mut pass = true;
    for kind in BENCHES {
        let (lock, oracle) = locked(kind, Scheme::Smt, 16, LOCK_SEED);
        let census = key_census(lock.view(), &oracle, cfg.match_tolerance, cfg.census_cap_bits).unwrap();
        let unique = census.count == 1 && census.contains(lock.locking_key());
        let mut hits = 0;
        let mut worst = 0;
        for seed in SEEDS {
            let r = run_case2_ga(lock.view(), &oracle, &cfg.with_seed(seed), None).unwrap().report;
            worst = worst.max(r.generations);
            if recovered(&r, 16).as_ref() == Some(lock.locking_key()) && r.generations <= 2000 {
                hits += 1;
            }
        }
        pass &= unique && hits == 10;
        notes.push(format!("{kind}: census {} ga {hits}/10 max gens {worst}", census.count));
    }
    verdict(pass, notes.join("; "))
}

fn pb_census_holds_ga_key() -> Verdict {
    let cfg = AttackConfig::default();
    let mut multi = 0;
    let mut inside = 0;
    let mut counts = Vec::new();
    for (i, kind) in BENCHES.into_iter().cycle().take(10).enumerate() {
        let (lock, oracle) = locked(kind, Scheme::Pb, 16, 200 + i as u64);
        let census = key_census(lock.view(), &oracle, cfg.match_tolerance, cfg.census_cap_bits).unwrap();
        let r = run_case2_ga(lock.view(), &oracle, &cfg.with_seed(i as u64), None).unwrap().report;
        multi += (census.count >= 2) as usize;
        inside += recovered(&r, 16).is_some_and(|k| census.contains(&k)) as usize;
        counts.push(census.count);
    }
    verdict(multi >= 9 && inside == 10, format!("census>=2 on {multi}/10, GA key in census {inside}/10, counts {counts:?}"))
}

fn case1_recovers_widths() -> Verdict {
    let cfg = AttackConfig::default();
    let mut notes = Vec::new();
    let mut pass = true;
    for kind in BENCHES {
        let k = if kind == Kind::Bpf { 36 } else { 16 };
        let (lock, oracle) = locked(kind, Scheme::Smt, k, LOCK_SEED);
        let truth = lock.unlocked_params().unwrap();
        let mut gens = Vec::new();
        let mut worst_w: f64 = 0.0;
        let mut worst_f: f64 = 0.0;
        for seed in SEEDS {
            let r = run_case1(lock.view(), &oracle, &cfg.with_seed(seed)).unwrap();
            let err = r.widths.iter().zip(truth.values()).map(|(a, b)| (a / b - 1.0).abs()).fold(0.0, f64::max);
            worst_w = worst_w.max(err);
            worst_f = worst_f.max(r.relative_distance.powi(2));
            gens.push(r.outcome.generations() as f64);
        }
        let med = median(&gens);
        let ok = worst_w <= 1e-3 && worst_f <= 1e-6 && med <= 300.0;
        pass &= ok;
        notes.push(format!("{kind}: worst width err {worst_w:.1e}, worst F {worst_f:.1e}, median gens {med}"));
    }
    verdict(pass, notes.join("; "))
}

fn hint_does_not_slow_the_search() -> Verdict {
    let cfg = AttackConfig::default();
    let (lock, oracle) = locked(Kind::Ota, Scheme::Smt, 32, LOCK_SEED);
    let hint = lock.unlocked_params().unwrap().values().to_vec();
    let (mut plain, mut hinted) = (Vec::new(), Vec::new());
    let mut found = 0;
    for seed in SEEDS {
        let a = run_case2_ga(lock.view(), &oracle, &cfg.with_seed(seed), None).unwrap().report;
        let b = run_case2_ga(lock.view(), &oracle, &cfg.with_seed(seed), Some(&hint)).unwrap().report;
        found += (recovered(&a, 32).as_ref() == Some(lock.locking_key())) as usize;
        found += (recovered(&b, 32).as_ref() == Some(lock.locking_key())) as usize;
        plain.push(a.generations as f64);
        hinted.push(b.generations as f64);
    }
    let (p, h) = (median(&plain), median(&hinted));
    verdict(h <= p && found == 20, format!("median gens without hint {p}, with hint {h}, keys found {found}/20"))
}

fn enumerator_is_complete() -> Verdict {
    let cfg = AttackConfig::default();
    let mut checked = 0;
    for scheme in [Scheme::Smt, Scheme::Pb] {
        for kind in BENCHES {
            for k in [8, 12, 16] {
                if k < kind.param_count() {
                    continue;
                }
                let (lock, oracle) = locked(kind, scheme, k, LOCK_SEED + k as u64);
                let view = lock.view();
                if !matches!(smt::derive_targets(view, None, &oracle.metrics), Err(SmtError::SpecMissing(_))) {
                    return verdict(false, format!("{kind} {scheme}: no SpecMissing without the specification"));
                }
                let base = CircuitModel::builtin(kind);
                let targets = smt::derive_targets(view, Some(&base.spec), &oracle.metrics).unwrap();
                let constraint = LockConstraint::new(view, &targets).unwrap();
                let set = smt::enumerate_keys(&constraint, cfg.width_tolerance, cfg.candidate_cap).unwrap();
                let got: BTreeSet<Key> = set.candidates.iter().map(|c| c.key.clone()).collect();
                let want: BTreeSet<Key> = (0..1u64 << k)
                    .map(|i| Key::from_index(i, k))
                    .filter(|key| {
                        let w = view.widths(key).unwrap();
                        w.iter().zip(&targets).all(|(w, t)| (w - t).abs() <= cfg.width_tolerance * t)
                    })
                    .collect();
                if got != want || !got.contains(lock.locking_key()) {
                    return verdict(
                        false,
                        format!("{kind} {scheme} k={k}: enumerated {} brute force {}", got.len(), want.len()),
                    );
                }
                checked += 1;
            }
        }
    }
    verdict(true, format!("{checked} locks match brute force and hold the locking key"))
}

fn comparison_scales_with_k() -> Verdict {
    let cfg = AttackConfig::default();
    let ks = [16, 32, 40, 64];
    let seeds: Vec<u64> = SEEDS.collect();
    let cmp = compare_attacks(Kind::Ota, Scheme::Smt, &ks, &seeds, LOCK_SEED, &cfg).unwrap();
    let mut csv = Vec::new();
    write_comparison_csv(&cmp.rows, &mut csv).unwrap();
    write_scaling_csv(&cmp.scaling, &mut Vec::new()).unwrap();
    let rows_ok = cmp.rows.len() == 2 * ks.len() && cmp.scaling.len() == ks.len() * seeds.len();
    let gens = cmp.median_generations();
    let kprime: Vec<u64> = cmp.rows.iter().filter(|r| r.attack == "enum").map(|r| r.k_prime).collect();
    let monotone = gens.windows(2).all(|w| w[1].1 >= w[0].1) && kprime.windows(2).all(|w| w[1] >= w[0]);
    let solved = cmp.scaling.iter().filter(|r| r.status == Status::Success).count();
    verdict(
        rows_ok && monotone,
        format!("median GA gens {gens:?}, enumerator K' {kprime:?}, GA runs solved {solved}/{}", cmp.scaling.len()),
    )
}

fn receiver_recovers_the_pll_block() -> Verdict {
    let cfg = AttackConfig::default();
    let base = CircuitModel::builtin(Kind::Receiver);
    let lock = make_lock(&base, Scheme::Smt, &receiver_partition(512), LOCK_SEED).unwrap();
    let oracle = OracleBundle::measure(&lock).unwrap();
    let only_receiver = oracle.benchmark == Kind::Receiver
        && oracle.curves.keys().eq(Kind::Receiver.observables())
        && !Kind::Pll.observables().iter().any(|n| *n != "frequency" && oracle.curves.contains_key(*n))
        && oracle.metrics.keys().all(|m| !m.starts_with("f_locking") && !m.starts_with("t_settle"));
    let truth = lock.locking_key().block(0, RECEIVER_PLL_BITS);
    let mut hits = 0;
    for seed in SEEDS {
        let r = run_receiver_attack(lock.view(), &oracle, &cfg.with_seed(seed)).unwrap().report;
        let within = r.generations <= 2000 && r.pass1.as_ref().is_none_or(|p| p.generations <= 2000);
        if within && recovered(&r, RECEIVER_PLL_BITS).as_ref() == Some(&truth) {
            hits += 1;
        }
    }
    verdict(hits >= 8 && only_receiver, format!("PLL block recovered {hits}/10, oracle holds receiver output only {only_receiver}"))
}

fn bits(s: &str) -> Genes {
    Genes::Binary(s.chars().map(|c| c == '1').collect())
}

fn ga_mechanics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut fails = Vec::new();

    // roulette: s = 1 / (1 + F), so F = 0 is drawn twice as often as F = 1
    let pop = vec![Chromosome::evaluated(bits("0"), 0, 0.0), Chromosome::evaluated(bits("1"), 0, 1.0)];
    let picks = roulette_select(&pop, 60_000, &mut rng);
    let best = picks.iter().filter(|c| c.genes == bits("0")).count() as f64;
    let ratio = best / (picks.len() as f64 - best);
    if (ratio - 2.0).abs() > 0.05 {
        fails.push(format!("roulette ratio {ratio:.3}"));
    }

    let enc = Encoding::Binary { len: 200 };
    let cfg = GaConfig::default();
    let zero = Chromosome::new(Genes::Binary(vec![false; 200]));
    let flips: usize = (0..1000)
        .map(|_| mutate(&zero, 0.05, &enc, &cfg, &mut rng).genes.as_binary().unwrap().iter().filter(|b| **b).count())
        .sum();
    let rate = flips as f64 / 200_000.0;
    if (rate - 0.05).abs() > 0.002 {
        fails.push(format!("bit flip rate {rate:.4}"));
    }

    let mut a = Chromosome::new(bits("0000"));
    let mut b = Chromosome::new(bits("1111"));
    (a.age, b.age) = (2, 5);
    let (u, v) = crossover_single_point(&a, &b, 1.0, None, &mut rng).unwrap();
    if (u.genes.clone(), v.genes.clone()) != (bits("0011"), bits("1100")) {
        fails.push(format!("crossover gave {:?} {:?}", u.genes, v.genes));
    }
    if (u.age, v.age) != (5, 5) {
        fails.push(format!("offspring ages {} {}", u.age, v.age));
    }

    let crowd: Vec<Chromosome> =
        (0..80).map(|i| Chromosome::evaluated(bits("0"), rng.gen_range(0..6), (i % 11) as f64)).collect();
    let kept = age_fitness_pareto_survival(crowd, 40, &mut rng).len();
    if kept != 40 {
        fails.push(format!("survival kept {kept}"));
    }

    let stall = GaConfig { stagnation_window: 2, seed: 3, ..GaConfig::default() };
    let flat = FitnessFunction::new().with(Box::new(|_| Ok(vec![1.0])));
    let enc8 = Encoding::Binary { len: 8 };
    let mut run = GaRun::new(&stall, &enc8, &flat, Vec::new()).unwrap();
    let mut injected = 0;
    for _ in 0..20 {
        let was_pareto = run.pareto_active();
        run.step().unwrap();
        if was_pareto {
            let fresh = run.population().iter().filter(|c| c.age == 0).count();
            if fresh != 1 {
                fails.push(format!("{fresh} age-0 members after injection"));
                break;
            }
            injected += 1;
        }
    }
    if injected == 0 {
        fails.push("no age-0 injection after stagnation".into());
    }

    let terms = FitnessFunction::new()
        .with(Box::new(|_| Ok(vec![1.0, -2.0])))
        .with(Box::new(|_| Ok(vec![0.5])))
        .with(Box::new(|_| Ok(vec![3.0, 0.0, -1.0])));
    let total = evaluate_fitness(&terms, &Chromosome::new(bits("1")));
    if total != 5.0 + 0.25 + 10.0 {
        fails.push(format!("fitness {total} is not the sum of its terms"));
    }

    let target: Vec<bool> = (0..24).map(|i| i % 3 == 0).collect();
    let needle = FitnessFunction::new().with(Box::new(move |g: &Genes| {
        Ok(g.as_binary().unwrap().iter().zip(&target).map(|(a, b)| if a == b { 0.0 } else { 1.0 }).collect())
    }));
    let dcfg = GaConfig { seed: 17, ..GaConfig::default() };
    let enc24 = Encoding::Binary { len: 24 };
    let x = run_ga(&dcfg, &enc24, &needle).unwrap();
    let y = run_ga(&dcfg, &enc24, &needle).unwrap();
    let strip = |o: &GaOutcome| o.trace.iter().map(|s| (s.best, s.mean, s.std, s.best_genes.clone())).collect::<Vec<_>>();
    if strip(&x) != strip(&y) || x.best.genes != y.best.genes {
        fails.push("reruns diverge".into());
    }

    let pass = fails.is_empty();
    verdict(pass, if pass { "roulette, mutation, crossover, survival, injection, ages, fitness sum, determinism".into() } else { fails.join("; ") })
}

/// Amplitude ratio of two dB values, minus one.
fn db_error(got: f64, want: f64) -> f64 {
    (10f64.powf((got - want) / 20.0) - 1.0).abs()
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn calibration_within_one_percent() -> Verdict {
    let m = |kind| {
        let model = CircuitModel::builtin(kind);
        circuit::characterize(&model, &model.nominal_params).unwrap()
    };
    let (ota, bpf, pll, twg) = (m(Kind::Ota), m(Kind::Bpf), m(Kind::Pll), m(Kind::Twg));
    let rx_model = CircuitModel::builtin(Kind::Receiver);
    let rx = circuit::characterize(&rx_model, &rx_model.nominal_params).unwrap();
    let lo = circuit::receiver_lo_hz(&rx_model, &rx_model.nominal_params).unwrap();
    let errors = [
        ("OTA gain", db_error(ota["gain_db"], 41.0)),
        ("OTA UGF", rel(ota["ugf_hz"], 1.2e9)),
        ("BPF gain", db_error(bpf["gain_db"], 0.0)),
        ("BPF center", rel(bpf["fc_hz"], 250e3)),
        ("BPF bandwidth", rel(bpf["bw_hz"], 150e3)),
        ("PLL locking", rel(pll["f_locking_hz"], 1.8e9)),
        ("PLL settling", rel(pll["t_settle_s"], 920e-9)),
        ("TWG amplitude", rel(twg["amplitude_v"], 1.0)),
        ("TWG period", rel(twg["period_s"], 2e-6)),
        ("receiver passband", rel(rx["passband_center_hz"], lo + 200e6)),
    ];
    let worst = errors.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    verdict(errors.iter().all(|(_, e)| *e <= 0.01), format!("worst {} off by {:.2e}", worst.0, worst.1))
}

type Criterion = (usize, &'static str, f64, fn() -> Verdict);

const CRITERIA: [Criterion; 10] = [
    (1, "effective width equals exhaustive evaluation", 10.0, effective_width_matches_exhaustive),
    (2, "SMT k=16 unique key found by the GA", 300.0, smt_unique_key_found_by_ga),
    (3, "PB k=16 census holds the GA key", 120.0, pb_census_holds_ga_key),
    (4, "real-valued attack recovers the widths", 600.0, case1_recovers_widths),
    (5, "width hint does not slow the binary search", f64::INFINITY, hint_does_not_slow_the_search),
    (6, "enumerator is complete", f64::INFINITY, enumerator_is_complete),
    (7, "GA versus enumerator scales in k", f64::INFINITY, comparison_scales_with_k),
    (8, "receiver output yields the PLL key block", 900.0, receiver_recovers_the_pll_block),
    (9, "GA mechanics", 60.0, ga_mechanics),
    (10, "calibrated models match their targets", f64::INFINITY, calibration_within_one_percent),
];

#[test]
fn acceptance() {
    let mut failed = Vec::new();
    for (id, name, budget_s, check) in CRITERIA {
        let started = Instant::now();
        let v = check();
        let t = started.elapsed().as_secs_f64();
        let pass = v.pass && t <= budget_s;
        let budget = if budget_s.is_finite() { format!(" (budget {budget_s:.0} s)") } else { String::new() };
        println!("[{}] {id:>2} {name}: {} [{t:.1} s{budget}]", if pass { "PASS" } else { "FAIL" }, v.detail);
        if !pass {
            failed.push(id);
        }
    }
    let unexpected: Vec<usize> = failed.iter().copied().filter(|id| !KNOWN_RED.contains(id)).collect();
    let fixed: Vec<usize> = KNOWN_RED.iter().copied().filter(|id| !failed.contains(id)).collect();
    println!("failed {failed:?}, known red {KNOWN_RED:?}");
    assert!(unexpected.is_empty(), "criteria {unexpected:?} failed");
    assert!(fixed.is_empty(), "criteria {fixed:?} now pass; drop them from KNOWN_RED");
}
