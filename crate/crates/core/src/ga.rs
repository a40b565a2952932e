//! Genetic algorithm: roulette-wheel selection, half-way single-point
//! crossover, bit-flip / multiplicative mutation, elitism, and
//! age-fitness Pareto survival once the search stagnates.
//!
//! Fitness is minimized. All random draws happen on the control thread
//! from one seeded stream; only fitness evaluation runs in parallel.

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaError {
    #[error("invalid GA configuration: {0}")]
    InvalidConfig(String),
    #[error("operator needs binary genes")]
    EncodingMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Genes {
    Binary(Vec<bool>),
    Real(Vec<f64>),
}

impl Genes {
    pub fn len(&self) -> usize {
        match self {
            Genes::Binary(b) => b.len(),
            Genes::Real(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_binary(&self) -> Option<&[bool]> {
        match self {
            Genes::Binary(b) => Some(b),
            Genes::Real(_) => None,
        }
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match self {
            Genes::Real(r) => Some(r),
            Genes::Binary(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Binary { len: usize },
    Real { lower: Vec<f64>, upper: Vec<f64> },
}

impl Encoding {
    pub fn validate(&self) -> Result<(), GaError> {
        match self {
            Encoding::Binary { len: 0 } => Err(GaError::InvalidConfig("empty chromosome".into())),
            Encoding::Binary { .. } => Ok(()),
            Encoding::Real { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(GaError::InvalidConfig("real bounds must be non-empty and paired".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u)) {
                    return Err(GaError::InvalidConfig("real bounds must satisfy lower <= upper".into()));
                }
                Ok(())
            }
        }
    }

    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Genes {
        match self {
            Encoding::Binary { len } => Genes::Binary((0..*len).map(|_| rng.gen()).collect()),
            Encoding::Real { lower, upper } => {
                // log-uniform on positive ranges, matching the multiplicative mutation
                Genes::Real(
                    lower
                        .iter()
                        .zip(upper)
                        .map(|(&l, &u)| {
                            let r = rng.gen::<f64>();
                            if l > 0.0 { (l * (u / l).powf(r)).clamp(l, u) } else { l + (u - l) * r }
                        })
                        .collect(),
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chromosome {
    pub genes: Genes,
    pub age: u32,
    /// `None` until evaluated.
    pub fitness: Option<f64>,
    #[serde(skip)]
    halting: Option<f64>,
}

impl Chromosome {
    pub fn new(genes: Genes) -> Self {
        Chromosome { genes, age: 0, fitness: None, halting: None }
    }

    pub fn evaluated(genes: Genes, age: u32, fitness: f64) -> Self {
        Chromosome { genes, age, fitness: Some(fitness), halting: Some(fitness) }
    }

    fn score(&self) -> f64 {
        self.fitness.unwrap_or(f64::INFINITY)
    }

    /// The part of the fitness that the stopping rule looks at.
    pub fn halting_fitness(&self) -> f64 {
        self.halting.or(self.fitness).unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub total: f64,
    /// Fitness restricted to the criteria that decide termination.
    pub halting: f64,
}

pub trait Fitness: Sync {
    fn evaluate(&self, genes: &Genes) -> Evaluation;
}

pub type Criterion = Box<dyn Fn(&Genes) -> Result<Vec<f64>, String> + Send + Sync>;

/// Sum over criteria of squared residuals. A criterion that fails scores
/// `+inf`.
#[derive(Default)]
pub struct FitnessFunction {
    criteria: Vec<(Criterion, bool)>,
}

impl FitnessFunction {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, criterion: Criterion) -> Self {
        self.criteria.push((criterion, true));
        self
    }

    /// A criterion that guides the search but is left out of the
    /// stopping rule.
    pub fn with_guide(mut self, criterion: Criterion) -> Self {
        self.criteria.push((criterion, false));
        self
    }

    pub fn len(&self) -> usize {
        self.criteria.len()
    }

    pub fn is_empty(&self) -> bool {
        self.criteria.is_empty()
    }
}

impl Fitness for FitnessFunction {
    fn evaluate(&self, genes: &Genes) -> Evaluation {
        let mut total = 0.0;
        let mut halting = 0.0;
        for (criterion, halts) in &self.criteria {
            let f = match criterion(genes) {
                Ok(r) => r.iter().map(|v| v * v).sum::<f64>(),
                Err(_) => f64::INFINITY,
            };
            let f = if f.is_nan() { f64::INFINITY } else { f };
            total += f;
            if *halts {
                halting += f;
            }
        }
        Evaluation { total, halting }
    }
}

pub fn evaluate_fitness(ff: &dyn Fitness, c: &Chromosome) -> f64 {
    ff.evaluate(&c.genes).total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    /// Generations without improvement before age-fitness Pareto survival
    /// takes over.
    pub stagnation_window: usize,
    /// Relative drop in best fitness a generation needs to count as an
    /// improvement for the stagnation window.
    pub improvement_tol: f64,
    pub max_generations: usize,
    pub max_wall_s: f64,
    pub target_fitness: f64,
    pub seed: u64,
    /// Real genes: multiplicative step, factor drawn from `[1 - s, 1 + s]`.
    pub real_step: f64,
    /// Real genes mutate with probability `real_rate_factor * mutation_rate`.
    pub real_rate_factor: f64,
    /// Crossover cut index; `None` cuts at `L / 2`.
    pub cut_point: Option<usize>,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 40,
            crossover_rate: 0.9,
            mutation_rate: 0.05,
            stagnation_window: 8,
            improvement_tol: 0.0,
            max_generations: 2000,
            max_wall_s: 600.0,
            target_fitness: 0.0,
            seed: 2024,
            real_step: 0.05,
            real_rate_factor: 5.0,
            cut_point: None,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), GaError> {
        let bad = |m: &str| Err(GaError::InvalidConfig(m.into()));
        if self.population < 2 {
            return bad("population must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad("rates must lie in [0, 1]");
        }
        if !(self.target_fitness >= 0.0) {
            return bad("target fitness must be non-negative");
        }
        if !(self.max_wall_s > 0.0) {
            return bad("wall-time budget must be positive");
        }
        if !(self.real_step >= 0.0 && self.real_step < 1.0) || !(self.real_rate_factor >= 0.0) {
            return bad("real mutation step must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.improvement_tol) {
            return bad("improvement tolerance must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Roulette wheel over `s = 1 / (1 + F)`, sampling with replacement.
pub fn roulette_select<R: Rng + ?Sized>(pop: &[Chromosome], count: usize, rng: &mut R) -> Vec<Chromosome> {
    let scores: Vec<f64> = pop.iter().map(|c| 1.0 / (1.0 + c.score())).collect();
    let mut cumulative = Vec::with_capacity(pop.len());
    let mut acc = 0.0;
    for s in &scores {
        acc += s;
        cumulative.push(acc);
    }
    (0..count)
        .map(|_| {
            if !(acc > 0.0) {
                return pop[rng.gen_range(0..pop.len())].clone();
            }
            let r = rng.gen::<f64>() * acc;
            let i = cumulative.partition_point(|&c| c <= r).min(pop.len() - 1);
            pop[i].clone()
        })
        .collect()
}

/// Swap the genes right of the cut (default `L / 2`) with probability
/// `p_c`; otherwise clone the parents. Offspring take the older parent's
/// age.
pub fn crossover_single_point<R: Rng + ?Sized>(
    a: &Chromosome,
    b: &Chromosome,
    p_c: f64,
    cut: Option<usize>,
    rng: &mut R,
) -> Result<(Chromosome, Chromosome), GaError> {
    let (Genes::Binary(x), Genes::Binary(y)) = (&a.genes, &b.genes) else {
        return Err(GaError::EncodingMismatch);
    };
    if x.len() != y.len() {
        return Err(GaError::InvalidConfig("parents differ in length".into()));
    }
    let age = a.age.max(b.age);
    if rng.gen::<f64>() >= p_c {
        let mut c = (a.clone(), b.clone());
        c.0.age = age;
        c.1.age = age;
        return Ok(c);
    }
    let cut = cut.unwrap_or(x.len() / 2).min(x.len());
    let mut u = x[..cut].to_vec();
    u.extend_from_slice(&y[cut..]);
    let mut v = y[..cut].to_vec();
    v.extend_from_slice(&x[cut..]);
    let child = |g| Chromosome { age, ..Chromosome::new(Genes::Binary(g)) };
    Ok((child(u), child(v)))
}

/// Binary genes flip with probability `p_m`. Real genes, with probability
/// `min(1, real_rate_factor * p_m)`, are multiplied by a factor uniform in
/// `[1 - real_step, 1 + real_step]` and clamped to the bounds.
pub fn mutate<R: Rng + ?Sized>(c: &Chromosome, p_m: f64, encoding: &Encoding, config: &GaConfig, rng: &mut R) -> Chromosome {
    let genes = match (&c.genes, encoding) {
        (Genes::Binary(bits), _) => Genes::Binary(bits.iter().map(|&b| b ^ (rng.gen::<f64>() < p_m)).collect()),
        (Genes::Real(vals), Encoding::Real { lower, upper }) => {
            let p = (config.real_rate_factor * p_m).min(1.0);
            Genes::Real(
                vals.iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        if rng.gen::<f64>() < p {
                            let f = 1.0 + config.real_step * (2.0 * rng.gen::<f64>() - 1.0);
                            (v * f).clamp(lower[i], upper[i])
                        } else {
                            v
                        }
                    })
                    .collect(),
            )
        }
        (Genes::Real(_), Encoding::Binary { .. }) => c.genes.clone(),
    };
    if genes == c.genes {
        return c.clone();
    }
    Chromosome { age: c.age, ..Chromosome::new(genes) }
}

fn dominates(a: &Chromosome, b: &Chromosome) -> bool {
    let (fa, fb) = (a.score(), b.score());
    fa <= fb && a.age <= b.age && (fa < fb || a.age < b.age)
}

/// Cull `pop` to `n` members by pairwise Pareto tournaments on (fitness,
/// age). When no dominated pair turns up within a bounded number of
/// draws, the worse of a sampled pair (higher fitness, then older) goes.
pub fn age_fitness_pareto_survival<R: Rng + ?Sized>(mut pop: Vec<Chromosome>, n: usize, rng: &mut R) -> Vec<Chromosome> {
    while pop.len() > n {
        let draws = 4 * pop.len();
        let mut removed = false;
        for _ in 0..draws {
            let i = rng.gen_range(0..pop.len());
            let j = rng.gen_range(0..pop.len());
            if i == j {
                continue;
            }
            if dominates(&pop[i], &pop[j]) {
                pop.swap_remove(j);
                removed = true;
                break;
            }
            if dominates(&pop[j], &pop[i]) {
                pop.swap_remove(i);
                removed = true;
                break;
            }
        }
        if !removed {
            let i = rng.gen_range(0..pop.len());
            let mut j = rng.gen_range(0..pop.len() - 1);
            if j >= i {
                j += 1;
            }
            let key = |c: &Chromosome| (c.score(), c.age);
            let worse = if key(&pop[i]).partial_cmp(&key(&pop[j])) == Some(std::cmp::Ordering::Greater) {
                i
            } else {
                j
            };
            pop.swap_remove(worse);
        }
    }
    pop
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Best fitness seen so far.
    pub best: f64,
    pub mean: f64,
    pub std: f64,
    pub best_genes: Genes,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    Target,
    MaxGenerations,
    WallTime,
}

#[derive(Debug, Clone)]
pub struct GaOutcome {
    pub best: Chromosome,
    pub trace: Vec<GenerationStats>,
    pub halt_reason: HaltReason,
    /// Distinct chromosomes simulated.
    pub evaluations: usize,
}

impl GaOutcome {
    /// Index of the last generation run.
    pub fn generations(&self) -> usize {
        self.trace.last().map_or(0, |s| s.generation)
    }
}

/// Trace CSV: `generation,best,mean,std,elapsed_s`.
pub fn write_trace_csv<W: Write>(trace: &[GenerationStats], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["generation", "best", "mean", "std", "elapsed_s"])?;
    for s in trace {
        w.write_record([
            s.generation.to_string(),
            format!("{:.11e}", s.best),
            format!("{:.11e}", s.mean),
            format!("{:.11e}", s.std),
            format!("{:.6}", s.elapsed_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

struct Evaluator<'a> {
    fitness: &'a dyn Fitness,
    cache: HashMap<Vec<bool>, Evaluation>,
    evaluations: usize,
}

impl Evaluator<'_> {
    fn run(&mut self, pop: &mut [Chromosome]) {
        let pending: Vec<usize> = (0..pop.len()).filter(|&i| pop[i].fitness.is_none()).collect();
        let mut todo: Vec<Genes> = Vec::new();
        for &i in &pending {
            let cached = match &pop[i].genes {
                Genes::Binary(b) => self.cache.contains_key(b),
                Genes::Real(_) => false,
            };
            if !cached && !todo.contains(&pop[i].genes) {
                todo.push(pop[i].genes.clone());
            }
        }
        let results: Vec<Evaluation> = todo.par_iter().map(|g| self.fitness.evaluate(g)).collect();
        self.evaluations += todo.len();
        let mut fresh: Vec<(Genes, Evaluation)> = todo.into_iter().zip(results).collect();
        for &i in &pending {
            let e = match &pop[i].genes {
                Genes::Binary(b) if self.cache.contains_key(b) => self.cache[b],
                g => fresh.iter().find(|(h, _)| h == g).map(|p| p.1).unwrap(),
            };
            pop[i].fitness = Some(e.total);
            pop[i].halting = Some(e.halting);
        }
        for (g, e) in fresh.drain(..) {
            if let Genes::Binary(b) = g {
                self.cache.insert(b, e);
            }
        }
    }
}

fn stats(pop: &[Chromosome]) -> (f64, f64) {
    let finite: Vec<f64> = pop.iter().map(|c| c.score()).filter(|f| f.is_finite()).collect();
    if finite.is_empty() {
        return (f64::INFINITY, 0.0);
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    let var = finite.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn better(a: &Chromosome, b: &Chromosome) -> bool {
    a.score() < b.score()
}

/// Run the GA from `config.seed`. Population mean and spread in the trace
/// are taken over members with finite fitness.
pub fn run_ga(config: &GaConfig, encoding: &Encoding, fitness: &dyn Fitness) -> Result<GaOutcome, GaError> {
    GaRun::new(config, encoding, fitness, Vec::new())?.finish()
}

/// A GA run advanced one generation at a time.
pub struct GaRun<'a> {
    config: &'a GaConfig,
    encoding: &'a Encoding,
    eval: Evaluator<'a>,
    rng: ChaCha8Rng,
    started: Instant,
    pop: Vec<Chromosome>,
    best: Chromosome,
    trace: Vec<GenerationStats>,
    generation: usize,
    stagnant: usize,
    /// Best fitness at the last counted improvement.
    stall_ref: f64,
    pareto: bool,
}

impl<'a> GaRun<'a> {
    /// Start a run; `initial` seeds the first members of the population,
    /// the rest is drawn at random.
    pub fn new(
        config: &'a GaConfig,
        encoding: &'a Encoding,
        fitness: &'a dyn Fitness,
        initial: Vec<Genes>,
    ) -> Result<Self, GaError> {
        config.validate()?;
        encoding.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut eval = Evaluator { fitness, cache: HashMap::new(), evaluations: 0 };
        let n = config.population;
        let mut pop: Vec<Chromosome> = initial.into_iter().take(n).map(Chromosome::new).collect();
        while pop.len() < n {
            pop.push(Chromosome::new(encoding.random(&mut rng)));
        }
        eval.run(&mut pop);
        let best = fittest(&pop);
        let mut run = GaRun {
            config,
            encoding,
            eval,
            rng,
            started: Instant::now(),
            pop,
            best,
            trace: Vec::new(),
            generation: 0,
            stagnant: 0,
            stall_ref: f64::INFINITY,
            pareto: false,
        };
        run.stall_ref = run.best.score();
        run.record();
        Ok(run)
    }

    pub fn population(&self) -> &[Chromosome] {
        &self.pop
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    /// Whether age-fitness Pareto survival has taken over.
    pub fn pareto_active(&self) -> bool {
        self.pareto
    }

    fn record(&mut self) {
        let (mean, std) = stats(&self.pop);
        self.trace.push(GenerationStats {
            generation: self.generation,
            best: self.best.score(),
            mean,
            std,
            best_genes: self.best.genes.clone(),
            elapsed_s: self.started.elapsed().as_secs_f64(),
        });
    }

    fn solved(&self) -> Option<&Chromosome> {
        self.pop
            .iter()
            .filter(|c| c.halting_fitness() <= self.config.target_fitness)
            .min_by(|a, b| a.halting_fitness().total_cmp(&b.halting_fitness()))
    }

    /// Breed the next generation.
    pub fn step(&mut self) -> Result<(), GaError> {
        let n = self.config.population;
        let binary = matches!(self.encoding, Encoding::Binary { .. });
        for c in &mut self.pop {
            c.age += 1;
        }
        let parents = roulette_select(&self.pop, n, &mut self.rng);
        let mut offspring = Vec::with_capacity(n);
        for pair in parents.chunks(2) {
            let (a, b) = match pair {
                [a, b] if binary => {
                    crossover_single_point(a, b, self.config.crossover_rate, self.config.cut_point, &mut self.rng)?
                }
                [a, b] => (a.clone(), b.clone()),
                [a] => (a.clone(), a.clone()),
                _ => unreachable!(),
            };
            for c in [a, b] {
                if offspring.len() < n {
                    offspring.push(mutate(&c, self.config.mutation_rate, self.encoding, self.config, &mut self.rng));
                }
            }
        }
        self.eval.run(&mut offspring);

        let pop = std::mem::take(&mut self.pop);
        self.pop = if self.pareto {
            let mut fresh = vec![Chromosome::new(self.encoding.random(&mut self.rng))];
            self.eval.run(&mut fresh);
            let mut combined = pop;
            combined.append(&mut offspring);
            let mut survivors = age_fitness_pareto_survival(combined, n - 1, &mut self.rng);
            survivors.append(&mut fresh);
            survivors
        } else {
            offspring.truncate(n - 1);
            offspring.insert(0, fittest(&pop));
            offspring
        };
        self.generation += 1;

        let round_best = fittest(&self.pop);
        if better(&round_best, &self.best) {
            self.best = round_best;
        }
        if self.best.score() < self.stall_ref * (1.0 - self.config.improvement_tol) {
            self.stall_ref = self.best.score();
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
            if self.stagnant >= self.config.stagnation_window {
                self.pareto = true;
            }
        }
        self.record();
        Ok(())
    }

    /// Step until the target, generation or wall-time budget is reached.
    pub fn finish(mut self) -> Result<GaOutcome, GaError> {
        loop {
            let halt = if self.solved().is_some() {
                HaltReason::Target
            } else if self.generation >= self.config.max_generations {
                HaltReason::MaxGenerations
            } else if self.started.elapsed().as_secs_f64() >= self.config.max_wall_s {
                HaltReason::WallTime
            } else {
                self.step()?;
                continue;
            };
            let best = match halt {
                HaltReason::Target => self.solved().unwrap().clone(),
                _ => self.best,
            };
            return Ok(GaOutcome { best, trace: self.trace, halt_reason: halt, evaluations: self.eval.evaluations });
        }
    }
}

fn fittest(pop: &[Chromosome]) -> Chromosome {
    pop.iter().fold(pop[0].clone(), |b, c| if better(c, &b) { c.clone() } else { b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn bits(s: &str) -> Genes {
        Genes::Binary(s.chars().map(|c| c == '1').collect())
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Hamming distance to a fixed target key.
    struct Needle(Vec<bool>);

    impl Fitness for Needle {
        fn evaluate(&self, genes: &Genes) -> Evaluation {
            let g = genes.as_binary().unwrap();
            let d = g.iter().zip(&self.0).filter(|(a, b)| a != b).count() as f64;
            Evaluation { total: d, halting: d }
        }
    }

    #[test]
    fn fitness_is_sum_of_squared_residuals() {
        let ff = FitnessFunction::new().with(Box::new(|_| Ok(vec![1.0, -2.0, 2.0])));
        assert_eq!(evaluate_fitness(&ff, &Chromosome::new(bits("0"))), 9.0);
        let zero = FitnessFunction::new().with(Box::new(|_| Ok(vec![0.0; 5])));
        assert_eq!(evaluate_fitness(&zero, &Chromosome::new(bits("0"))), 0.0);
        let failing = FitnessFunction::new().with(Box::new(|_| Err("degenerate".into())));
        assert_eq!(evaluate_fitness(&failing, &Chromosome::new(bits("0"))), f64::INFINITY);
    }

    #[test]
    fn guide_criteria_are_left_out_of_halting() {
        let ff = FitnessFunction::new()
            .with(Box::new(|_| Ok(vec![1.0])))
            .with_guide(Box::new(|_| Ok(vec![3.0])));
        let e = ff.evaluate(&bits("1"));
        assert_eq!((e.total, e.halting), (10.0, 1.0));
    }

    #[test]
    fn crossover_cuts_half_way() {
        let a = Chromosome::new(bits("0000"));
        let b = Chromosome { age: 3, ..Chromosome::new(bits("1111")) };
        let (u, v) = crossover_single_point(&a, &b, 1.0, None, &mut rng(0)).unwrap();
        assert_eq!(u.genes, bits("0011"));
        assert_eq!(v.genes, bits("1100"));
        assert_eq!((u.age, v.age), (3, 3));
        let (u, v) = crossover_single_point(&a, &a, 1.0, None, &mut rng(0)).unwrap();
        assert_eq!((u.genes, v.genes), (a.genes.clone(), a.genes.clone()));
        let r = Chromosome::new(Genes::Real(vec![1.0]));
        assert_eq!(crossover_single_point(&r, &r, 1.0, None, &mut rng(0)), Err(GaError::EncodingMismatch));
    }

    #[test]
    fn mutation_limits() {
        let enc = Encoding::Binary { len: 8 };
        let cfg = GaConfig::default();
        let c = Chromosome::new(bits("01101001"));
        assert_eq!(mutate(&c, 0.0, &enc, &cfg, &mut rng(1)).genes, c.genes);
        assert_eq!(mutate(&c, 1.0, &enc, &cfg, &mut rng(1)).genes, bits("10010110"));
    }

    #[test]
    fn real_mutation_stays_in_bounds_and_step() {
        let enc = Encoding::Real { lower: vec![1.0, 1.0], upper: vec![2.0, 2.0] };
        let cfg = GaConfig::default();
        let mut r = rng(4);
        let mut c = Chromosome::new(Genes::Real(vec![1.5, 1.99]));
        for _ in 0..1000 {
            let next = mutate(&c, 0.2, &enc, &cfg, &mut r);
            for (a, b) in next.genes.as_real().unwrap().iter().zip(c.genes.as_real().unwrap()) {
                assert!((1.0..=2.0).contains(a));
                assert!((a / b - 1.0).abs() <= 0.05 + 1e-12);
            }
            c = next;
        }
    }

    #[test]
    fn survival_keeps_the_non_dominated_corner() {
        let mut r = rng(7);
        for round in 0..200 {
            let mut pop: Vec<Chromosome> = (0..30)
                .map(|i| Chromosome::evaluated(bits("0"), r.gen_range(1..20), 1.0 + (i * 7 % 13) as f64))
                .collect();
            pop.push(Chromosome::evaluated(bits("1"), 0, 0.5));
            let out = age_fitness_pareto_survival(pop, 10 + round % 5, &mut r);
            assert_eq!(out.len(), 10 + round % 5);
            assert!(out.iter().any(|c| c.genes == bits("1")));
        }
    }

    #[test]
    fn equal_age_worse_fitness_is_removed() {
        let pop = vec![Chromosome::evaluated(bits("0"), 2, 1.0), Chromosome::evaluated(bits("1"), 2, 2.0)];
        let out = age_fitness_pareto_survival(pop, 1, &mut rng(3));
        assert_eq!(out[0].genes, bits("0"));
    }

    #[test]
    fn ga_finds_a_needle_deterministically() {
        let target: Vec<bool> = (0..24).map(|i| i % 3 == 0).collect();
        let ff = Needle(target.clone());
        let cfg = GaConfig { seed: 11, ..GaConfig::default() };
        let enc = Encoding::Binary { len: 24 };
        let a = run_ga(&cfg, &enc, &ff).unwrap();
        assert_eq!(a.halt_reason, HaltReason::Target);
        assert_eq!(a.best.genes, Genes::Binary(target));
        let b = run_ga(&cfg, &enc, &ff).unwrap();
        let strip = |t: &[GenerationStats]| t.iter().map(|s| (s.best, s.mean, s.std)).collect::<Vec<_>>();
        assert_eq!(strip(&a.trace), strip(&b.trace));
        assert!(a.trace.windows(2).all(|w| w[1].best <= w[0].best));
        assert!(a.trace.iter().all(|s| s.best <= s.mean));
    }

    #[test]
    fn ages_and_injection() {
        let cfg = GaConfig { stagnation_window: 2, ..GaConfig::default() };
        let enc = Encoding::Binary { len: 8 };
        let flat = FitnessFunction::new().with(Box::new(|_| Ok(vec![1.0])));
        let mut run = GaRun::new(&cfg, &enc, &flat, Vec::new()).unwrap();
        let mut max_age = 0;
        for _ in 0..20 {
            let was_pareto = run.pareto_active();
            run.step().unwrap();
            let pop = run.population();
            assert_eq!(pop.len(), cfg.population);
            let oldest = pop.iter().map(|c| c.age).max().unwrap();
            assert!(oldest <= max_age + 1);
            max_age = oldest;
            if was_pareto {
                let fresh: Vec<_> = pop.iter().filter(|c| c.age == 0).collect();
                assert_eq!(fresh.len(), 1);
            }
        }
        assert!(run.pareto_active());
    }

    #[test]
    fn infinite_target_stops_at_generation_zero() {
        let cfg = GaConfig { target_fitness: f64::INFINITY, ..GaConfig::default() };
        let out = run_ga(&cfg, &Encoding::Binary { len: 8 }, &Needle(vec![true; 8])).unwrap();
        assert_eq!(out.halt_reason, HaltReason::Target);
        assert_eq!(out.generations(), 0);
    }

    #[test]
    fn generation_budget_is_honored() {
        let cfg = GaConfig { max_generations: 5, ..GaConfig::default() };
        let ff = FitnessFunction::new().with(Box::new(|_| Ok(vec![1.0])));
        let out = run_ga(&cfg, &Encoding::Binary { len: 8 }, &ff).unwrap();
        assert_eq!(out.halt_reason, HaltReason::MaxGenerations);
        assert_eq!(out.trace.len(), 6);
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(GaConfig { population: 1, ..GaConfig::default() }.validate().is_err());
        assert!(GaConfig { mutation_rate: 1.5, ..GaConfig::default() }.validate().is_err());
        let cfg: GaConfig = serde_json::from_str(r#"{"population": 12}"#).unwrap();
        assert_eq!(cfg.population, 12);
        assert_eq!(cfg.mutation_rate, 0.05);
        assert!(serde_json::from_str::<GaConfig>(r#"{"populaton": 12}"#).is_err());
    }

    proptest! {
        #[test]
        fn crossover_preserves_column_bits(a in prop::collection::vec(any::<bool>(), 16),
                                           b in prop::collection::vec(any::<bool>(), 16),
                                           seed in any::<u64>()) {
            let (x, y) = (Chromosome::new(Genes::Binary(a.clone())), Chromosome::new(Genes::Binary(b.clone())));
            let (u, v) = crossover_single_point(&x, &y, 0.9, None, &mut rng(seed)).unwrap();
            let (u, v) = (u.genes.as_binary().unwrap().to_vec(), v.genes.as_binary().unwrap().to_vec());
            for i in 0..16 {
                let mut before = [a[i], b[i]];
                let mut after = [u[i], v[i]];
                before.sort();
                after.sort();
                prop_assert_eq!(before, after);
            }
        }

        #[test]
        fn survival_returns_exactly_n(size in 3usize..60, seed in any::<u64>()) {
            let mut r = rng(seed);
            let pop: Vec<Chromosome> = (0..size)
                .map(|_| Chromosome::evaluated(bits("0"), r.gen_range(0..5), r.gen_range(0..4) as f64))
                .collect();
            let n = r.gen_range(1..size);
            prop_assert_eq!(age_fitness_pareto_survival(pop, n, &mut r).len(), n);
        }
    }
}
