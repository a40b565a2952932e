use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use analock::circuit::{self, calibrate, CircuitModel, Kind};
use analock::harness::{
    compare_attacks, key_census, results_dir, run_case1_attack, run_case2_ga, run_enumeration, run_receiver_attack,
    sampled_census, two_pass, write_census_csv, write_comparison_csv, write_run, write_scaling_csv, AttackConfig,
    AttackRun, ExperimentReport, HarnessError, OracleBundle, Status,
};
use analock::locking::{equal_partition, make_lock, receiver_partition, LockedNetlist, LockedView, Scheme};
use analock::smt::write_candidates_csv;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

/// Lock generation seed when `--seed` is not given. GA runs default to the
/// same value through `GaConfig`.
const DEFAULT_SEED: u64 = 2024;

#[derive(Parser)]
#[command(name = "analock", version, about = "Lock behavioral analog circuits and recover their keys")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the built-in models and write them as JSON.
    Calibrate {
        #[arg(long, default_value = "models")]
        out: PathBuf,
    },
    /// Lock a benchmark; writes the locked netlist, the oracle-side netlist and the oracle measurement.
    Lock {
        #[arg(long)]
        bench: Kind,
        #[arg(long, default_value = "smt")]
        scheme: Scheme,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Print the locking key.
        #[arg(long)]
        reveal_key: bool,
    },
    /// Measure the unlocked chip described by an oracle-side netlist.
    Oracle {
        #[arg(long)]
        keyed: PathBuf,
        #[arg(long, default_value = "oracle.json")]
        out: PathBuf,
    },
    /// GA key search (or width recovery with --case1).
    AttackGa {
        #[command(flatten)]
        io: AttackIo,
        /// Recover the effective widths instead of the key.
        #[arg(long)]
        case1: bool,
        /// Width hint per slot, comma separated (nm).
        #[arg(long, value_delimiter = ',', conflicts_with = "case1")]
        hint: Option<Vec<f64>>,
    },
    /// Exact enumeration from the circuit specification.
    AttackEnum {
        #[command(flatten)]
        io: AttackIo,
        /// Model JSON holding the circuit specification.
        #[arg(long, conflicts_with = "builtin_spec")]
        spec: Option<PathBuf>,
        /// Use the specification of the built-in model.
        #[arg(long)]
        builtin_spec: bool,
    },
    /// Width recovery, then key search with the widths as a hint.
    TwoPass {
        #[command(flatten)]
        io: AttackIo,
    },
    /// Count the keys that reproduce the oracle.
    Census {
        #[command(flatten)]
        io: AttackIo,
    },
    /// GA against enumeration over several key lengths.
    Compare {
        #[arg(long)]
        bench: Kind,
        #[arg(long, default_value = "smt")]
        scheme: Scheme,
        #[arg(long, value_delimiter = ',', default_value = "16,32,40,64")]
        k: Vec<usize>,
        /// Number of GA seeds, counted up from --seed.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[command(flatten)]
        common: Common,
    },
    /// PLL key block recovery from the receiver output.
    Receiver {
        #[command(flatten)]
        io: AttackIo,
    },
}

#[derive(Args)]
struct Common {
    /// Attack configuration (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    max_generations: Option<usize>,
    #[arg(long)]
    match_tolerance: Option<f64>,
    /// Root of the results tree.
    #[arg(long, default_value = "results")]
    results: PathBuf,
    /// Print recovered keys.
    #[arg(long)]
    reveal_key: bool,
}

#[derive(Args)]
struct AttackIo {
    #[arg(long)]
    locked: PathBuf,
    #[arg(long)]
    oracle: PathBuf,
    #[command(flatten)]
    common: Common,
}

/// Bad invocation or unreadable input: exit status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<Usage>() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Calibrate { out } => {
            calibrate::write_models(&out).with_context(|| format!("writing models to {}", out.display()))?;
            for model in calibrate::calibrate_all()? {
                let metrics = circuit::characterize(&model, &model.nominal_params)?;
                let text: Vec<String> = metrics.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
                println!("{}: {}", model.kind, text.join(" "));
            }
            Ok(Status::Success)
        }
        Command::Lock { bench, scheme, k, seed, out, reveal_key } => {
            let base = CircuitModel::builtin(bench);
            let partition = if bench == Kind::Receiver {
                if k < analock::locking::RECEIVER_PLL_BITS + base.kind.param_count() - 1 {
                    return Err(usage(format!("receiver locks need k >= {}", analock::locking::RECEIVER_PLL_BITS + 3)));
                }
                receiver_partition(k)
            } else {
                if k < base.kind.param_count() {
                    return Err(usage(format!("{bench} has {} locked slots; k must be at least that", base.kind.param_count())));
                }
                equal_partition(k, base.kind.param_count())
            };
            let lock = make_lock(&base, scheme, &partition, seed)?;
            let oracle = OracleBundle::measure(&lock)?;
            fs::create_dir_all(&out)?;
            write_json(&out.join("locked.json"), lock.view())?;
            write_json(&out.join("keyed.json"), &lock)?;
            write_json(&out.join("oracle.json"), &oracle)?;
            println!("locked {bench} with {scheme}, k = {k}, seed = {seed} -> {}", out.display());
            if reveal_key {
                println!("locking key: {}", lock.locking_key().to_hex());
            }
            Ok(Status::Success)
        }
        Command::Oracle { keyed, out } => {
            let lock: LockedNetlist = read_json(&keyed)?;
            write_json(&out, &OracleBundle::measure(&lock)?)?;
            println!("oracle written to {}", out.display());
            Ok(Status::Success)
        }
        Command::AttackGa { io, case1, hint } => {
            let (view, oracle, config) = load(&io)?;
            if let Some(h) = &hint {
                if h.len() != view.grids().len() {
                    return Err(usage(format!("--hint needs {} widths", view.grids().len())));
                }
            }
            let run = if case1 {
                run_case1_attack(&view, &oracle, &config)?
            } else {
                run_case2_ga(&view, &oracle, &config, hint.as_deref())?
            };
            finish(&io.common, &run)
        }
        Command::AttackEnum { io, spec, builtin_spec } => {
            let (view, oracle, config) = load(&io)?;
            let spec = match (spec, builtin_spec) {
                (Some(path), _) => {
                    let text = fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
                    Some(CircuitModel::from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?.spec)
                }
                (None, true) => Some(CircuitModel::builtin(view.kind()).spec),
                (None, false) => None,
            };
            let run = run_enumeration(&view, &oracle, spec.as_ref(), &config)?;
            let dir = results_dir(&io.common.results, view.kind(), view.scheme(), view.k(), config.ga.seed).join("enum");
            fs::create_dir_all(&dir)?;
            write_candidates_csv(&run.candidates, run.checked.as_ref(), fs::File::create(dir.join("candidates.csv"))?)?;
            write_json(&dir.join("report.json"), &run.report)?;
            summarize(&run.report, io.common.reveal_key, &dir);
            Ok(run.report.status)
        }
        Command::TwoPass { io } => {
            let (view, oracle, config) = load(&io)?;
            let run = two_pass(&view, &oracle, &config)?;
            finish(&io.common, &run)
        }
        Command::Census { io } => {
            let (view, oracle, config) = load(&io)?;
            let census = match key_census(&view, &oracle, config.match_tolerance, config.census_cap_bits) {
                Err(HarnessError::CapExceeded { .. }) => {
                    sampled_census(&view, &oracle, config.match_tolerance, config.census_samples, config.ga.seed)?
                }
                other => other?,
            };
            let dir = results_dir(&io.common.results, view.kind(), view.scheme(), view.k(), config.ga.seed).join("census");
            fs::create_dir_all(&dir)?;
            write_census_csv(&census, fs::File::create(dir.join("census.csv"))?)?;
            let mode = if census.exhaustive { "exhaustive" } else { "sampled" };
            println!("{mode} census: {} of {} keys match the oracle -> {}", census.count, census.examined, dir.display());
            if io.common.reveal_key {
                for key in &census.keys {
                    println!("{}", key.to_hex());
                }
            }
            Ok(Status::Success)
        }
        Command::Compare { bench, scheme, k, seeds, common } => {
            let config = config_from(&common)?;
            let seed_list: Vec<u64> = (0..seeds).map(|i| config.ga.seed + i).collect();
            let cmp = compare_attacks(bench, scheme, &k, &seed_list, config.ga.seed, &config)?;
            let dir = common.results.join("compare").join(bench.name()).join(scheme.name());
            fs::create_dir_all(&dir)?;
            write_comparison_csv(&cmp.rows, fs::File::create(dir.join("comparison.csv"))?)?;
            write_scaling_csv(&cmp.scaling, fs::File::create(dir.join("scaling.csv"))?)?;
            for row in &cmp.rows {
                println!("{} {} k={} {}: K'={} t={:.3}s", row.bench, row.scheme, row.k, row.attack, row.k_prime, row.t_s);
            }
            let failed = cmp.scaling.iter().any(|r| r.status == Status::Failed);
            Ok(if failed { Status::Failed } else { Status::Success })
        }
        Command::Receiver { io } => {
            let (view, oracle, config) = load(&io)?;
            if view.kind() != Kind::Receiver {
                return Err(usage(format!("{} is a {} netlist, not a receiver", io.locked.display(), view.kind())));
            }
            let run = run_receiver_attack(&view, &oracle, &config)?;
            finish(&io.common, &run)
        }
    }
}

fn config_from(common: &Common) -> Result<AttackConfig> {
    let mut config = match &common.config {
        Some(path) => read_json::<AttackConfig>(path)?,
        None => AttackConfig::default(),
    };
    if let Some(s) = common.seed {
        config.ga.seed = s;
    }
    if let Some(n) = common.population {
        config.ga.population = n;
    }
    if let Some(g) = common.max_generations {
        config.ga.max_generations = g;
    }
    if let Some(t) = common.match_tolerance {
        config.match_tolerance = t;
    }
    config.ga.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn load(io: &AttackIo) -> Result<(LockedView, OracleBundle, AttackConfig)> {
    let view: LockedView = read_json(&io.locked)?;
    let oracle: OracleBundle = read_json(&io.oracle)?;
    if oracle.benchmark != view.kind() {
        return Err(usage(format!("oracle is for {}, netlist is {}", oracle.benchmark, view.kind())));
    }
    Ok((view, oracle, config_from(&io.common)?))
}

fn finish(common: &Common, run: &AttackRun) -> Result<Status> {
    let r = &run.report;
    let dir = results_dir(&common.results, r.benchmark, r.scheme, r.k, r.seed).join(r.attack.name());
    write_run(&dir, run)?;
    summarize(r, common.reveal_key, &dir);
    Ok(r.status)
}

fn summarize(r: &ExperimentReport, reveal_key: bool, dir: &Path) {
    let status = match r.status {
        Status::Success => "SUCCESS",
        Status::Failed => "FAILED",
    };
    println!(
        "{status}: {} {} {} k={} seed={} generations={} time={:.3}s distance={:.3e} K'={} -> {}",
        r.attack.name(),
        r.benchmark,
        r.scheme,
        r.k,
        r.seed,
        r.generations,
        r.wall_time_s,
        r.relative_distance,
        r.k_prime,
        dir.display()
    );
    if let Some(p) = &r.recovered_params {
        let w: Vec<String> = p.iter().map(|w| format!("{w:.4}")).collect();
        println!("widths (nm): {}", w.join(","));
    }
    if reveal_key {
        if let Some(k) = &r.recovered_key {
            println!("recovered key: {k}");
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
