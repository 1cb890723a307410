use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;

use lts_core::io::{self, RunRecord};
use lts_core::solver::{self, NEVER};
use lts_core::tree::binomial;
use lts_core::{benchmark_suite, generate, solve, Contamination, GenSpec, LtsError, Mode, SolverConfig};

#[derive(Parser)]
#[command(name = "lts", version, about = "Least Trimmed Squares regression by branch and bound")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (data.csv) and its ground truth (truth.json).
    Gen(GenArgs),
    /// Fit LTS to a CSV file and print a JSON run record.
    Fit(FitArgs),
    /// Compare S-BB and BBA on a grid of synthetic datasets; prints CSV.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long = "type", default_value = "high-leverage")]
    contamination: Contamination,
    #[arg(long, default_value_t = 10)]
    outliers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 10.0)]
    shift: f64,
    #[arg(long, default_value_t = 5.0)]
    laplace_scale: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value = "sbb")]
    mode: Mode,
    /// Coverage; defaults to floor(n/2) + floor((d+1)/2).
    #[arg(long)]
    h: Option<usize>,
    /// Mass for the Pi estimate; defaults to d/2.
    #[arg(long)]
    q: Option<f64>,
    /// Solve relaxations at nodes with more leaves than this; "inf" disables them.
    #[arg(long, value_parser = parse_threshold, default_value = "1000000")]
    threshold: u64,
    /// Deepest tree level with relaxations; defaults to d.
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = lts_core::socp::DEFAULT_TOL)]
    tol_relax: f64,
    #[arg(long, default_value_t = lts_core::pi::DEFAULT_TOL)]
    tol_pi: f64,
    /// Also prune on inconsistent relaxations (may lose optimality).
    #[arg(long)]
    unsafe_inconsistent_prune: bool,
    /// Force local search on or off; by default it runs in sbb mode only.
    #[arg(long)]
    local_search: Option<bool>,
    #[arg(long, default_value_t = lts_core::local_search::DEFAULT_MAX_ITER)]
    max_cstep_iter: usize,
}

impl SolverArgs {
    fn config(&self, mode: Mode) -> SolverConfig {
        let mut cfg = SolverConfig::new(mode);
        cfg.h = self.h;
        cfg.q = self.q;
        cfg.socp_leaf_threshold = self.threshold;
        cfg.socp_max_depth = self.max_depth;
        cfg.tol_relax = self.tol_relax;
        cfg.tol_pi = self.tol_pi;
        cfg.unsafe_inconsistent_prune = self.unsafe_inconsistent_prune;
        if let Some(on) = self.local_search {
            cfg.local_search = on;
        }
        cfg.max_cstep_iter = self.max_cstep_iter;
        cfg
    }
}

#[derive(Args)]
struct FitArgs {
    data: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    d: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "high-leverage,heavy-tail")]
    types: Vec<Contamination>,
    #[arg(long, default_value_t = 25)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    outliers: usize,
    /// Run the exhaustive oracle when C(n, h) is at most this.
    #[arg(long, default_value_t = 20_000)]
    brute_limit: u64,
    #[command(flatten)]
    solver: SolverArgs,
}

fn parse_threshold(s: &str) -> Result<u64, String> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "never" => Ok(NEVER),
        other => {
            let v: f64 = other.parse().map_err(|_| format!("'{s}' is not a count or 'inf'"))?;
            if v >= 0.0 && v.fract() == 0.0 && v < NEVER as f64 {
                Ok(v as u64)
            } else {
                Err(format!("'{s}' is not a non-negative integer"))
            }
        }
    }
}

fn exit_code(e: &LtsError) -> u8 {
    match e {
        LtsError::Parse(_) | LtsError::InvalidData(_) | LtsError::InvalidSpec(_) | LtsError::Io(_) => 2,
        LtsError::InfeasibleConfig(_) => 3,
        LtsError::RankDeficient | LtsError::RankDeficientData => 4,
        LtsError::NoConvergence(_) => 1,
    }
}

fn cmd_gen(args: &GenArgs) -> lts_core::Result<()> {
    let mut spec = GenSpec::new(args.n, args.d, args.contamination, args.seed).with_outliers(args.outliers);
    spec.noise_sd = args.noise_sd;
    spec.shift_magnitude = args.shift;
    spec.laplace_scale = args.laplace_scale;
    let (data, truth) = generate(&spec)?;
    std::fs::create_dir_all(&args.out_dir)?;
    std::fs::write(args.out_dir.join("data.csv"), io::write_csv(&data))?;
    std::fs::write(args.out_dir.join("truth.json"), io::write_truth(&truth))?;
    info!("wrote {} rows to {}", data.n(), args.out_dir.display());
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> lts_core::Result<()> {
    let data = io::read_csv(&args.data)?;
    let cfg = args.solver.config(args.solver.mode);
    let report = solve(&data, &cfg)?;
    println!("{}", RunRecord::new(&data, &cfg, &report).to_json());
    Ok(())
}

struct Outcome {
    sbb: solver::SolveReport,
    bba: solver::SolveReport,
    brute: Option<f64>,
}

fn matches(objective: f64, optimum: f64) -> bool {
    objective <= optimum * (1.0 + 1e-9) + 1e-12
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

fn cmd_bench(args: &BenchArgs) -> lts_core::Result<()> {
    if args.n.is_empty() || args.d.is_empty() || args.types.is_empty() || args.reps == 0 {
        return Err(LtsError::InvalidSpec("grid must be nonempty and reps >= 1".into()));
    }
    let suite = benchmark_suite(&args.n, &args.d, &args.types, args.reps, args.seed, args.outliers)?;
    let sbb_cfg = args.solver.config(Mode::Sbb);
    let bba_cfg = args.solver.config(Mode::Bba);
    let brute_cfg = args.solver.config(Mode::Brute);

    let run = || -> lts_core::Result<Vec<Outcome>> {
        suite
            .par_iter()
            .map(|item| {
                let (n, d) = (item.data.n(), item.data.d());
                let h = sbb_cfg.coverage(n, d);
                let brute = if binomial(n, h) <= args.brute_limit as u128 {
                    Some(solve(&item.data, &brute_cfg)?.objective)
                } else {
                    None
                };
                Ok(Outcome { sbb: solve(&item.data, &sbb_cfg)?, bba: solve(&item.data, &bba_cfg)?, brute })
            })
            .collect()
    };
    let outcomes = match std::env::var("LTS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| LtsError::InvalidSpec(format!("LTS_THREADS: {e}")))?
            .install(run)?,
        None => run()?,
    };

    let mut out = String::from(
        "n,d,type,reps,h,sbb_mean_nodes,bba_mean_nodes,sbb_mean_socp_calls,sbb_mean_socp_prunes,\
         sbb_inconsistent_fraction,sbb_mean_secs,bba_mean_secs,brute_runs,sbb_success,bba_success\n",
    );
    for (items, results) in suite.chunks(args.reps).zip(outcomes.chunks(args.reps)) {
        let spec = &items[0].spec;
        let calls: u64 = results.iter().map(|r| r.sbb.socp_calls).sum();
        let inconsistent: u64 = results.iter().map(|r| r.sbb.inconsistent_relaxations).sum();
        let oracle: Vec<_> = results.iter().filter_map(|r| r.brute.map(|b| (r, b))).collect();
        let rate =
            |pick: fn(&Outcome) -> f64| mean(oracle.iter().map(|(r, b)| if matches(pick(r), *b) { 1.0 } else { 0.0 }));
        let inconsistent_fraction = if calls == 0 { 0.0 } else { inconsistent as f64 / calls as f64 };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            spec.n,
            spec.d,
            spec.contamination.name(),
            results.len(),
            results[0].sbb.h,
            mean(results.iter().map(|r| r.sbb.nodes_visited as f64)),
            mean(results.iter().map(|r| r.bba.nodes_visited as f64)),
            mean(results.iter().map(|r| r.sbb.socp_calls as f64)),
            mean(results.iter().map(|r| r.sbb.socp_prunes as f64)),
            inconsistent_fraction,
            mean(results.iter().map(|r| r.sbb.elapsed.as_secs_f64())),
            mean(results.iter().map(|r| r.bba.elapsed.as_secs_f64())),
            oracle.len(),
            if oracle.is_empty() { String::new() } else { rate(|r| r.sbb.objective).to_string() },
            if oracle.is_empty() { String::new() } else { rate(|r| r.bba.objective).to_string() },
        )
        .unwrap();
    }
    print!("{out}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lts: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
