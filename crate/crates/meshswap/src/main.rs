use clap::{Args, Parser, Subcommand};
use meshswap::config::{Mode, RunConfig};
use meshswap::harness::{run_coupled_states, sweep_exchange};
use meshswap::report::{exchange_report_csv, linear_fit, run_report_csv, sweep_csv};
use meshswap::snapshot::ForestSnapshot;
use meshswap::verify;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const CSV_SCHEMAS: &str = "\
CSV schemas (all files carry a header row):
  run_report.csv:        sync_index,t_sync,steps_p,steps_c,producer_patches,\
consumer_patches,queries,found,exchange_wall_s,step_wall_p_s,step_wall_c_s
  exchange_*.csv:        round,queries_sent,found,unmatched,batches,wall_seconds
  sweep.csv:             consumer_patches,queries_sent,avg_exchange_wall_s
All columns except the wall-clock timings are deterministic for a fixed
config and seed.";

/// Interpolation-based data exchange between two independently partitioned
/// adaptive meshes, driven by simulated ranks.
#[derive(Parser)]
#[command(name = "meshswap", version, about, after_help = CSV_SCHEMAS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for reports and snapshots.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the simulated rank count.
    #[arg(long)]
    ranks: Option<usize>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the dimensional mixing mode (2d, 3d, 3d-extruded).
    #[arg(long)]
    mode: Option<Mode>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the coupled synchronization loop and write reports plus final
    /// mesh snapshots.
    #[command(after_help = CSV_SCHEMAS)]
    Run(CommonArgs),
    /// Static-snapshot scaling sweep: scale the consumer patch count by each
    /// multiplier and fit exchange cost against patch count.
    #[command(after_help = CSV_SCHEMAS)]
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated patch-count multipliers (at least 3, increasing).
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        multipliers: Vec<usize>,
    },
    /// Run the built-in verification checks.
    Verify {
        /// Seed for the randomized checks.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("MESHSWAP_LOG")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep {
            common,
            multipliers,
        } => cmd_sweep(&common, &multipliers),
        Command::Verify { seed } => return cmd_verify(seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(args: &CommonArgs) -> meshswap::Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default_for_mode(args.mode.unwrap_or(Mode::TwoD)),
    };
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if let Some(ranks) = args.ranks {
        config.ranks = ranks;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn write(path: &Path, contents: &str) -> meshswap::Result<()> {
    std::fs::write(path, contents)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn cmd_run(args: &CommonArgs) -> meshswap::Result<()> {
    let config = load_config(args)?;
    let (report, producer, consumer) = run_coupled_states(&config)?;
    std::fs::create_dir_all(&args.out)?;
    write(
        &args.out.join("run_report.csv"),
        &run_report_csv(&report.records),
    )?;
    write(
        &args.out.join("exchange_forward.csv"),
        &exchange_report_csv(&report.forward_reports),
    )?;
    write(
        &args.out.join("exchange_reverse.csv"),
        &exchange_report_csv(&report.reverse_reports),
    )?;
    write(
        &args.out.join("producer_forest.json"),
        &ForestSnapshot::from_forest(&producer.forest).to_json(),
    )?;
    write(
        &args.out.join("consumer_forest.json"),
        &ForestSnapshot::from_forest(&consumer.forest).to_json(),
    )?;
    let last = report.records.last();
    println!(
        "completed {} synchronizations, final meshes: producer {} patches, consumer {} patches",
        report.records.len(),
        last.map_or(0, |r| r.producer_patches),
        last.map_or(0, |r| r.consumer_patches),
    );
    Ok(())
}

fn cmd_sweep(args: &CommonArgs, multipliers: &[usize]) -> meshswap::Result<()> {
    let config = load_config(args)?;
    let points = sweep_exchange(&config, multipliers)?;
    std::fs::create_dir_all(&args.out)?;
    write(&args.out.join("sweep.csv"), &sweep_csv(&points))?;
    let xs: Vec<f64> = points.iter().map(|p| p.consumer_patches as f64).collect();
    let queries: Vec<f64> = points.iter().map(|p| p.queries_sent as f64).collect();
    let wall: Vec<f64> = points.iter().map(|p| p.avg_exchange_wall_s).collect();
    let qfit = linear_fit(&xs, &queries);
    let wfit = linear_fit(&xs, &wall);
    println!(
        "sweep over {} points: patches {}..{}",
        points.len(),
        points.first().unwrap().consumer_patches,
        points.last().unwrap().consumer_patches,
    );
    println!(
        "queries vs patches: slope {:.2}, r^2 {:.4}",
        qfit.slope, qfit.r_squared
    );
    println!(
        "exchange wall time vs patches: slope {:.3e} s/patch, r^2 {:.4}",
        wfit.slope, wfit.r_squared
    );
    Ok(())
}

fn cmd_verify(seed: u64) -> ExitCode {
    let mut failed = false;
    for check in verify::run_all(seed) {
        let status = if check.passed { "pass" } else { "FAIL" };
        println!("[{status}] {}: {}", check.name, check.detail);
        failed |= !check.passed;
    }
    if failed {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}
