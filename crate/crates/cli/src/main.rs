//! Command-line front end: parse a config (file plus flag overrides), run a
//! single simulation or a one-key sweep, write metrics CSVs, print a
//! summary.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use gossip_sim::harness::train_with;
use gossip_sim::metrics::{MetricsRecord, CSV_HEADER};
use gossip_sim::{RunConfig, SimError, SimResult};

#[derive(Parser)]
#[command(
    name = "gossip-sim",
    version,
    about = "Simulate decentralized parameter-averaging protocols on a synthetic cluster"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write a metrics CSV.
    Run(RunArgs),
    /// Re-run a base configuration varying one key; writes one CSV per
    /// value plus an index file of final metrics.
    Sweep(SweepArgs),
}

/// Every run-config key as an optional flag. Values given on the command
/// line override values from --config, which override built-in defaults.
#[derive(Args)]
struct ConfigArgs {
    /// Config file with one key=value per line; '#' starts a comment
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Protocol: crossover, hier-crossover, sgp-pushsum, ring, allreduce [default: crossover]
    #[arg(long)]
    method: Option<String>,
    /// Simulated worker count [default: 8]
    #[arg(long)]
    workers: Option<usize>,
    /// Communication segments the model is fused into [default: 4]
    #[arg(long)]
    segments: Option<usize>,
    /// Simulation rounds [default: 200]
    #[arg(long)]
    rounds: Option<u64>,
    /// Master seed; the only entropy source anywhere [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Workers per group for hier-crossover [default: 4]
    #[arg(long)]
    group_size: Option<usize>,
    /// Model size in elements [default: 64]
    #[arg(long)]
    dim: Option<usize>,
    /// Synthetic layer count [default: 8]
    #[arg(long)]
    layers: Option<usize>,
    /// Gradient accumulations per communication round [default: 1]
    #[arg(long)]
    comm_interval: Option<usize>,
    /// Base learning rate [default: 0.05]
    #[arg(long)]
    lr: Option<f64>,
    /// Momentum factor in [0, 1) [default: 0.96]
    #[arg(long)]
    momentum: Option<f64>,
    /// Weight decay [default: 5e-5]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Layer-wise scaling coefficient, 0 disables [default: 0.0025]
    #[arg(long)]
    lars_coeff: Option<f64>,
    /// Linear warmup length in epochs, 0 disables [default: 0]
    #[arg(long)]
    warmup_epochs: Option<usize>,
    /// Simulation rounds per epoch for the warmup schedule [default: 100]
    #[arg(long)]
    rounds_per_epoch: Option<u64>,
    /// Numerical stabilizer in the scaling denominator [default: 1e-9]
    #[arg(long)]
    epsilon: Option<f64>,
    /// Link latency in seconds per message [default: 1e-4, cloud preset]
    #[arg(long)]
    latency: Option<f64>,
    /// Link bandwidth in bytes per second [default: 390625000, cloud preset]
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Wire bytes per element: 2, 4, or 8 [default: 4]
    #[arg(long)]
    element_size: Option<usize>,
    /// Topology-computation surcharge per segment, seconds [default: 0]
    #[arg(long)]
    topo_overhead: Option<f64>,
    /// Where to write the metrics CSV [default: metrics.csv]
    #[arg(long)]
    output_path: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,

    /// Config key to vary (any key except output_path)
    #[arg(long, value_name = "KEY")]
    vary: String,
    /// Comma-separated values for the varied key
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Directory for the per-value CSVs and the index file
    #[arg(long, default_value = ".")]
    output_dir: PathBuf,
}

/// Defaults, then config file, then flags. Does not validate; callers
/// validate once the final shape is known.
fn merge_config(args: &ConfigArgs) -> SimResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| SimError::InvalidConfig {
            key: "config".into(),
            reason: format!("cannot read {}: {e}", path.display()),
        })?;
        cfg.apply_config_text(&text)?;
    }
    if let Some(v) = &args.method {
        cfg.apply_kv("method", v)?;
    }
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = args.$field.clone() {
                cfg.$field = v;
            }
        };
    }
    take!(workers);
    take!(segments);
    take!(rounds);
    take!(seed);
    take!(group_size);
    take!(dim);
    take!(layers);
    take!(comm_interval);
    take!(lr);
    take!(momentum);
    take!(weight_decay);
    take!(lars_coeff);
    take!(warmup_epochs);
    take!(rounds_per_epoch);
    take!(epsilon);
    take!(latency);
    take!(bandwidth);
    take!(element_size);
    take!(topo_overhead);
    take!(output_path);
    Ok(cfg)
}

/// Runs one simulation, streaming rows to the CSV as they are produced so
/// partial metrics survive a mid-run failure. Returns the last record.
fn execute_run(cfg: &RunConfig) -> SimResult<Option<MetricsRecord>> {
    let file = File::create(&cfg.output_path)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{CSV_HEADER}")?;
    let mut last = None;
    let result = train_with(cfg, |rec| {
        writeln!(out, "{}", rec.to_csv_row())?;
        last = Some(rec.clone());
        Ok(())
    });
    out.flush()?;
    result?;
    Ok(last)
}

fn summary_line(label: &str, last: &Option<MetricsRecord>) -> String {
    match last {
        Some(r) => format!(
            "{label}final_loss={} final_consensus={} total_sim_time_s={}",
            r.global_loss, r.consensus_distance, r.sim_time_s
        ),
        None => format!("{label}final_loss=NaN final_consensus=NaN total_sim_time_s=0"),
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), (u8, SimError)> {
    let cfg = merge_config(&args.config).map_err(|e| (1, e))?;
    cfg.validate().map_err(|e| (1, e))?;
    let last = execute_run(&cfg).map_err(|e| (2, e))?;
    println!("{}", summary_line("", &last));
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), (u8, SimError)> {
    let base = merge_config(&args.config).map_err(|e| (1, e))?;
    if args.vary == "output_path" || args.vary == "config" {
        return Err((
            1,
            SimError::InvalidConfig {
                key: args.vary.clone(),
                reason: "key is not sweepable".into(),
            },
        ));
    }

    // resolve every run up front so all usage errors surface before any work
    let mut runs = Vec::with_capacity(args.values.len());
    for value in &args.values {
        let mut cfg = base.clone();
        cfg.apply_kv(&args.vary, value).map_err(|e| (1, e))?;
        cfg.output_path = args
            .output_dir
            .join(format!("run_{}_{}.csv", args.vary, value));
        cfg.validate().map_err(|e| (1, e))?;
        runs.push((value.clone(), cfg));
    }

    fs::create_dir_all(&args.output_dir).map_err(|e| (2, SimError::Io(e)))?;
    let mut index = String::from("value,final_loss,final_consensus,total_sim_time_s\n");
    for (value, cfg) in &runs {
        let last = execute_run(cfg).map_err(|e| (2, e))?;
        println!(
            "{}",
            summary_line(&format!("{}={value} ", args.vary), &last)
        );
        match &last {
            Some(r) => index.push_str(&format!(
                "{value},{},{},{}\n",
                r.global_loss, r.consensus_distance, r.sim_time_s
            )),
            None => index.push_str(&format!("{value},NaN,NaN,0\n")),
        }
    }
    let index_path = args.output_dir.join(format!("index_{}.csv", args.vary));
    fs::write(&index_path, index).map_err(|e| (2, SimError::Io(e)))?;
    println!("index written to {}", index_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, err)) => {
            eprintln!("error: {err}");
            ExitCode::from(code)
        }
    }
}
