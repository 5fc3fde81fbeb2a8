use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pergrad::bench::{
    build_toy_net, run_benchmark, run_check, write_csv, write_csv_to, BenchConfig, BenchOutcome,
    BenchRecord, NetDescriptor, Preset, ToyNetConfig,
};
use pergrad::{Network, StrategyKind};

/// Per-example gradient benchmarks and checks for small CNNs.
#[derive(Parser, Debug)]
#[command(name = "pergrad", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Time each strategy on one network.
    Bench {
        #[command(flatten)]
        net: NetArgs,
        /// Named architecture instead of the toy network (alexnet-mini, vgg-mini).
        #[arg(long, value_parser = parse_preset)]
        preset: Option<Preset>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Time each strategy over a list of channel rates.
    Sweep {
        /// Channel rates to visit, e.g. 1,1.5,2.
        #[arg(long, value_delimiter = ',', required = true)]
        rates: Vec<f64>,
        #[command(flatten)]
        net: NetArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Time each strategy over a list of batch sizes.
    Batchsweep {
        /// Batch sizes to visit, e.g. 1,2,4,8,16.
        #[arg(long = "batches-sizes", alias = "batch-sizes", value_delimiter = ',', required = true)]
        batch_sizes: Vec<usize>,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, value_parser = parse_preset)]
        preset: Option<Preset>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the strategy-equivalence, batch-sum and finite-difference suites.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maximum allowed absolute deviation between strategies.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
    },
}

#[derive(Args, Debug)]
struct NetArgs {
    /// Number of convolution layers.
    #[arg(long, default_value_t = 3)]
    layers: usize,
    /// Ratio of channel counts between consecutive convolutions.
    #[arg(long, default_value_t = 1.0)]
    channel_rate: f64,
    /// Channels of the first convolution.
    #[arg(long, default_value_t = 8)]
    base_channels: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    /// Per-example input shape as CxHxW.
    #[arg(long, default_value = "3x32x32", value_parser = parse_shape)]
    input: InputShape,
    /// Insert a 2x2 max-pool after every this many convolutions.
    #[arg(long, default_value_t = 2)]
    pool_every: usize,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, value_delimiter = ',', default_value = "naive,crb,multi", value_parser = parse_strategy)]
    strategies: Vec<StrategyKind>,
    /// Timed batches per repeat.
    #[arg(long, default_value_t = 20)]
    batches: usize,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for the multi strategy.
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone)]
struct InputShape(Vec<usize>);

fn parse_shape(s: &str) -> Result<InputShape, String> {
    let dims = s
        .split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if dims.len() != 3 || dims.contains(&0) {
        return Err(format!("expected CxHxW with three positive extents, got `{s}`"));
    }
    Ok(InputShape(dims))
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    s.parse().map_err(|e: pergrad::Error| e.to_string())
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: pergrad::Error| e.to_string())
}

impl NetArgs {
    fn toy(&self, channel_rate: f64, seed: u64) -> ToyNetConfig {
        ToyNetConfig {
            n_layers: self.layers,
            base_channels: self.base_channels,
            channel_rate,
            kernel_size: self.kernel,
            input_shape: self.input.0.clone(),
            pool_every: self.pool_every,
            seed,
            ..ToyNetConfig::default()
        }
    }

    fn network(&self, preset: Option<Preset>, seed: u64) -> pergrad::Result<(Network, NetDescriptor)> {
        match preset {
            Some(p) => Ok((p.build(&self.input.0, seed)?, p.descriptor(&self.input.0))),
            None => {
                let cfg = self.toy(self.channel_rate, seed);
                Ok((build_toy_net(&cfg)?, cfg.descriptor()))
            }
        }
    }
}

impl RunArgs {
    fn config(&self, batch_size: usize) -> BenchConfig {
        BenchConfig {
            strategies: self.strategies.clone(),
            batch_size,
            n_batches: self.batches,
            repeats: self.repeats,
            seed: self.seed,
            workers: self.workers,
        }
    }
}

/// Prints a per-strategy summary to stderr; returns false when anything went wrong.
fn report(label: &str, outcome: &BenchOutcome) -> bool {
    let mut ok = true;
    for &k in &StrategyKind::ALL {
        if let Some(mean) = outcome.mean_seconds(k) {
            eprintln!("{label} {k:>5}: {mean:.4} s mean per repeat");
        }
    }
    if let (Some(naive), Some(crb)) = (
        outcome.mean_seconds(StrategyKind::Naive),
        outcome.mean_seconds(StrategyKind::Crb),
    ) {
        eprintln!("{label} naive/crb time ratio: {:.3}", naive / crb);
    }
    for (k, msg) in &outcome.failures {
        eprintln!("{label} strategy {k} failed: {msg}");
        ok = false;
    }
    if let Some(spot) = &outcome.spot_check {
        if !spot.passed() {
            eprintln!("{label} first-batch strategy mismatch:\n{spot}");
            ok = false;
        }
    }
    ok
}

fn emit(records: &[BenchRecord], out: &Option<PathBuf>) -> pergrad::Result<()> {
    match out {
        Some(path) => write_csv(records, path),
        None => write_csv_to(records, io::stdout().lock()).map_err(|source| pergrad::Error::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}

fn run(cli: Cli) -> pergrad::Result<bool> {
    match cli.command {
        Command::Bench { net, preset, run } => {
            let (network, desc) = net.network(preset, run.seed)?;
            let outcome = run_benchmark(&network, &desc, &run.config(run.batch))?;
            let ok = report(&format!("batch {}", run.batch), &outcome);
            emit(&outcome.records, &run.out)?;
            Ok(ok)
        }
        Command::Sweep { rates, net, run } => {
            let mut records = Vec::new();
            let mut ok = true;
            for rate in rates {
                let cfg = net.toy(rate, run.seed);
                let network = build_toy_net(&cfg)?;
                let outcome = run_benchmark(&network, &cfg.descriptor(), &run.config(run.batch))?;
                ok &= report(&format!("rate {rate}"), &outcome);
                records.extend(outcome.records);
            }
            emit(&records, &run.out)?;
            Ok(ok)
        }
        Command::Batchsweep {
            batch_sizes,
            net,
            preset,
            run,
        } => {
            let (network, desc) = net.network(preset, run.seed)?;
            let mut records = Vec::new();
            let mut ok = true;
            for b in batch_sizes {
                let outcome = run_benchmark(&network, &desc, &run.config(b))?;
                ok &= report(&format!("batch {b}"), &outcome);
                records.extend(outcome.records);
            }
            emit(&records, &run.out)?;
            Ok(ok)
        }
        Command::Check { seed, tol, workers } => {
            let summary = run_check(seed, tol, workers.max(1))?;
            println!("{summary}");
            Ok(summary.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
