use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{Network, PerExampleGrads};
use crate::strategies::{compare_strategies, per_example_grads, EquivalenceReport, GradientRequest, StrategyKind};
use crate::tensor::Tensor;

/// Absolute tolerance of the first-batch cross-strategy spot check.
const SPOT_CHECK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub strategies: Vec<StrategyKind>,
    pub batch_size: usize,
    /// Batches timed per repeat.
    pub n_batches: usize,
    pub repeats: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            strategies: StrategyKind::ALL.to_vec(),
            batch_size: 8,
            n_batches: 20,
            repeats: 10,
            seed: 0,
            workers: 1,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategies selected".into()));
        }
        if self.batch_size == 0 || self.n_batches == 0 || self.repeats == 0 || self.workers == 0 {
            return Err(Error::Config(
                "batch size, batches, repeats and workers must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Architecture fields copied into every record.
#[derive(Debug, Clone, PartialEq)]
pub struct NetDescriptor {
    pub n_layers: usize,
    pub channel_rate: f64,
    pub kernel: usize,
    pub input_shape: Vec<usize>,
}

/// Wall time of `batches` gradient computations for one strategy and repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub strategy: StrategyKind,
    pub n_layers: usize,
    pub channel_rate: f64,
    pub kernel: usize,
    pub batch: usize,
    pub input_shape: Vec<usize>,
    pub repeat: usize,
    pub batches: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub records: Vec<BenchRecord>,
    /// Strategies that errored; their records are absent.
    pub failures: Vec<(StrategyKind, String)>,
    /// Cross-strategy comparison on the warm-up batch.
    pub spot_check: Option<EquivalenceReport>,
}

impl BenchOutcome {
    pub fn mean_seconds(&self, strategy: StrategyKind) -> Option<f64> {
        let secs: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.strategy == strategy)
            .map(|r| r.seconds)
            .collect();
        (!secs.is_empty()).then(|| secs.iter().sum::<f64>() / secs.len() as f64)
    }
}

/// Deterministic random input batch `index` of repeat `repeat`.
pub fn input_batch(seed: u64, repeat: usize, index: usize, dims: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((repeat as u64) << 32) | index as u64);
    Tensor::random_normal(dims, 1.0, &mut rng)
}

/// Times every strategy in `cfg` on identical input streams.
///
/// Each strategy first runs one untimed warm-up batch (batch 0 of repeat 0);
/// those gradients are compared across strategies afterwards. Timing covers
/// only the gradient calls, not input generation.
pub fn run_benchmark(net: &Network, desc: &NetDescriptor, cfg: &BenchConfig) -> Result<BenchOutcome> {
    cfg.validate()?;
    let mut dims = vec![cfg.batch_size];
    dims.extend_from_slice(net.input_dims());

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut warm: Vec<(StrategyKind, PerExampleGrads)> = Vec::new();

    for &strategy in &cfg.strategies {
        let run = |x: &Tensor| {
            per_example_grads(&GradientRequest::new(net, x, strategy).with_workers(cfg.workers))
        };
        let outcome = (|| -> Result<Vec<BenchRecord>> {
            warm.push((strategy, run(&input_batch(cfg.seed, 0, 0, &dims))?));
            let mut out = Vec::with_capacity(cfg.repeats);
            for repeat in 0..cfg.repeats {
                let mut seconds = 0.0;
                for index in 0..cfg.n_batches {
                    let x = input_batch(cfg.seed, repeat, index, &dims);
                    let start = Instant::now();
                    let g = run(&x)?;
                    seconds += start.elapsed().as_secs_f64();
                    drop(g);
                }
                out.push(BenchRecord {
                    strategy,
                    n_layers: desc.n_layers,
                    channel_rate: desc.channel_rate,
                    kernel: desc.kernel,
                    batch: cfg.batch_size,
                    input_shape: desc.input_shape.clone(),
                    repeat,
                    batches: cfg.n_batches,
                    seconds,
                });
            }
            Ok(out)
        })();
        match outcome {
            Ok(r) => records.extend(r),
            Err(e) => failures.push((strategy, e.to_string())),
        }
    }

    let spot_check = if warm.len() > 1 {
        let refs: Vec<_> = warm.iter().map(|(k, g)| (*k, g)).collect();
        Some(compare_strategies(&refs, SPOT_CHECK_TOL)?)
    } else {
        None
    };
    Ok(BenchOutcome {
        records,
        failures,
        spot_check,
    })
}
