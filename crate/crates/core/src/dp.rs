//! Per-example clipping, noisy aggregation and a DP-SGD update step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::layers::{Grads, Network, PerExampleGrads};
use crate::strategies::{per_example_grads, GradientRequest, StrategyKind};
use crate::tensor::Tensor;

/// Maximum per-example gradient norm `C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    pub max_norm: f64,
}

impl ClipConfig {
    pub fn new(max_norm: f64) -> Result<Self> {
        if !(max_norm > 0.0) {
            return Err(Error::Config(format!("clip norm must be positive, got {max_norm}")));
        }
        Ok(ClipConfig { max_norm })
    }
}

/// Gaussian noise with standard deviation `sigma * C` per coordinate, from a seeded ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::Config(format!("noise multiplier must be non-negative, got {sigma}")));
        }
        Ok(NoiseConfig { sigma, seed })
    }

    pub fn none() -> Self {
        NoiseConfig { sigma: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
}

impl OptimizerState {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        Ok(OptimizerState { learning_rate })
    }
}

/// Each example's L2 norm over all of its parameter gradients together.
pub fn per_example_norm(g: &PerExampleGrads) -> Tensor {
    let batch = g.batch();
    let mut sq = vec![0.0; batch];
    for t in g.tensors() {
        let row = t.numel() / batch.max(1);
        for (s, chunk) in sq.iter_mut().zip(t.data().chunks_exact(row.max(1))) {
            *s += chunk.iter().map(|v| v * v).sum::<f64>();
        }
    }
    Tensor::new([batch], sq.into_iter().map(f64::sqrt).collect()).expect("one norm per example")
}

/// Scales example `b` by `1 / max(1, ||g[b]|| / C)`; examples within the bound are left untouched.
pub fn clip(g: &PerExampleGrads, cfg: &ClipConfig) -> PerExampleGrads {
    let norms = per_example_norm(g);
    let divisors: Vec<f64> = norms
        .data()
        .iter()
        .map(|&n| f64::max(1.0, n / cfg.max_norm))
        .collect();
    let mut out = g.clone();
    let batch = g.batch();
    for p in out.params_mut() {
        for t in std::iter::once(&mut p.weight).chain(p.bias.as_mut()) {
            let row = t.numel() / batch.max(1);
            for (chunk, &div) in t.data_mut().chunks_exact_mut(row.max(1)).zip(&divisors) {
                if div > 1.0 {
                    chunk.iter_mut().for_each(|v| *v /= div);
                }
            }
        }
    }
    out
}

/// `(sum_b g[b] + N(0, sigma^2 C^2 I)) / B`.
///
/// Noise is drawn in parameter order (layers in forward order, weight before
/// bias, row-major within each tensor). With `sigma == 0` no noise is drawn.
pub fn aggregate(clipped: &PerExampleGrads, clip_cfg: &ClipConfig, noise: &NoiseConfig) -> Result<Grads> {
    let batch = clipped.batch() as f64;
    let mut sum = clipped.sum_over_batch()?;
    let std_dev = noise.sigma * clip_cfg.max_norm;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    for t in sum.tensors_mut() {
        for v in t.data_mut() {
            if std_dev > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += std_dev * z;
            }
            *v /= batch;
        }
    }
    Ok(sum)
}

/// Everything a single DP-SGD step needs besides the network and batch.
#[derive(Debug, Clone, Copy)]
pub struct DpStep {
    pub strategy: StrategyKind,
    pub workers: usize,
    pub clip: ClipConfig,
    pub noise: NoiseConfig,
    pub optimizer: OptimizerState,
}

/// `theta <- theta - lr * aggregate(clip(per_example_grads))`, returned as a new network.
pub fn dp_sgd_step(net: &Network, batch: &Tensor, step: &DpStep) -> Result<Network> {
    let req = GradientRequest::new(net, batch, step.strategy).with_workers(step.workers);
    let g = per_example_grads(&req)?;
    let update = aggregate(&clip(&g, &step.clip), &step.clip, &step.noise)?;
    let mut next = net.clone();
    next.apply_update(&update, step.optimizer.learning_rate)?;
    Ok(next)
}
