//! Benchmark harness: toy CNN generator, presets, timing runner, CSV output
//! and the strategy-equivalence / finite-difference check suite.

mod csv_out;
mod runner;
mod suite;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{ConvLayer, DenseLayer, Layer, Network, PoolSpec};
use crate::tensor::ConvGeometry;

pub use csv_out::{format_seconds, write_csv, write_csv_to, CSV_HEADER};
pub use runner::{input_batch, run_benchmark, BenchConfig, BenchOutcome, BenchRecord, NetDescriptor};
pub use suite::{equivalence_sweep, run_check, CaseResult, CheckSummary, SweepCase};

/// Sequential CNN with geometrically growing channel counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNetConfig {
    pub n_layers: usize,
    /// Output channels of the first convolution.
    pub base_channels: usize,
    /// Ratio between the channel counts of consecutive convolutions.
    pub channel_rate: f64,
    pub kernel_size: usize,
    /// `(C, H, W)` of one example.
    pub input_shape: Vec<usize>,
    /// A 2x2 stride-2 max-pool follows every `pool_every`-th convolution.
    pub pool_every: usize,
    /// Width of the dense classifier head.
    pub classes: usize,
    pub seed: u64,
}

impl Default for ToyNetConfig {
    fn default() -> Self {
        ToyNetConfig {
            n_layers: 3,
            base_channels: 8,
            channel_rate: 1.0,
            kernel_size: 3,
            input_shape: vec![3, 32, 32],
            pool_every: 2,
            classes: 10,
            seed: 0,
        }
    }
}

impl ToyNetConfig {
    /// `round(base * rate^i)` with halves rounded up, at least 1.
    pub fn channel_counts(&self) -> Vec<usize> {
        (0..self.n_layers)
            .map(|i| {
                let c = self.base_channels as f64 * self.channel_rate.powi(i as i32);
                ((c + 0.5).floor() as usize).max(1)
            })
            .collect()
    }

    fn plan(&self) -> Vec<PlanStep> {
        let mut steps = Vec::new();
        for (i, &c) in self.channel_counts().iter().enumerate() {
            steps.push(PlanStep::Conv {
                out: c,
                kernel: self.kernel_size,
                stride: 1,
                padding: 0,
            });
            if self.pool_every > 0 && (i + 1) % self.pool_every == 0 {
                steps.push(PlanStep::Pool { window: 2, stride: 2 });
            }
        }
        steps.push(PlanStep::Dense { out: self.classes });
        steps
    }

    /// Checks counts and that no spatial axis collapses below a kernel or pool window.
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.base_channels == 0 || self.kernel_size == 0 || self.classes == 0 {
            return Err(Error::Config(
                "layers, base channels, kernel size and classes must be at least 1".into(),
            ));
        }
        if !(self.channel_rate > 0.0) || !self.channel_rate.is_finite() {
            return Err(Error::Config(format!(
                "channel rate must be positive, got {}",
                self.channel_rate
            )));
        }
        check_plan_extents(&self.input_shape, &self.plan())
    }

    pub fn descriptor(&self) -> NetDescriptor {
        NetDescriptor {
            n_layers: self.n_layers,
            channel_rate: self.channel_rate,
            kernel: self.kernel_size,
            input_shape: self.input_shape.clone(),
        }
    }
}

/// Builds the toy network with parameters drawn from `N(0, 1/fan_in)`.
pub fn build_toy_net(cfg: &ToyNetConfig) -> Result<Network> {
    cfg.validate()?;
    build_plan(&cfg.input_shape, &cfg.plan(), cfg.seed)
}

/// Scaled-down stand-ins for the two classic architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    AlexNetMini,
    VggMini,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alexnet-mini" => Ok(Preset::AlexNetMini),
            "vgg-mini" => Ok(Preset::VggMini),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected alexnet-mini or vgg-mini)"
            ))),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::AlexNetMini => "alexnet-mini",
            Preset::VggMini => "vgg-mini",
        }
    }

    fn plan(self) -> Vec<PlanStep> {
        use PlanStep::*;
        let conv = |out, kernel, stride, padding| Conv {
            out,
            kernel,
            stride,
            padding,
        };
        match self {
            // five convolutions, three overlapping pools, three dense layers
            Preset::AlexNetMini => vec![
                conv(8, 5, 2, 2),
                Pool { window: 3, stride: 2 },
                conv(16, 3, 1, 1),
                Pool { window: 3, stride: 2 },
                conv(24, 3, 1, 1),
                conv(16, 3, 1, 1),
                conv(16, 3, 1, 1),
                Pool { window: 3, stride: 2 },
                Dense { out: 32 },
                Dense { out: 32 },
                Dense { out: 10 },
            ],
            // thirteen 3x3 convolutions in blocks of 2, 2, 3, 3, 3, each block pooled
            Preset::VggMini => {
                let mut steps = Vec::new();
                for (reps, ch) in [(2, 4), (2, 8), (3, 16), (3, 16), (3, 16)] {
                    for _ in 0..reps {
                        steps.push(conv(ch, 3, 1, 1));
                    }
                    steps.push(Pool { window: 2, stride: 2 });
                }
                steps.extend([Dense { out: 32 }, Dense { out: 32 }, Dense { out: 10 }]);
                steps
            }
        }
    }

    pub fn build(self, input_shape: &[usize], seed: u64) -> Result<Network> {
        let plan = self.plan();
        check_plan_extents(input_shape, &plan)?;
        build_plan(input_shape, &plan, seed)
    }

    pub fn descriptor(self, input_shape: &[usize]) -> NetDescriptor {
        let plan = self.plan();
        let convs: Vec<usize> = plan
            .iter()
            .filter_map(|s| match s {
                PlanStep::Conv { kernel, .. } => Some(*kernel),
                _ => None,
            })
            .collect();
        NetDescriptor {
            n_layers: convs.len(),
            channel_rate: 0.0,
            kernel: convs[0],
            input_shape: input_shape.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum PlanStep {
    Conv {
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Pool {
        window: usize,
        stride: usize,
    },
    Dense {
        out: usize,
    },
}

fn check_plan_extents(input_shape: &[usize], plan: &[PlanStep]) -> Result<()> {
    if input_shape.len() != 3 || input_shape.iter().any(|&d| d == 0) {
        return Err(Error::Config(format!(
            "input shape must be CxHxW with positive extents, got {input_shape:?}"
        )));
    }
    let mut ext = [input_shape[1], input_shape[2]];
    for (i, step) in plan.iter().enumerate() {
        match *step {
            PlanStep::Conv {
                kernel,
                stride,
                padding,
                ..
            } => {
                for e in &mut ext {
                    if *e + 2 * padding < kernel {
                        return Err(Error::Config(format!(
                            "spatial extent {e} collapses below kernel {kernel} at step {i}"
                        )));
                    }
                    *e = (*e + 2 * padding - kernel) / stride + 1;
                }
            }
            PlanStep::Pool { window, stride } => {
                for e in &mut ext {
                    if *e < window {
                        return Err(Error::Config(format!(
                            "spatial extent {e} collapses below pool window {window} at step {i}"
                        )));
                    }
                    *e = (*e - window) / stride + 1;
                }
            }
            PlanStep::Dense { .. } => {}
        }
    }
    Ok(())
}

fn build_plan(input_shape: &[usize], plan: &[PlanStep], seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut dims = input_shape.to_vec();
    let mut flat = false;
    let mut shaped = 0;
    for step in plan {
        match *step {
            PlanStep::Conv {
                out,
                kernel,
                stride,
                padding,
            } => {
                let g = ConvGeometry::new(dims[0], out, [kernel, kernel])
                    .with_stride([stride, stride])
                    .with_padding([padding, padding]);
                let scale = 1.0 / ((dims[0] * kernel * kernel) as f64).sqrt();
                layers.push(Layer::Conv(ConvLayer::random(g, true, scale, &mut rng)));
                layers.push(Layer::Relu);
            }
            PlanStep::Pool { window, stride } => {
                layers.push(Layer::MaxPool(PoolSpec { window, stride }));
            }
            PlanStep::Dense { out } => {
                if !flat {
                    layers.push(Layer::Flatten);
                    flat = true;
                } else {
                    layers.push(Layer::Relu);
                }
                let inputs: usize = dims.iter().product();
                let scale = 1.0 / (inputs as f64).sqrt();
                layers.push(Layer::Dense(DenseLayer::random(inputs, out, true, scale, &mut rng)));
            }
        }
        for (i, layer) in layers.iter().enumerate().skip(shaped) {
            dims = layer.output_dims(&dims).map_err(|e| e.at_layer(i))?;
        }
        shaped = layers.len();
    }
    Network::new(input_shape.to_vec(), layers)
}
