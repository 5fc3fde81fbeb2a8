//! Three interchangeable ways of computing per-example gradients.
//!
//! * [`StrategyKind::Naive`] loops over the batch, running a batch-of-one
//!   forward and backward pass per example.
//! * [`StrategyKind::Crb`] runs one batched forward pass and one batched
//!   backward pass, and reads per-example weight gradients off each layer's
//!   cached input and output gradient.
//! * [`StrategyKind::Multi`] runs one replica per example over a shared,
//!   read-only parameter set, spread over a pool of worker threads.

use std::fmt;
use std::str::FromStr;
use std::thread;

use crate::error::{Error, Result};
use crate::layers::{
    aggregate_backward, forward, loss_gradient, per_example_backward, Grads, Network,
    PerExampleGrads,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    Naive,
    Crb,
    Multi,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Naive, StrategyKind::Crb, StrategyKind::Multi];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Naive => "naive",
            StrategyKind::Crb => "crb",
            StrategyKind::Multi => "multi",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "naive" => Ok(StrategyKind::Naive),
            "crb" => Ok(StrategyKind::Crb),
            "multi" => Ok(StrategyKind::Multi),
            other => Err(Error::Config(format!(
                "unknown strategy `{other}` (expected naive, crb or multi)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradientRequest<'a> {
    pub network: &'a Network,
    /// `[B, input_dims...]` with `B >= 1`.
    pub input: &'a Tensor,
    pub strategy: StrategyKind,
    /// Worker threads for `multi`; clamped to `[1, B]`.
    pub workers: usize,
}

impl<'a> GradientRequest<'a> {
    pub fn new(network: &'a Network, input: &'a Tensor, strategy: StrategyKind) -> Self {
        GradientRequest {
            network,
            input,
            strategy,
            workers: 1,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

/// Gradients plus the number of forward passes spent producing them.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub grads: PerExampleGrads,
    pub forward_passes: usize,
}

pub fn per_example_grads(req: &GradientRequest<'_>) -> Result<PerExampleGrads> {
    run_strategy(req).map(|r| r.grads)
}

pub fn run_strategy(req: &GradientRequest<'_>) -> Result<StrategyRun> {
    let batch = req.input.batch();
    if req.input.rank() == 0 || batch == 0 {
        return Err(Error::Shape("gradient request needs at least one example".into()));
    }
    match req.strategy {
        StrategyKind::Naive => {
            let examples = (0..batch)
                .map(|b| single_example(req.network, req.input, b))
                .collect::<Result<Vec<_>>>()?;
            Ok(StrategyRun {
                grads: PerExampleGrads::from_examples(&examples)?,
                forward_passes: batch,
            })
        }
        StrategyKind::Crb => {
            let (out, cache) = forward(req.network, req.input)?;
            let grads = per_example_backward(req.network, &cache, &loss_gradient(&out))?;
            Ok(StrategyRun {
                grads,
                forward_passes: 1,
            })
        }
        StrategyKind::Multi => {
            let workers = req.workers.clamp(1, batch);
            let examples = replicas(req.network, req.input, workers)?;
            Ok(StrategyRun {
                grads: PerExampleGrads::from_examples(&examples)?,
                forward_passes: batch,
            })
        }
    }
}

/// Batch-summed gradient of one example run as a batch of one.
fn single_example(net: &Network, input: &Tensor, b: usize) -> Result<Grads> {
    let x = input.slice_batch(b..b + 1)?;
    let (out, cache) = forward(net, &x)?;
    aggregate_backward(net, &cache, &loss_gradient(&out))
}

/// Worker `w` handles examples `w, w + workers, ...`; results land in example order.
fn replicas(net: &Network, input: &Tensor, workers: usize) -> Result<Vec<Grads>> {
    let batch = input.batch();
    if workers == 1 {
        return (0..batch).map(|b| single_example(net, input, b)).collect();
    }
    let per_worker: Vec<Vec<(usize, Result<Grads>)>> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..batch)
                        .step_by(workers)
                        .map(|b| (b, single_example(net, input, b)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replica worker panicked"))
            .collect()
    });
    let mut slots: Vec<Option<Result<Grads>>> = (0..batch).map(|_| None).collect();
    for (b, r) in per_worker.into_iter().flatten() {
        slots[b] = Some(r);
    }
    slots
        .into_iter()
        .map(|s| s.unwrap_or_else(|| Err(Error::Internal("replica result missing".into()))))
        .collect()
}

/// Largest deviation between two strategies on one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Deviation {
    pub layer: usize,
    pub pair: (StrategyKind, StrategyKind),
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub tol: f64,
    pub deviations: Vec<Deviation>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.deviations.iter().all(|d| d.max_abs <= self.tol)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Deviation> {
        self.deviations.iter().filter(|d| !(d.max_abs <= self.tol))
    }

    pub fn max_deviation(&self) -> f64 {
        self.deviations.iter().map(|d| d.max_abs).fold(0.0, f64::max)
    }
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.deviations {
            writeln!(
                f,
                "layer {:>2} {:>5} vs {:<5} max |diff| = {:.3e}{}",
                d.layer,
                d.pair.0,
                d.pair.1,
                d.max_abs,
                if d.max_abs <= self.tol { "" } else { "  FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Pairwise per-layer comparison of already computed strategy outputs.
pub fn compare_strategies(
    results: &[(StrategyKind, &PerExampleGrads)],
    tol: f64,
) -> Result<EquivalenceReport> {
    let mut deviations = Vec::new();
    for (i, (ka, ga)) in results.iter().enumerate() {
        for (kb, gb) in &results[i + 1..] {
            for (p, max_abs) in ga.params().iter().zip(ga.max_abs_diff(gb)?) {
                deviations.push(Deviation {
                    layer: p.layer,
                    pair: (*ka, *kb),
                    max_abs,
                });
            }
        }
    }
    Ok(EquivalenceReport { tol, deviations })
}

/// Runs all three strategies on `batch` and compares them pairwise.
pub fn verify_equivalence(
    net: &Network,
    batch: &Tensor,
    tol: f64,
    workers: usize,
) -> Result<EquivalenceReport> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    let runs = StrategyKind::ALL
        .iter()
        .map(|&k| {
            per_example_grads(&GradientRequest::new(net, batch, k).with_workers(workers)).map(|g| (k, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = runs.iter().map(|(k, g)| (*k, g)).collect();
    compare_strategies(&refs, tol)
}
