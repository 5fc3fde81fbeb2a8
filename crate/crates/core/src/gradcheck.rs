//! Central finite-difference checks of per-example gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{forward, per_example_loss, Network, ParamKind, PerExampleGrads};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdTolerance {
    pub step: f64,
    pub rel: f64,
    /// Pass regardless of relative error when the absolute error is this small.
    pub abs: f64,
}

impl Default for FdTolerance {
    fn default() -> Self {
        FdTolerance {
            step: 1e-6,
            rel: 1e-5,
            abs: 1e-8,
        }
    }
}

impl FdTolerance {
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let err = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        err <= self.abs || err <= self.rel * scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdProbe {
    pub layer: usize,
    pub kind: ParamKind,
    pub index: usize,
    pub example: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub probes: Vec<FdProbe>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.probes.iter().all(|p| p.passed)
    }

    pub fn worst_rel_error(&self) -> f64 {
        self.probes
            .iter()
            .map(|p| {
                let scale = p.analytic.abs().max(p.numeric.abs());
                if scale == 0.0 {
                    0.0
                } else {
                    (p.analytic - p.numeric).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Loss of example `b` alone.
fn example_loss(net: &Network, x: &Tensor) -> Result<f64> {
    let (out, _) = forward(net, x)?;
    Ok(per_example_loss(&out).data()[0])
}

fn set_param(net: &mut Network, layer: usize, kind: ParamKind, index: usize, v: f64) {
    net.param_mut(layer, kind).expect("parameter exists").data_mut()[index] = v;
}

fn loss_with(
    net: &mut Network,
    layer: usize,
    kind: ParamKind,
    index: usize,
    v: f64,
    x: &Tensor,
) -> Result<f64> {
    set_param(net, layer, kind, index, v);
    example_loss(net, x)
}

/// Compares `grads` against central differences of `L[b]` at `per_layer`
/// randomly chosen parameter entries per parameterized layer, each with a
/// randomly chosen example `b`.
pub fn check_per_example(
    net: &Network,
    input: &Tensor,
    grads: &PerExampleGrads,
    per_layer: usize,
    seed: u64,
    tol: FdTolerance,
) -> Result<FdReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe_net = net.clone();
    let mut probes = Vec::new();
    for pg in grads.params() {
        let w_len = pg.weight.numel() / grads.batch();
        let b_len = pg.bias.as_ref().map_or(0, |t| t.numel() / grads.batch());
        for _ in 0..per_layer {
            let flat = rng.random_range(0..w_len + b_len);
            let (kind, index, src) = if flat < w_len {
                (ParamKind::Weight, flat, &pg.weight)
            } else {
                (ParamKind::Bias, flat - w_len, pg.bias.as_ref().expect("bias counted"))
            };
            let example = rng.random_range(0..grads.batch());
            let analytic = src.data()[example * (src.numel() / grads.batch()) + index];

            let x = input.slice_batch(example..example + 1)?;
            let original = probe_net.param(pg.layer, kind).expect("parameter exists").data()[index];
            let plus = loss_with(&mut probe_net, pg.layer, kind, index, original + tol.step, &x)?;
            let minus = loss_with(&mut probe_net, pg.layer, kind, index, original - tol.step, &x)?;
            set_param(&mut probe_net, pg.layer, kind, index, original);
            let numeric = (plus - minus) / (2.0 * tol.step);
            probes.push(FdProbe {
                layer: pg.layer,
                kind,
                index,
                example,
                analytic,
                numeric,
                passed: tol.accepts(analytic, numeric),
            });
        }
    }
    Ok(FdReport { probes })
}
