use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gradcheck::{check_per_example, FdTolerance};
use crate::layers::{aggregate_backward, forward, loss_gradient, ConvLayer, DenseLayer, Layer, Network, PoolSpec};
use crate::strategies::{compare_strategies, per_example_grads, GradientRequest, StrategyKind};
use crate::tensor::{ConvGeometry, Tensor};

/// Tolerance of the batch-sum identity.
pub const SUM_TOL: f64 = 1e-9;
/// Finite-difference probes per parameterized layer.
pub const FD_PROBES_PER_LAYER: usize = 10;

const STRIDES: [usize; 3] = [1, 2, 3];
const DILATIONS: [usize; 2] = [1, 2];
const PADDINGS: [usize; 3] = [0, 1, 2];
const GROUPS: [usize; 3] = [1, 2, 4];
const BATCHES: [usize; 4] = [1, 2, 5, 8];

/// One network/batch configuration of the equivalence sweep.
///
/// Every convolution shares the case's dilation, padding and groups; the
/// stride applies to the first and last convolution. A ReLU follows each
/// convolution and a flatten plus dense head closes the network.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCase {
    pub index: usize,
    pub spatial_axes: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub groups: usize,
    pub batch: usize,
    pub conv_layers: usize,
    pub kernel: usize,
    pub bias: bool,
    /// 2-wide max-pool after the first convolution.
    pub pool: bool,
}

/// Full product of spatial axes, stride, dilation, padding and groups (108
/// cases), with batch size, depth, kernel, bias and pooling cycled through.
pub fn equivalence_sweep() -> Vec<SweepCase> {
    let mut cases = Vec::new();
    for spatial_axes in [1, 2] {
        for stride in STRIDES {
            for dilation in DILATIONS {
                for padding in PADDINGS {
                    for groups in GROUPS {
                        let index = cases.len();
                        cases.push(SweepCase {
                            index,
                            spatial_axes,
                            stride,
                            dilation,
                            padding,
                            groups,
                            batch: BATCHES[index % 4],
                            conv_layers: 1 + (index / 4) % 4,
                            kernel: 2 + index % 2,
                            bias: index % 3 != 0,
                            pool: index % 5 == 0,
                        });
                    }
                }
            }
        }
    }
    cases
}

impl SweepCase {
    fn conv_geometry(&self, layer: usize, in_channels: usize) -> ConvGeometry {
        let n = self.spatial_axes;
        let strided = layer == 0 || layer + 1 == self.conv_layers;
        ConvGeometry::new(in_channels, 2 * self.groups, vec![self.kernel; n])
            .with_stride(vec![if strided { self.stride } else { 1 }; n])
            .with_dilation(vec![self.dilation; n])
            .with_padding(vec![self.padding; n])
            .with_groups(self.groups)
    }

    fn input_channels(&self) -> usize {
        self.groups * (1 + self.index % 2)
    }

    fn feature_layers(&self, scaffold: bool, rng: &mut ChaCha8Rng) -> Vec<Layer> {
        let mut layers = Vec::new();
        let mut channels = self.input_channels();
        for l in 0..self.conv_layers {
            let g = self.conv_geometry(l, channels);
            channels = g.out_channels;
            let conv = if scaffold {
                ConvLayer {
                    kernel: Tensor::zeros(g.kernel_dims()),
                    bias: None,
                    geometry: g,
                }
            } else {
                let scale = 1.0 / ((g.in_channels / g.groups * g.kernel.iter().product::<usize>()) as f64).sqrt();
                ConvLayer::random(g, self.bias, scale, rng)
            };
            layers.push(Layer::Conv(conv));
            layers.push(Layer::Relu);
            if l == 0 && self.pool {
                layers.push(Layer::MaxPool(PoolSpec { window: 2, stride: 2 }));
            }
        }
        layers
    }

    /// Smallest spatial extent at which the feature stack composes, plus a
    /// case-dependent margin.
    fn input_extent(&self) -> Result<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scaffold = self.feature_layers(true, &mut rng);
        for t in 1..=4096 {
            let mut dims = vec![self.input_channels()];
            dims.extend(std::iter::repeat_n(t, self.spatial_axes));
            let ok = scaffold
                .iter()
                .try_fold(dims, |d, l| l.output_dims(&d))
                .is_ok();
            if ok {
                return Ok(t + self.index % 3);
            }
        }
        Err(Error::Config(format!("sweep case {} never composes", self.index)))
    }

    /// Network with `N(0, 1/fan_in)` parameters and a standard-normal input batch.
    pub fn build(&self, seed: u64) -> Result<(Network, Tensor)> {
        let t = self.input_extent()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (self.index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut layers = self.feature_layers(false, &mut rng);
        let mut input_dims = vec![self.input_channels()];
        input_dims.extend(std::iter::repeat_n(t, self.spatial_axes));
        let feat = layers
            .iter()
            .try_fold(input_dims.clone(), |d, l| l.output_dims(&d))?;
        let flat: usize = feat.iter().product();
        layers.push(Layer::Flatten);
        layers.push(Layer::Dense(DenseLayer::random(
            flat,
            3,
            true,
            1.0 / (flat as f64).sqrt(),
            &mut rng,
        )));
        let net = Network::new(input_dims.clone(), layers)?;
        let mut x_dims = vec![self.batch];
        x_dims.extend(input_dims);
        let x = Tensor::random_normal(x_dims, 1.0, &mut rng);
        Ok((net, x))
    }
}

impl fmt::Display for SweepCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "case {:>3}: {}d stride {} dilation {} padding {} groups {} batch {} convs {} kernel {}{}{}",
            self.index,
            self.spatial_axes,
            self.stride,
            self.dilation,
            self.padding,
            self.groups,
            self.batch,
            self.conv_layers,
            self.kernel,
            if self.bias { " bias" } else { "" },
            if self.pool { " pool" } else { "" },
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub case: SweepCase,
    /// Largest pairwise deviation among naive, crb and multi.
    pub strategy_dev: f64,
    /// Largest deviation between the summed per-example and the batched gradient.
    pub sum_dev: f64,
    pub fd_worst_rel: f64,
    pub fd_passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSummary {
    pub tol: f64,
    pub cases: Vec<CaseResult>,
    /// SHA-256 over every gradient produced, in case and strategy order.
    pub digest: String,
}

impl CheckSummary {
    pub fn equivalence_passed(&self) -> bool {
        self.cases.iter().all(|c| c.strategy_dev <= self.tol)
    }

    pub fn sum_identity_passed(&self) -> bool {
        self.cases.iter().all(|c| c.sum_dev <= SUM_TOL)
    }

    pub fn finite_differences_passed(&self) -> bool {
        self.cases.iter().all(|c| c.fd_passed)
    }

    pub fn passed(&self) -> bool {
        self.equivalence_passed() && self.sum_identity_passed() && self.finite_differences_passed()
    }
}

impl fmt::Display for CheckSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let n = self.cases.len();
        let max = |g: fn(&CaseResult) -> f64| self.cases.iter().map(g).fold(0.0, f64::max);
        for c in &self.cases {
            let bad = c.strategy_dev > self.tol || c.sum_dev > SUM_TOL || !c.fd_passed;
            if bad {
                writeln!(
                    f,
                    "FAIL {}: strategy dev {:.3e}, sum dev {:.3e}, fd rel {:.3e}",
                    c.case, c.strategy_dev, c.sum_dev, c.fd_worst_rel
                )?;
            }
        }
        writeln!(
            f,
            "{} strategy equivalence: {n} cases, max deviation {:.3e} (tol {:.0e})",
            verdict(self.equivalence_passed()),
            max(|c| c.strategy_dev),
            self.tol
        )?;
        writeln!(
            f,
            "{} batch-sum identity: {n} cases, max deviation {:.3e} (tol {:.0e})",
            verdict(self.sum_identity_passed()),
            max(|c| c.sum_dev),
            SUM_TOL
        )?;
        writeln!(
            f,
            "{} finite differences: {n} cases x {FD_PROBES_PER_LAYER} probes per layer, worst relative error {:.3e}",
            verdict(self.finite_differences_passed()),
            max(|c| c.fd_worst_rel)
        )?;
        write!(f, "gradient digest: {}", self.digest)
    }
}

fn hash_grads(h: &mut Sha256, g: &crate::layers::PerExampleGrads) {
    for t in g.tensors() {
        for d in t.dims() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
}

/// Runs one sweep case: all strategies, the batch-sum identity and finite differences.
pub fn run_case(case: &SweepCase, seed: u64, tol: f64, workers: usize, digest: &mut Sha256) -> Result<CaseResult> {
    let (net, x) = case.build(seed)?;
    let runs = StrategyKind::ALL
        .iter()
        .map(|&k| per_example_grads(&GradientRequest::new(&net, &x, k).with_workers(workers)).map(|g| (k, g)))
        .collect::<Result<Vec<_>>>()?;
    for (_, g) in &runs {
        hash_grads(digest, g);
    }
    let refs: Vec<_> = runs.iter().map(|(k, g)| (*k, g)).collect();
    let report = compare_strategies(&refs, tol)?;

    let crb = &runs[1].1;
    let (out, cache) = forward(&net, &x)?;
    let batched = aggregate_backward(&net, &cache, &loss_gradient(&out))?;
    let sum_dev = crb
        .sum_over_batch()?
        .max_abs_diff(&batched)?
        .into_iter()
        .fold(0.0, f64::max);

    let fd = check_per_example(&net, &x, crb, FD_PROBES_PER_LAYER, seed ^ case.index as u64, FdTolerance::default())?;
    Ok(CaseResult {
        case: case.clone(),
        strategy_dev: report.max_deviation(),
        sum_dev,
        fd_worst_rel: fd.worst_rel_error(),
        fd_passed: fd.passed(),
    })
}

/// The full sweep as run by the `check` subcommand.
pub fn run_check(seed: u64, tol: f64, workers: usize) -> Result<CheckSummary> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    let mut digest = Sha256::new();
    let cases = equivalence_sweep()
        .iter()
        .map(|c| run_case(c, seed, tol, workers, &mut digest))
        .collect::<Result<Vec<_>>>()?;
    let digest = digest
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok(CheckSummary { tol, cases, digest })
}
