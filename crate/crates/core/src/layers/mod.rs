//! Layers, networks and their reverse passes.
//!
//! A [`Network`] is a flat list of layers applied in order. The forward pass
//! records each layer's input in a [`ForwardCache`]; the backward passes in
//! [`backward`] walk that cache in reverse to produce input gradients,
//! batch-summed parameter gradients, or per-example parameter gradients.

mod backward;
mod grads;
mod per_example;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv_nd, ConvGeometry, Tensor, MAX_SPATIAL_AXES};

pub use backward::{aggregate_backward, backward_input, per_example_backward};
pub use grads::{Grads, ParamGrad, PerExampleGrads};
pub use per_example::{conv_per_example_grad, dense_per_example_grad};

/// Fully connected layer `y = H x + bias`, weight `[J, I]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::Shape(format!(
                "dense weight must be [out, in], got {}",
                weight.shape()
            )));
        }
        if let Some(b) = &bias {
            if b.dims() != [weight.dims()[0]] {
                return Err(Error::Shape(format!(
                    "dense bias {} does not match {} outputs",
                    b.shape(),
                    weight.dims()[0]
                )));
            }
        }
        Ok(DenseLayer { weight, bias })
    }

    /// Weights drawn from `N(0, scale^2)`; bias, if any, likewise.
    pub fn random<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        bias: bool,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let weight = Tensor::random_normal([outputs, inputs], scale, rng);
        let bias = bias.then(|| Tensor::random_normal([outputs], scale, rng));
        DenseLayer { weight, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.dims()[0]
    }
}

/// Convolution layer with kernel `[D, C/groups, K...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub geometry: ConvGeometry,
    pub kernel: Tensor,
    pub bias: Option<Tensor>,
}

impl ConvLayer {
    pub fn new(geometry: ConvGeometry, kernel: Tensor, bias: Option<Tensor>) -> Result<Self> {
        geometry.validate()?;
        if kernel.dims() != geometry.kernel_dims().as_slice() {
            return Err(Error::Shape(format!(
                "kernel {} inconsistent with geometry",
                kernel.shape()
            )));
        }
        if let Some(b) = &bias {
            if b.dims() != [geometry.out_channels] {
                return Err(Error::Shape(format!(
                    "conv bias {} does not match {} output channels",
                    b.shape(),
                    geometry.out_channels
                )));
            }
        }
        Ok(ConvLayer {
            geometry,
            kernel,
            bias,
        })
    }

    pub fn random<R: Rng + ?Sized>(geometry: ConvGeometry, bias: bool, scale: f64, rng: &mut R) -> Self {
        let kernel = Tensor::random_normal(geometry.kernel_dims(), scale, rng);
        let bias = bias.then(|| Tensor::random_normal([geometry.out_channels], scale, rng));
        ConvLayer {
            geometry,
            kernel,
            bias,
        }
    }

    /// Number of inputs feeding each output element.
    pub fn fan_in(&self) -> usize {
        self.kernel.numel() / self.geometry.out_channels
    }
}

/// Max-pooling with the same window and stride on every spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Dense(DenseLayer),
    Relu,
    MaxPool(PoolSpec),
    /// Collapses `[B, ...]` to `[B, prod(...)]` ahead of dense layers.
    Flatten,
}

impl Layer {
    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::Dense(_))
    }

    pub fn num_params(&self) -> usize {
        match self {
            Layer::Conv(c) => c.kernel.numel() + c.bias.as_ref().map_or(0, Tensor::numel),
            Layer::Dense(d) => d.weight.numel() + d.bias.as_ref().map_or(0, Tensor::numel),
            _ => 0,
        }
    }

    /// Output shape (without batch axis) for an input shape (without batch axis).
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv(c) => {
                let g = &c.geometry;
                if g.spatial_axes() + 1 > MAX_SPATIAL_AXES {
                    return Err(Error::Config(format!(
                        "conv layers support at most {} spatial axes",
                        MAX_SPATIAL_AXES - 1
                    )));
                }
                if input.len() != g.spatial_axes() + 1 {
                    return Err(Error::Shape(format!(
                        "conv expects channels plus {} spatial axes, got {input:?}",
                        g.spatial_axes()
                    )));
                }
                if input[0] != g.in_channels {
                    return Err(Error::geometry(
                        1,
                        format!("{} input channels, layer expects {}", input[0], g.in_channels),
                    ));
                }
                let mut out = vec![g.out_channels];
                out.extend(g.output_extents(&input[1..])?);
                Ok(out)
            }
            Layer::Dense(d) => {
                if input != [d.inputs()] {
                    return Err(Error::Shape(format!(
                        "dense layer expects [{}], got {input:?}",
                        d.inputs()
                    )));
                }
                Ok(vec![d.outputs()])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool(p) => {
                if p.window == 0 || p.stride == 0 {
                    return Err(Error::Config("pool window and stride must be at least 1".into()));
                }
                if input.len() < 2 || input.len() > MAX_SPATIAL_AXES + 1 {
                    return Err(Error::Shape(format!(
                        "max-pool expects channels plus 1 to {MAX_SPATIAL_AXES} spatial axes, got {input:?}"
                    )));
                }
                let mut out = vec![input[0]];
                for (a, &e) in input[1..].iter().enumerate() {
                    if e < p.window {
                        return Err(Error::geometry(
                            a + 2,
                            format!("extent {e} smaller than pool window {}", p.window),
                        ));
                    }
                    out.push((e - p.window) / p.stride + 1);
                }
                Ok(out)
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Applies the layer; max-pool also returns the flat input index chosen for each output.
    fn forward(&self, x: &Tensor) -> Result<(Tensor, Option<Vec<usize>>)> {
        match self {
            Layer::Conv(c) => {
                let mut y = conv_nd(x, &c.kernel, &c.geometry)?;
                if let Some(bias) = &c.bias {
                    let plane = y.numel() / (y.batch() * c.geometry.out_channels).max(1);
                    let d_all = c.geometry.out_channels;
                    for (i, chunk) in y.data_mut().chunks_exact_mut(plane.max(1)).enumerate() {
                        let bv = bias.data()[i % d_all];
                        chunk.iter_mut().for_each(|v| *v += bv);
                    }
                }
                Ok((y, None))
            }
            Layer::Dense(d) => {
                let (batch, i_len, j_len) = (x.batch(), d.inputs(), d.outputs());
                let w = d.weight.data();
                let mut out = Vec::with_capacity(batch * j_len);
                for row in x.data().chunks_exact(i_len.max(1)).take(batch) {
                    for j in 0..j_len {
                        let mut acc = 0.0;
                        for (wv, xv) in w[j * i_len..(j + 1) * i_len].iter().zip(row) {
                            acc += wv * xv;
                        }
                        if let Some(b) = &d.bias {
                            acc += b.data()[j];
                        }
                        out.push(acc);
                    }
                }
                Ok((Tensor::new([batch, j_len], out)?, None))
            }
            Layer::Relu => Ok((x.map(|v| if v > 0.0 { v } else { 0.0 }), None)),
            Layer::MaxPool(p) => {
                let (y, arg) = max_pool(x, *p)?;
                Ok((y, Some(arg)))
            }
            Layer::Flatten => {
                let rest: usize = x.dims()[1..].iter().product();
                Ok((x.clone().reshape([x.batch(), rest])?, None))
            }
        }
    }
}

fn max_pool(x: &Tensor, p: PoolSpec) -> Result<(Tensor, Vec<usize>)> {
    let dims = x.dims();
    let n = dims.len() - 2;
    let mut ie = [1usize; 3];
    ie[3 - n..].copy_from_slice(&dims[2..]);
    let mut win = [1usize; 3];
    let mut st = [1usize; 3];
    for a in 3 - n..3 {
        win[a] = p.window;
        st[a] = p.stride;
    }
    let oe: Vec<usize> = (0..3).map(|a| (ie[a] - win[a]) / st[a] + 1).collect();
    let in_plane: usize = ie.iter().product();
    let out_plane: usize = oe.iter().product();
    let outer = dims[0] * dims[1];
    let src = x.data();
    let mut out = Vec::with_capacity(outer * out_plane);
    let mut arg = Vec::with_capacity(outer * out_plane);
    for nidx in 0..outer {
        let base = nidx * in_plane;
        for t0 in 0..oe[0] {
            for t1 in 0..oe[1] {
                for t2 in 0..oe[2] {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    // Row-major window scan; strict `>` keeps the lowest flat index on ties.
                    for w0 in 0..win[0] {
                        for w1 in 0..win[1] {
                            for w2 in 0..win[2] {
                                let i = base
                                    + ((t0 * st[0] + w0) * ie[1] + t1 * st[1] + w1) * ie[2]
                                    + t2 * st[2]
                                    + w2;
                                if best_i == usize::MAX || src[i] > best {
                                    best = src[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    let mut out_dims = dims[..2].to_vec();
    out_dims.extend_from_slice(&oe[3 - n..]);
    Ok((Tensor::new(out_dims, out)?, arg))
}

/// Which parameter tensor of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// An ordered stack of layers over a fixed per-example input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dims: Vec<usize>,
    layers: Vec<Layer>,
    output_dims: Vec<usize>,
}

impl Network {
    /// Validates that the layers compose on `input_dims` (per-example, no batch axis).
    pub fn new(input_dims: impl Into<Vec<usize>>, layers: Vec<Layer>) -> Result<Self> {
        let input_dims = input_dims.into();
        if !layers.iter().any(Layer::has_params) {
            return Err(Error::Config("network has no parameterized layer".into()));
        }
        let mut dims = input_dims.clone();
        for (i, layer) in layers.iter().enumerate() {
            dims = layer.output_dims(&dims).map_err(|e| e.at_layer(i))?;
        }
        Ok(Network {
            input_dims,
            layers,
            output_dims: dims,
        })
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn output_dims(&self) -> &[usize] {
        &self.output_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Indices of the layers that own parameters.
    pub fn param_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].has_params())
            .collect()
    }

    pub fn param(&self, layer: usize, kind: ParamKind) -> Option<&Tensor> {
        match (self.layers.get(layer)?, kind) {
            (Layer::Conv(c), ParamKind::Weight) => Some(&c.kernel),
            (Layer::Conv(c), ParamKind::Bias) => c.bias.as_ref(),
            (Layer::Dense(d), ParamKind::Weight) => Some(&d.weight),
            (Layer::Dense(d), ParamKind::Bias) => d.bias.as_ref(),
            _ => None,
        }
    }

    pub fn param_mut(&mut self, layer: usize, kind: ParamKind) -> Option<&mut Tensor> {
        match (self.layers.get_mut(layer)?, kind) {
            (Layer::Conv(c), ParamKind::Weight) => Some(&mut c.kernel),
            (Layer::Conv(c), ParamKind::Bias) => c.bias.as_mut(),
            (Layer::Dense(d), ParamKind::Weight) => Some(&mut d.weight),
            (Layer::Dense(d), ParamKind::Bias) => d.bias.as_mut(),
            _ => None,
        }
    }

    /// `theta <- theta - learning_rate * grads`.
    pub fn apply_update(&mut self, grads: &Grads, learning_rate: f64) -> Result<()> {
        for g in &grads.params {
            for (kind, gt) in [(ParamKind::Weight, Some(&g.weight)), (ParamKind::Bias, g.bias.as_ref())] {
                let Some(gt) = gt else { continue };
                let p = self.param_mut(g.layer, kind).ok_or_else(|| {
                    Error::Shape(format!("layer {} has no {kind:?} parameter", g.layer))
                })?;
                if p.shape() != gt.shape() {
                    return Err(Error::Shape(format!(
                        "layer {} {kind:?}: update {} vs parameter {}",
                        g.layer,
                        gt.shape(),
                        p.shape()
                    )));
                }
                for (pv, gv) in p.data_mut().iter_mut().zip(gt.data()) {
                    *pv -= learning_rate * gv;
                }
            }
        }
        Ok(())
    }
}

/// What one layer's forward pass leaves behind for the backward pass.
#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub input: Tensor,
    /// Flat input index of each max-pool output.
    pub argmax: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    entries: Vec<CacheEntry>,
}

impl ForwardCache {
    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn batch(&self) -> usize {
        self.entries.first().map_or(0, |e| e.input.batch())
    }
}

/// Runs `x` (`[B, input_dims...]`) through the network.
pub fn forward(net: &Network, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
    if x.rank() == 0 || &x.dims()[1..] != net.input_dims() {
        return Err(Error::Shape(format!(
            "input {} does not match network input {:?} with a leading batch axis",
            x.shape(),
            net.input_dims()
        ))
        .at_layer(0));
    }
    let mut entries = Vec::with_capacity(net.layers.len());
    let mut cur = x.clone();
    for (i, layer) in net.layers.iter().enumerate() {
        let (next, argmax) = layer.forward(&cur).map_err(|e| e.at_layer(i))?;
        entries.push(CacheEntry { input: cur, argmax });
        cur = next;
    }
    Ok((cur, ForwardCache { entries }))
}

/// `L[b] = 0.5 * sum(output[b]^2)`.
pub fn per_example_loss(output: &Tensor) -> Tensor {
    let b = output.batch();
    let row = if b == 0 { 0 } else { output.numel() / b };
    let losses = (0..b)
        .map(|i| 0.5 * output.data()[i * row..(i + 1) * row].iter().map(|v| v * v).sum::<f64>())
        .collect();
    Tensor::new([b], losses).expect("one loss per example")
}

/// Gradient of the summed per-example loss w.r.t. the output; equal to the output itself.
pub fn loss_gradient(output: &Tensor) -> Tensor {
    output.clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(dims, v.to_vec()).unwrap()
    }

    fn identity_conv() -> Layer {
        Layer::Conv(ConvLayer::new(ConvGeometry::new(1, 1, [1]), t(&[1, 1, 1], &[1.0]), None).unwrap())
    }

    #[test]
    fn identity_conv_forward() {
        let net = Network::new([1, 4], vec![identity_conv()]).unwrap();
        let x = t(&[2, 1, 4], &[1.0, -2.0, 3.0, 4.0, 0.0, 5.0, -6.0, 7.0]);
        let (y, cache) = forward(&net, &x).unwrap();
        assert_eq!(y, x);
        assert_eq!(cache.batch(), 2);
    }

    #[test]
    fn relu_zeroes_negatives() {
        let net = Network::new([1, 3], vec![Layer::Relu, identity_conv()]).unwrap();
        let (y, _) = forward(&net, &t(&[1, 1, 3], &[-1.0, -0.5, -3.0])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn composition_error_names_layer() {
        let dense = Layer::Dense(DenseLayer::new(Tensor::zeros([2, 5]), None).unwrap());
        let err = Network::new([1, 4], vec![identity_conv(), Layer::Flatten, dense]).unwrap_err();
        assert!(matches!(err, Error::Composition { layer: 2, .. }), "{err}");
        assert!(Network::new([1, 4], vec![Layer::Relu]).is_err());
    }

    #[test]
    fn max_pool_picks_lowest_index_on_ties() {
        let net = Network::new(
            [1, 4],
            vec![Layer::MaxPool(PoolSpec { window: 2, stride: 2 }), identity_conv()],
        )
        .unwrap();
        let (y, cache) = forward(&net, &t(&[1, 1, 4], &[2.0, 2.0, -1.0, 5.0])).unwrap();
        assert_eq!(y.data(), &[2.0, 5.0]);
        assert_eq!(cache.entries()[0].argmax.as_deref(), Some(&[0usize, 3][..]));
    }

    #[test]
    fn loss_examples() {
        let out = t(&[2, 2], &[0.0, 0.0, 3.0, 4.0]);
        assert_eq!(per_example_loss(&out).data(), &[0.0, 12.5]);
        assert_eq!(loss_gradient(&out), out);
    }

    #[test]
    fn dense_forward_with_bias() {
        let d = DenseLayer::new(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), Some(t(&[2], &[0.5, -1.0]))).unwrap();
        let net = Network::new([2], vec![Layer::Dense(d)]).unwrap();
        let (y, _) = forward(&net, &t(&[1, 2], &[1.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[3.5, 6.0]);
    }
}
