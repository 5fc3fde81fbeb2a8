use super::grads::{Grads, ParamGrad, PerExampleGrads};
use super::per_example::{conv_per_example_bias, conv_per_example_grad, dense_per_example_grad};
use super::{CacheEntry, ConvLayer, DenseLayer, ForwardCache, Layer, Network};
use crate::error::{Error, Result};
use crate::tensor::{pad_spatial, Tensor};

/// Gradient w.r.t. a layer's input given the gradient w.r.t. its output.
pub fn backward_input(layer: &Layer, entry: &CacheEntry, dy: &Tensor) -> Result<Tensor> {
    let x = &entry.input;
    let mut expected = vec![x.batch()];
    expected.extend(layer.output_dims(&x.dims()[1..])?);
    if dy.dims() != expected.as_slice() {
        return Err(Error::Shape(format!(
            "output gradient {} does not match layer output {:?}",
            dy.shape(),
            expected
        )));
    }
    match layer {
        Layer::Conv(c) => conv_input_grad(x.dims(), dy, c),
        Layer::Dense(d) => dense_input_grad(dy, d),
        Layer::Relu => {
            let data = x
                .data()
                .iter()
                .zip(dy.data())
                .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
                .collect();
            Tensor::new(x.dims(), data)
        }
        Layer::MaxPool(_) => {
            let arg = entry
                .argmax
                .as_ref()
                .ok_or_else(|| Error::Internal("max-pool cache entry without argmax".into()))?;
            let mut dx = Tensor::zeros(x.dims());
            let buf = dx.data_mut();
            for (&i, &g) in arg.iter().zip(dy.data()) {
                buf[i] += g;
            }
            Ok(dx)
        }
        Layer::Flatten => dy.clone().reshape(x.dims()),
    }
}

fn dense_input_grad(dy: &Tensor, d: &DenseLayer) -> Result<Tensor> {
    let (batch, i_len, j_len) = (dy.batch(), d.inputs(), d.outputs());
    let w = d.weight.data();
    let mut dx = vec![0.0; batch * i_len];
    for (row, grow) in dx.chunks_exact_mut(i_len.max(1)).zip(dy.data().chunks_exact(j_len.max(1))) {
        for (j, &g) in grow.iter().enumerate() {
            for (o, wv) in row.iter_mut().zip(&w[j * i_len..(j + 1) * i_len]) {
                *o += g * wv;
            }
        }
    }
    Tensor::new([batch, i_len], dx)
}

fn norm3(v: &[usize], fill: usize) -> [usize; 3] {
    let mut out = [fill; 3];
    out[3 - v.len()..].copy_from_slice(v);
    out
}

/// Scatters each `h[d, c, k] * dy[b, d, t]` into `dx_pad[b, c, stride*t + dilation*k]`, then crops.
fn conv_input_grad(x_dims: &[usize], dy: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let g = &layer.geometry;
    let batch = x_dims[0];
    let (c_all, d_all) = (g.in_channels, g.out_channels);
    let (cg, dg) = (c_all / g.groups, d_all / g.groups);
    let xs = norm3(&x_dims[2..], 1);
    let pd = norm3(&g.padding, 0);
    let ie = [xs[0] + 2 * pd[0], xs[1] + 2 * pd[1], xs[2] + 2 * pd[2]];
    let oe = norm3(&dy.dims()[2..], 1);
    let ke = norm3(&g.kernel, 1);
    let st = norm3(&g.stride, 1);
    let dl = norm3(&g.dilation, 1);
    let in_plane: usize = ie.iter().product();
    let out_plane: usize = oe.iter().product();
    let k_plane: usize = ke.iter().product();

    let mut dxp = vec![0.0; batch * c_all * in_plane];
    let h = layer.kernel.data();
    for b in 0..batch {
        for d in 0..d_all {
            let grp = d / dg;
            let gy = &dy.data()[(b * d_all + d) * out_plane..][..out_plane];
            for ci in 0..cg {
                let plane = &mut dxp[(b * c_all + grp * cg + ci) * in_plane..][..in_plane];
                let hc = &h[(d * cg + ci) * k_plane..][..k_plane];
                for k0 in 0..ke[0] {
                    for k1 in 0..ke[1] {
                        for k2 in 0..ke[2] {
                            let w = hc[(k0 * ke[1] + k1) * ke[2] + k2];
                            for t0 in 0..oe[0] {
                                let i0 = st[0] * t0 + dl[0] * k0;
                                for t1 in 0..oe[1] {
                                    let i1 = st[1] * t1 + dl[1] * k1;
                                    let row = (i0 * ie[1] + i1) * ie[2] + dl[2] * k2;
                                    let grow = &gy[(t0 * oe[1] + t1) * oe[2]..][..oe[2]];
                                    if st[2] == 1 {
                                        for (o, &gv) in plane[row..row + oe[2]].iter_mut().zip(grow) {
                                            *o += w * gv;
                                        }
                                    } else {
                                        for (o, &gv) in plane[row..].iter_mut().step_by(st[2]).zip(grow) {
                                            *o += w * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if pd == [0; 3] {
        return Tensor::new(x_dims, dxp);
    }
    let mut dx = Vec::with_capacity(batch * c_all * xs.iter().product::<usize>());
    for plane in dxp.chunks_exact(in_plane.max(1)).take(batch * c_all) {
        for i0 in 0..xs[0] {
            for i1 in 0..xs[1] {
                let s = ((i0 + pd[0]) * ie[1] + i1 + pd[1]) * ie[2] + pd[2];
                dx.extend_from_slice(&plane[s..s + xs[2]]);
            }
        }
    }
    Tensor::new(x_dims, dx)
}

/// Batch-summed kernel gradient by direct summation over examples and output positions.
fn conv_weight_grad_sum(x: &Tensor, dy: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let g = &layer.geometry;
    let xp = pad_spatial(x, &g.padding)?;
    let batch = x.batch();
    let (c_all, d_all) = (g.in_channels, g.out_channels);
    let (cg, dg) = (c_all / g.groups, d_all / g.groups);
    let ie = norm3(&xp.dims()[2..], 1);
    let oe = norm3(&dy.dims()[2..], 1);
    let ke = norm3(&g.kernel, 1);
    let st = norm3(&g.stride, 1);
    let dl = norm3(&g.dilation, 1);
    let in_plane: usize = ie.iter().product();
    let out_plane: usize = oe.iter().product();
    let k_plane: usize = ke.iter().product();

    let mut dw = vec![0.0; d_all * cg * k_plane];
    for d in 0..d_all {
        let grp = d / dg;
        for ci in 0..cg {
            let c = grp * cg + ci;
            for k0 in 0..ke[0] {
                for k1 in 0..ke[1] {
                    for k2 in 0..ke[2] {
                        let mut acc = 0.0;
                        for b in 0..batch {
                            let xc = &xp.data()[(b * c_all + c) * in_plane..][..in_plane];
                            let gy = &dy.data()[(b * d_all + d) * out_plane..][..out_plane];
                            for t0 in 0..oe[0] {
                                let i0 = st[0] * t0 + dl[0] * k0;
                                for t1 in 0..oe[1] {
                                    let i1 = st[1] * t1 + dl[1] * k1;
                                    let row = (i0 * ie[1] + i1) * ie[2] + dl[2] * k2;
                                    let grow = &gy[(t0 * oe[1] + t1) * oe[2]..][..oe[2]];
                                    if st[2] == 1 {
                                        for (&gv, &xv) in grow.iter().zip(&xc[row..row + oe[2]]) {
                                            acc += gv * xv;
                                        }
                                    } else {
                                        for (&gv, &xv) in grow.iter().zip(xc[row..].iter().step_by(st[2])) {
                                            acc += gv * xv;
                                        }
                                    }
                                }
                            }
                        }
                        dw[((d * cg + ci) * ke[0] + k0) * ke[1] * ke[2] + k1 * ke[2] + k2] = acc;
                    }
                }
            }
        }
    }
    Tensor::new(g.kernel_dims(), dw)
}

fn conv_bias_grad_sum(dy: &Tensor, d_all: usize) -> Result<Tensor> {
    let batch = dy.batch();
    let plane = if batch * d_all == 0 { 0 } else { dy.numel() / (batch * d_all) };
    let mut out = vec![0.0; d_all];
    for (d, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for b in 0..batch {
            for v in &dy.data()[(b * d_all + d) * plane..][..plane] {
                acc += v;
            }
        }
        *o = acc;
    }
    Tensor::new([d_all], out)
}

fn dense_weight_grad_sum(x: &Tensor, dy: &Tensor, d: &DenseLayer) -> Result<Tensor> {
    let (batch, i_len, j_len) = (x.batch(), d.inputs(), d.outputs());
    let mut dw = vec![0.0; j_len * i_len];
    for j in 0..j_len {
        for i in 0..i_len {
            let mut acc = 0.0;
            for b in 0..batch {
                acc += dy.data()[b * j_len + j] * x.data()[b * i_len + i];
            }
            dw[j * i_len + i] = acc;
        }
    }
    Tensor::new([j_len, i_len], dw)
}

/// Walks the cached pass backwards from `d_out`, handing each parameterized
/// layer its cached input and output gradient. Input gradients are not
/// propagated below the first parameterized layer.
fn reverse_pass(
    net: &Network,
    cache: &ForwardCache,
    d_out: &Tensor,
    mut visit: impl FnMut(usize, &Layer, &CacheEntry, &Tensor) -> Result<()>,
) -> Result<()> {
    let entries = cache.entries();
    if entries.len() != net.layers().len() {
        return Err(Error::Shape(format!(
            "cache has {} entries for {} layers",
            entries.len(),
            net.layers().len()
        )));
    }
    let mut expected = vec![cache.batch()];
    expected.extend_from_slice(net.output_dims());
    if d_out.dims() != expected.as_slice() {
        return Err(Error::Shape(format!(
            "output gradient {} does not match network output {:?}",
            d_out.shape(),
            expected
        )));
    }
    let first = net
        .param_layers()
        .first()
        .copied()
        .ok_or_else(|| Error::Internal("network without parameters".into()))?;
    let mut dy = d_out.clone();
    for i in (first..net.layers().len()).rev() {
        let (layer, entry) = (&net.layers()[i], &entries[i]);
        if layer.has_params() {
            visit(i, layer, entry, &dy).map_err(|e| e.at_layer(i))?;
        }
        if i > first {
            dy = backward_input(layer, entry, &dy).map_err(|e| e.at_layer(i))?;
        }
    }
    Ok(())
}

/// Standard batch-summed parameter gradients.
pub fn aggregate_backward(net: &Network, cache: &ForwardCache, d_out: &Tensor) -> Result<Grads> {
    let mut params = Vec::new();
    reverse_pass(net, cache, d_out, |i, layer, entry, dy| {
        let x = &entry.input;
        let grad = match layer {
            Layer::Conv(c) => ParamGrad {
                layer: i,
                weight: conv_weight_grad_sum(x, dy, c)?,
                bias: c
                    .bias
                    .as_ref()
                    .map(|_| conv_bias_grad_sum(dy, c.geometry.out_channels))
                    .transpose()?,
            },
            Layer::Dense(d) => ParamGrad {
                layer: i,
                weight: dense_weight_grad_sum(x, dy, d)?,
                bias: d.bias.as_ref().map(|_| dy.sum_batch()).transpose()?,
            },
            _ => return Ok(()),
        };
        params.push(grad);
        Ok(())
    })?;
    params.reverse();
    Ok(Grads { params })
}

/// Per-example parameter gradients from one batched pass (chain-rule based).
pub fn per_example_backward(
    net: &Network,
    cache: &ForwardCache,
    d_out: &Tensor,
) -> Result<PerExampleGrads> {
    let mut params = Vec::new();
    reverse_pass(net, cache, d_out, |i, layer, entry, dy| {
        let x = &entry.input;
        let grad = match layer {
            Layer::Conv(c) => ParamGrad {
                layer: i,
                weight: conv_per_example_grad(x, dy, &c.geometry)?,
                bias: c.bias.as_ref().map(|_| conv_per_example_bias(dy)).transpose()?,
            },
            Layer::Dense(d) => ParamGrad {
                layer: i,
                weight: dense_per_example_grad(x, dy)?,
                bias: d.bias.as_ref().map(|_| dy.clone()),
            },
            _ => return Ok(()),
        };
        params.push(grad);
        Ok(())
    })?;
    params.reverse();
    PerExampleGrads::new(cache.batch(), params)
}
