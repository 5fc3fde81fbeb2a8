use super::geometry::ConvGeometry;
use super::spatial::{pad_data, to3};
use super::Tensor;
use crate::error::{Error, Result};

/// Loop nesting used inside [`conv_nd`].
///
/// Both orders add each output element's terms in the same sequence
/// (input channel, then kernel offset in row-major order), so they agree bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopOrder {
    /// Pick per call: gather when the kernel plane is larger than the output plane.
    Auto,
    /// Kernel offsets outermost, one axpy over an output row per offset.
    Scatter,
    /// Output positions outermost, one dot product per output element.
    Gather,
}

/// Grouped, strided, dilated, zero-padded cross-correlation over 1 to 3 spatial axes.
///
/// `x` is `[B, C, spatial...]`, `h` is `[D, C/groups, K...]` and the result is
/// `[B, D, out...]` with
/// `y[b, d, t] = sum_{c in group(d)} sum_k x_pad[b, c, stride*t + dilation*k] * h[d, c, k]`.
/// The kernel is not flipped.
pub fn conv_nd(x: &Tensor, h: &Tensor, g: &ConvGeometry) -> Result<Tensor> {
    conv_nd_with(x, h, g, LoopOrder::Auto)
}

pub fn conv_nd_with(
    x: &Tensor,
    h: &Tensor,
    g: &ConvGeometry,
    order: LoopOrder,
) -> Result<Tensor> {
    conv_slices(x.dims(), x.data(), h.dims(), h.data(), g, order)
}

/// [`conv_nd_with`] over raw row-major buffers, so callers can reinterpret shapes without copying.
pub(crate) fn conv_slices(
    x_dims: &[usize],
    x_data: &[f64],
    h_dims: &[usize],
    h_data: &[f64],
    g: &ConvGeometry,
    order: LoopOrder,
) -> Result<Tensor> {
    g.validate()?;
    let n = g.spatial_axes();
    let x_shape = super::Shape::new(x_dims.to_vec());
    if x_dims.len() != n + 2 {
        return Err(Error::geometry(
            None,
            format!("input {x_shape} does not have (batch, channels) plus {n} spatial axes"),
        ));
    }
    if x_shape.numel() != x_data.len() || h_dims.iter().product::<usize>() != h_data.len() {
        return Err(Error::Internal("buffer length does not match its shape".into()));
    }
    if x_dims[1] != g.in_channels {
        return Err(Error::geometry(
            1,
            format!(
                "input has {} channels, geometry expects {}",
                x_dims[1], g.in_channels
            ),
        ));
    }
    let kdims = g.kernel_dims();
    if h_dims != kdims.as_slice() {
        let axis = h_dims
            .iter()
            .zip(&kdims)
            .position(|(a, b)| a != b)
            .unwrap_or(h_dims.len().min(kdims.len()));
        return Err(Error::geometry(
            axis,
            format!(
                "kernel shape {} does not match expected {}",
                super::Shape::new(h_dims.to_vec()),
                super::Shape::new(kdims)
            ),
        ));
    }
    let out_spatial = g.output_extents(&x_dims[2..])?;

    let xd = pad_data(x_dims, x_data, &g.padding)?;
    let padded: Vec<usize> = x_dims[2..].iter().zip(&g.padding).map(|(&e, &p)| e + 2 * p).collect();
    let batch = x_dims[0];
    let (c_all, d_all) = (g.in_channels, g.out_channels);
    let (cg, dg) = (c_all / g.groups, d_all / g.groups);

    let dims = Dims {
        ie: to3(&padded, 1),
        oe: to3(&out_spatial, 1),
        ke: to3(&g.kernel, 1),
        st: to3(&g.stride, 1),
        dl: to3(&g.dilation, 1),
    };
    let in_plane: usize = dims.ie.iter().product();
    let out_plane: usize = dims.oe.iter().product();
    let k_plane: usize = dims.ke.iter().product();

    let gather = match order {
        LoopOrder::Auto => k_plane > out_plane,
        LoopOrder::Gather => true,
        LoopOrder::Scatter => false,
    };

    let mut y = vec![0.0; batch * d_all * out_plane];
    if out_plane > 0 {
        for (bd, out) in y.chunks_exact_mut(out_plane).enumerate() {
            let (b, d) = (bd / d_all, bd % d_all);
            let grp = d / dg;
            for ci in 0..cg {
                let xc = &xd[(b * c_all + grp * cg + ci) * in_plane..][..in_plane];
                let hc = &h_data[(d * cg + ci) * k_plane..][..k_plane];
                if gather {
                    gather_plane(out, xc, hc, &dims);
                } else {
                    scatter_plane(out, xc, hc, &dims);
                }
            }
        }
    }

    let mut out_dims = vec![batch, d_all];
    out_dims.extend_from_slice(&out_spatial);
    Tensor::new(out_dims, y)
}

/// Spatial extents normalized to three axes.
struct Dims {
    ie: [usize; 3],
    oe: [usize; 3],
    ke: [usize; 3],
    st: [usize; 3],
    dl: [usize; 3],
}

fn scatter_plane(out: &mut [f64], xc: &[f64], hc: &[f64], d: &Dims) {
    let Dims { ie, oe, ke, st, dl } = *d;
    for k0 in 0..ke[0] {
        for k1 in 0..ke[1] {
            for k2 in 0..ke[2] {
                let w = hc[(k0 * ke[1] + k1) * ke[2] + k2];
                for t0 in 0..oe[0] {
                    let i0 = st[0] * t0 + dl[0] * k0;
                    for t1 in 0..oe[1] {
                        let i1 = st[1] * t1 + dl[1] * k1;
                        let row = (i0 * ie[1] + i1) * ie[2] + dl[2] * k2;
                        let orow = &mut out[(t0 * oe[1] + t1) * oe[2]..][..oe[2]];
                        if st[2] == 1 {
                            for (o, xv) in orow.iter_mut().zip(&xc[row..row + oe[2]]) {
                                *o += w * xv;
                            }
                        } else {
                            for (o, xv) in orow.iter_mut().zip(xc[row..].iter().step_by(st[2])) {
                                *o += w * xv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn gather_plane(out: &mut [f64], xc: &[f64], hc: &[f64], d: &Dims) {
    let Dims { ie, oe, ke, st, dl } = *d;
    for t0 in 0..oe[0] {
        for t1 in 0..oe[1] {
            for t2 in 0..oe[2] {
                let o = &mut out[(t0 * oe[1] + t1) * oe[2] + t2];
                let mut acc = *o;
                for k0 in 0..ke[0] {
                    let i0 = st[0] * t0 + dl[0] * k0;
                    for k1 in 0..ke[1] {
                        let i1 = st[1] * t1 + dl[1] * k1;
                        let base = (i0 * ie[1] + i1) * ie[2] + st[2] * t2;
                        let hrow = &hc[(k0 * ke[1] + k1) * ke[2]..][..ke[2]];
                        if dl[2] == 1 {
                            for (hv, xv) in hrow.iter().zip(&xc[base..base + ke[2]]) {
                                acc += hv * xv;
                            }
                        } else {
                            for (hv, xv) in hrow.iter().zip(xc[base..].iter().step_by(dl[2])) {
                                acc += hv * xv;
                            }
                        }
                    }
                }
                *o = acc;
            }
        }
    }
}
