//! Per-example weight gradients from a layer's input and output gradient.

use crate::error::{Error, Result};
use crate::tensor::{
    batched_outer, conv_slices, truncate_spatial, ConvGeometry, LoopOrder, Tensor, MAX_SPATIAL_AXES,
};

/// `out[b] = dy[b] x[b]^T` for a dense layer with input `[B, I]` and output gradient `[B, J]`.
pub fn dense_per_example_grad(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    batched_outer(dy, x)
}

/// Per-example kernel gradients `[B, D, C/groups, K...]` of a convolution layer.
///
/// `dL[b]/dh[d, c, k] = sum_t x_pad[b, c, stride*t + dilation*k] * dy[b, d, t]`,
/// evaluated as a single grouped convolution with one extra spatial axis:
///
/// * the input is read as `(1, B*groups, C/groups, T...)`, so every example
///   (and every layer group within it) becomes one convolution group;
/// * the output gradient is read as a kernel `(B*D, 1, 1, T'...)`;
/// * stride and dilation trade places, the layer padding is kept, and the
///   extra axis has unit stride and dilation and no padding;
/// * the result `(1, B*D, C/groups, K'...)` may be longer than the kernel on
///   strided axes; only the first `K` entries are kept.
pub fn conv_per_example_grad(x: &Tensor, dy: &Tensor, g: &ConvGeometry) -> Result<Tensor> {
    g.validate()?;
    let n = g.spatial_axes();
    if n + 1 > MAX_SPATIAL_AXES {
        return Err(Error::geometry(
            None,
            format!(
                "per-example gradients need one spare spatial axis; layer has {n} of {MAX_SPATIAL_AXES}"
            ),
        ));
    }
    if x.rank() != n + 2 || x.dims()[1] != g.in_channels {
        return Err(Error::Shape(format!(
            "input {} does not match a {n}-axis layer with {} channels",
            x.shape(),
            g.in_channels
        )));
    }
    let batch = x.dims()[0];
    let out_spatial = g.output_extents(&x.dims()[2..])?;
    let mut dy_dims = vec![batch, g.out_channels];
    dy_dims.extend_from_slice(&out_spatial);
    if dy.dims() != dy_dims.as_slice() {
        return Err(Error::Shape(format!(
            "output gradient {} does not match expected {:?}",
            dy.shape(),
            dy_dims
        )));
    }

    let groups = batch * g.groups;
    let per_group = g.in_channels / g.groups;

    let mut x_dims = vec![1, groups, per_group];
    x_dims.extend_from_slice(&x.dims()[2..]);
    let mut k_dims = vec![batch * g.out_channels, 1, 1];
    k_dims.extend_from_slice(&out_spatial);

    let extend = |head: usize, tail: &[usize]| {
        let mut v = vec![head];
        v.extend_from_slice(tail);
        v
    };
    let swapped = ConvGeometry {
        in_channels: groups,
        out_channels: batch * g.out_channels,
        kernel: extend(1, &out_spatial),
        stride: extend(1, &g.dilation),
        dilation: extend(1, &g.stride),
        padding: extend(0, &g.padding),
        groups,
    };
    let full = conv_slices(&x_dims, x.data(), &k_dims, dy.data(), &swapped, LoopOrder::Auto)?;
    let cut = truncate_spatial(&full, &extend(per_group, &g.kernel)).map_err(internal)?;

    let mut out_dims = vec![batch, g.out_channels, per_group];
    out_dims.extend_from_slice(&g.kernel);
    cut.reshape(out_dims).map_err(internal)
}

/// Per-example bias gradient of a convolution: `dy` summed over spatial axes, `[B, D]`.
pub(crate) fn conv_per_example_bias(dy: &Tensor) -> Result<Tensor> {
    let (b, d) = (dy.dims()[0], dy.dims()[1]);
    let plane = if b * d == 0 { 0 } else { dy.numel() / (b * d) };
    let sums = dy
        .data()
        .chunks_exact(plane.max(1))
        .take(b * d)
        .map(|c| c.iter().fold(0.0, |acc, v| acc + v))
        .collect();
    Tensor::new([b, d], sums)
}

fn internal(e: Error) -> Error {
    Error::Internal(format!("per-example reshape: {e}"))
}
