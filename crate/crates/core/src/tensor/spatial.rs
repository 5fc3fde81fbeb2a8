use std::borrow::Cow;

use super::geometry::MAX_SPATIAL_AXES;
use super::Tensor;
use crate::error::{Error, Result};

/// Splits `(B, C, s...)` into `B*C` and the spatial extents left-padded with 1 to three axes.
pub(super) fn split_spatial(dims: &[usize], axes: usize) -> Result<(usize, [usize; 3])> {
    if dims.len() < 3 || dims.len() - 2 != axes || axes > MAX_SPATIAL_AXES {
        return Err(Error::Shape(format!(
            "expected (batch, channels) plus {axes} spatial axes (at most {MAX_SPATIAL_AXES}), got {} axes",
            dims.len()
        )));
    }
    Ok((dims[0] * dims[1], to3(&dims[2..], 1)))
}

pub(super) fn to3(v: &[usize], fill: usize) -> [usize; 3] {
    let mut out = [fill; 3];
    out[3 - v.len()..].copy_from_slice(v);
    out
}

/// Zero border of width `padding[a]` on both sides of each spatial axis.
pub fn pad_spatial(x: &Tensor, padding: &[usize]) -> Result<Tensor> {
    let data = pad_data(x.dims(), x.data(), padding)?;
    let mut dims = x.dims()[..2].to_vec();
    dims.extend(
        x.dims()[2..]
            .iter()
            .zip(padding)
            .map(|(&e, &p)| e + 2 * p),
    );
    Tensor::new(dims, data.into_owned())
}

/// Padded copy of a `(B, C, s...)` buffer; borrows the input when there is no padding.
pub(super) fn pad_data<'a>(dims: &[usize], src: &'a [f64], padding: &[usize]) -> Result<Cow<'a, [f64]>> {
    let (outer, ext) = split_spatial(dims, padding.len())?;
    if padding.iter().all(|&p| p == 0) {
        return Ok(Cow::Borrowed(src));
    }
    let p = to3(padding, 0);
    let out_ext = [
        ext[0] + 2 * p[0],
        ext[1] + 2 * p[1],
        ext[2] + 2 * p[2],
    ];
    let in_plane = ext[0] * ext[1] * ext[2];
    let out_plane = out_ext[0] * out_ext[1] * out_ext[2];
    let mut data = vec![0.0; outer * out_plane];
    for n in 0..outer {
        for i0 in 0..ext[0] {
            for i1 in 0..ext[1] {
                let s = n * in_plane + (i0 * ext[1] + i1) * ext[2];
                let d = n * out_plane + ((i0 + p[0]) * out_ext[1] + i1 + p[1]) * out_ext[2] + p[2];
                data[d..d + ext[2]].copy_from_slice(&src[s..s + ext[2]]);
            }
        }
    }
    Ok(Cow::Owned(data))
}

/// Keeps the first `keep[a]` indices of each spatial axis.
pub fn truncate_spatial(x: &Tensor, keep: &[usize]) -> Result<Tensor> {
    let (outer, ext) = split_spatial(x.dims(), keep.len())?;
    for (a, (&k, &e)) in keep.iter().zip(&x.dims()[2..]).enumerate() {
        if k > e {
            return Err(Error::Range(format!(
                "cannot keep {k} indices of spatial axis {a} with extent {e}"
            )));
        }
    }
    let k = to3(keep, 1);
    let in_plane = ext[0] * ext[1] * ext[2];
    let out_plane = k[0] * k[1] * k[2];
    let mut data = Vec::with_capacity(outer * out_plane);
    let src = x.data();
    for n in 0..outer {
        for i0 in 0..k[0] {
            for i1 in 0..k[1] {
                let s = n * in_plane + (i0 * ext[1] + i1) * ext[2];
                data.extend_from_slice(&src[s..s + k[2]]);
            }
        }
    }
    let mut dims = x.dims()[..2].to_vec();
    dims.extend_from_slice(keep);
    Tensor::new(dims, data)
}

/// `out[b, j, i] = a[b, j] * b[b, i]`.
pub fn batched_outer(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Shape(format!(
            "batched outer product needs two 2-axis tensors, got {} and {}",
            a.shape(),
            b.shape()
        )));
    }
    let (batch, j_len, i_len) = (a.dims()[0], a.dims()[1], b.dims()[1]);
    if b.dims()[0] != batch {
        return Err(Error::Shape(format!(
            "batch mismatch in outer product: {} vs {}",
            batch,
            b.dims()[0]
        )));
    }
    let mut data = Vec::with_capacity(batch * j_len * i_len);
    for (ra, rb) in a
        .data()
        .chunks_exact(j_len.max(1))
        .zip(b.data().chunks_exact(i_len.max(1)))
        .take(batch)
    {
        for &av in ra.iter().take(j_len) {
            data.extend(rb.iter().take(i_len).map(|&bv| av * bv));
        }
    }
    Tensor::new([batch, j_len, i_len], data)
}
