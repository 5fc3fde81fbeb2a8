//! Brute-force reference implementations, written without any of the library's convolution code.

#![allow(dead_code)]

use pergrad::{ConvGeometry, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(dims: &[usize], seed: u64) -> Tensor {
    Tensor::random_normal(dims.to_vec(), 1.0, &mut rng(seed))
}

/// Row-major strides of `dims`.
fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * dims[a + 1];
    }
    s
}

/// Every multi-index below `dims`, in row-major order.
pub fn indices(dims: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = dims.iter().product();
    let st = strides(dims);
    (0..total)
        .map(|flat| dims.iter().zip(&st).map(|(&d, &s)| (flat / s) % d).collect())
        .collect()
}

fn at(t: &Tensor, idx: &[usize]) -> f64 {
    let flat: usize = idx.iter().zip(strides(t.dims())).map(|(i, s)| i * s).sum();
    t.data()[flat]
}

/// `x[b, c, S t + D k - P]`, or zero outside the unpadded input.
fn x_shifted(x: &Tensor, b: usize, c: usize, t: &[usize], k: &[usize], g: &ConvGeometry) -> f64 {
    let mut idx = vec![b, c];
    for a in 0..t.len() {
        let p = (g.stride[a] * t[a] + g.dilation[a] * k[a]) as isize - g.padding[a] as isize;
        if p < 0 || p as usize >= x.dims()[a + 2] {
            return 0.0;
        }
        idx.push(p as usize);
    }
    at(x, &idx)
}

fn out_extents(x: &Tensor, g: &ConvGeometry) -> Vec<usize> {
    (0..g.kernel.len())
        .map(|a| {
            let span = g.dilation[a] * (g.kernel[a] - 1) + 1;
            (x.dims()[a + 2] + 2 * g.padding[a] - span) / g.stride[a] + 1
        })
        .collect()
}

/// Grouped cross-correlation by direct summation.
pub fn conv_oracle(x: &Tensor, h: &Tensor, g: &ConvGeometry) -> Tensor {
    let (batch, d_all) = (x.dims()[0], g.out_channels);
    let cg = g.in_channels / g.groups;
    let dg = d_all / g.groups;
    let oe = out_extents(x, g);
    let mut dims = vec![batch, d_all];
    dims.extend(&oe);
    let mut y = Vec::new();
    for b in 0..batch {
        for d in 0..d_all {
            for t in indices(&oe) {
                let mut acc = 0.0;
                for ci in 0..cg {
                    for k in indices(&g.kernel) {
                        let mut hidx = vec![d, ci];
                        hidx.extend(&k);
                        acc += at(h, &hidx) * x_shifted(x, b, (d / dg) * cg + ci, &t, &k, g);
                    }
                }
                y.push(acc);
            }
        }
    }
    Tensor::new(dims, y).unwrap()
}

/// `dh[b, d, c, k] = sum_t x[b, group(d) c, S t + D k - P] * dy[b, d, t]` by direct summation.
pub fn per_example_oracle(x: &Tensor, dy: &Tensor, g: &ConvGeometry) -> Tensor {
    let (batch, d_all) = (x.dims()[0], g.out_channels);
    let cg = g.in_channels / g.groups;
    let dg = d_all / g.groups;
    let oe = dy.dims()[2..].to_vec();
    let mut dims = vec![batch, d_all, cg];
    dims.extend(&g.kernel);
    let mut out = Vec::new();
    for b in 0..batch {
        for d in 0..d_all {
            for ci in 0..cg {
                for k in indices(&g.kernel) {
                    let mut acc = 0.0;
                    for t in indices(&oe) {
                        let mut yidx = vec![b, d];
                        yidx.extend(&t);
                        acc += at(dy, &yidx) * x_shifted(x, b, (d / dg) * cg + ci, &t, &k, g);
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new(dims, out).unwrap()
}

/// Random geometry over 1 or 2 spatial axes with small extents.
pub fn small_geometry(seed: u64) -> (ConvGeometry, Vec<usize>, usize) {
    use rand::Rng;
    let mut r = rng(seed);
    let n = r.random_range(1..=2);
    let groups = [1, 2, 3][r.random_range(0..3)];
    let cg = r.random_range(1..=2);
    let dg = r.random_range(1..=2);
    let kernel: Vec<usize> = (0..n).map(|_| r.random_range(1..=3)).collect();
    let stride: Vec<usize> = (0..n).map(|_| r.random_range(1..=3)).collect();
    let dilation: Vec<usize> = (0..n).map(|_| r.random_range(1..=2)).collect();
    let padding: Vec<usize> = (0..n).map(|_| r.random_range(0..=2)).collect();
    let extents: Vec<usize> = (0..n)
        .map(|a| {
            let span = dilation[a] * (kernel[a] - 1) + 1;
            (span.saturating_sub(2 * padding[a])).max(1) + r.random_range(0..=8 - span.min(8))
        })
        .collect();
    let g = ConvGeometry::new(groups * cg, groups * dg, kernel)
        .with_stride(stride)
        .with_dilation(dilation)
        .with_padding(padding)
        .with_groups(groups);
    let batch = r.random_range(1..=3);
    (g, extents, batch)
}

/// Single-convolution geometries of the equivalence sweep, one per case.
pub fn sweep_geometries() -> Vec<(ConvGeometry, Vec<usize>, usize)> {
    pergrad::bench::equivalence_sweep()
        .into_iter()
        .map(|c| {
            let n = c.spatial_axes;
            let cin = c.groups * (1 + c.index % 2);
            let g = ConvGeometry::new(cin, 2 * c.groups, vec![c.kernel; n])
                .with_stride(vec![c.stride; n])
                .with_dilation(vec![c.dilation; n])
                .with_padding(vec![c.padding; n])
                .with_groups(c.groups);
            let span = c.dilation * (c.kernel - 1) + 1;
            let extent = span.saturating_sub(2 * c.padding).max(1) + c.index % 4;
            let mut xd = vec![c.batch, cin];
            xd.extend(vec![extent; n]);
            (g, xd, c.index)
        })
        .collect()
}

pub fn output_dims(g: &ConvGeometry, xd: &[usize]) -> Vec<usize> {
    let mut d = vec![xd[0], g.out_channels];
    d.extend(g.output_extents(&xd[2..]).unwrap());
    d
}
