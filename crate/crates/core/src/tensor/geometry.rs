use crate::error::{Error, Result};

/// Highest number of spatial axes `conv_nd` accepts.
pub const MAX_SPATIAL_AXES: usize = 3;

/// Channel, kernel and argument description of a (grouped) convolution.
///
/// All per-axis vectors have one entry per spatial axis.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub dilation: Vec<usize>,
    pub padding: Vec<usize>,
    pub groups: usize,
}

impl ConvGeometry {
    /// Unit stride and dilation, no padding, one group.
    pub fn new(in_channels: usize, out_channels: usize, kernel: impl Into<Vec<usize>>) -> Self {
        let kernel = kernel.into();
        let n = kernel.len();
        ConvGeometry {
            in_channels,
            out_channels,
            kernel,
            stride: vec![1; n],
            dilation: vec![1; n],
            padding: vec![0; n],
            groups: 1,
        }
    }

    pub fn with_stride(mut self, stride: impl Into<Vec<usize>>) -> Self {
        self.stride = stride.into();
        self
    }

    pub fn with_dilation(mut self, dilation: impl Into<Vec<usize>>) -> Self {
        self.dilation = dilation.into();
        self
    }

    pub fn with_padding(mut self, padding: impl Into<Vec<usize>>) -> Self {
        self.padding = padding.into();
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn spatial_axes(&self) -> usize {
        self.kernel.len()
    }

    /// Shape of the kernel tensor: `[D, C/groups, K...]`.
    pub fn kernel_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.out_channels, self.in_channels / self.groups.max(1)];
        dims.extend_from_slice(&self.kernel);
        dims
    }

    /// Checks the geometry on its own, without an input.
    pub fn validate(&self) -> Result<()> {
        let n = self.kernel.len();
        if n == 0 || n > MAX_SPATIAL_AXES {
            return Err(Error::geometry(
                None,
                format!("expected 1 to {MAX_SPATIAL_AXES} spatial axes, got {n}"),
            ));
        }
        for (name, v) in [
            ("stride", &self.stride),
            ("dilation", &self.dilation),
            ("padding", &self.padding),
        ] {
            if v.len() != n {
                return Err(Error::geometry(
                    None,
                    format!("{name} has {} entries for {n} spatial axes", v.len()),
                ));
            }
        }
        for a in 0..n {
            if self.kernel[a] == 0 {
                return Err(Error::geometry(a + 2, "kernel extent must be at least 1"));
            }
            if self.stride[a] == 0 {
                return Err(Error::geometry(a + 2, "stride must be at least 1"));
            }
            if self.dilation[a] == 0 {
                return Err(Error::geometry(a + 2, "dilation must be at least 1"));
            }
        }
        if self.groups == 0 {
            return Err(Error::geometry(1, "groups must be at least 1"));
        }
        if self.in_channels == 0 || self.in_channels % self.groups != 0 {
            return Err(Error::geometry(
                1,
                format!(
                    "{} input channels not divisible into {} groups",
                    self.in_channels, self.groups
                ),
            ));
        }
        if self.out_channels == 0 || self.out_channels % self.groups != 0 {
            return Err(Error::geometry(
                1,
                format!(
                    "{} output channels not divisible into {} groups",
                    self.out_channels, self.groups
                ),
            ));
        }
        Ok(())
    }

    /// Output spatial extents for the given input spatial extents.
    pub fn output_extents(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != self.kernel.len() {
            return Err(Error::geometry(
                None,
                format!(
                    "input has {} spatial axes, geometry has {}",
                    input.len(),
                    self.kernel.len()
                ),
            ));
        }
        (0..input.len())
            .map(|a| {
                conv_output_extent(
                    input[a],
                    self.kernel[a],
                    self.stride[a],
                    self.dilation[a],
                    self.padding[a],
                )
                .map_err(|e| match e {
                    Error::InvalidGeometry { reason, .. } => Error::geometry(a + 2, reason),
                    e => e,
                })
            })
            .collect()
    }
}

/// `floor((T + 2P - D(K-1) - 1) / S) + 1`, the number of kernel placements.
pub fn conv_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Result<usize> {
    if kernel == 0 || stride == 0 || dilation == 0 {
        return Err(Error::geometry(
            None,
            "kernel, stride and dilation must be at least 1",
        ));
    }
    let span = dilation * (kernel - 1) + 1;
    let padded = input + 2 * padding;
    if padded < span {
        return Err(Error::geometry(
            None,
            format!("padded extent {padded} is smaller than kernel span {span}"),
        ));
    }
    Ok((padded - span) / stride + 1)
}
