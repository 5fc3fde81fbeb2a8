use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradient of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    /// Index of the layer in its network.
    pub layer: usize,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl ParamGrad {
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        std::iter::once(&self.weight).chain(self.bias.as_ref())
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut())
    }

    fn max_abs_diff(&self, other: &ParamGrad) -> Result<f64> {
        if self.layer != other.layer || self.bias.is_some() != other.bias.is_some() {
            return Err(Error::Shape(format!(
                "gradient layouts differ at layer {} / {}",
                self.layer, other.layer
            )));
        }
        self.tensors()
            .zip(other.tensors())
            .try_fold(0.0, |m, (a, b)| Ok(f64::max(m, a.max_abs_diff(b)?)))
    }
}

/// Batch-summed gradients, one entry per parameterized layer in forward order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub params: Vec<ParamGrad>,
}

impl Grads {
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.params.iter().flat_map(|p| p.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().flat_map(|p| p.tensors_mut())
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors().map(Tensor::sum_squares).sum()
    }

    pub fn scale(&self, s: f64) -> Grads {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            *t = t.scale(s);
        }
        out
    }

    /// Largest absolute difference per parameterized layer.
    pub fn max_abs_diff(&self, other: &Grads) -> Result<Vec<f64>> {
        if self.params.len() != other.params.len() {
            return Err(Error::Shape(format!(
                "{} vs {} parameterized layers",
                self.params.len(),
                other.params.len()
            )));
        }
        self.params
            .iter()
            .zip(&other.params)
            .map(|(a, b)| a.max_abs_diff(b))
            .collect()
    }
}

/// Per-example gradients: every tensor carries a leading batch axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PerExampleGrads {
    batch: usize,
    params: Vec<ParamGrad>,
}

impl PerExampleGrads {
    pub fn new(batch: usize, params: Vec<ParamGrad>) -> Result<Self> {
        for p in &params {
            for t in p.tensors() {
                if t.rank() == 0 || t.batch() != batch {
                    return Err(Error::Shape(format!(
                        "layer {} gradient {} lacks leading batch extent {batch}",
                        p.layer,
                        t.shape()
                    )));
                }
            }
        }
        Ok(PerExampleGrads { batch, params })
    }

    /// Stacks single-example gradients in order.
    pub fn from_examples(examples: &[Grads]) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::Shape("no examples to stack".into()))?;
        let params = (0..first.params.len())
            .map(|i| {
                let p0 = &first.params[i];
                let pick = |f: &dyn Fn(&ParamGrad) -> Option<&Tensor>| -> Result<Option<Tensor>> {
                    if f(p0).is_none() {
                        return Ok(None);
                    }
                    let items = examples
                        .iter()
                        .map(|g| {
                            g.params
                                .get(i)
                                .and_then(f)
                                .cloned()
                                .ok_or_else(|| Error::Shape("inconsistent example layouts".into()))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Tensor::stack(&items).map(Some)
                };
                Ok(ParamGrad {
                    layer: p0.layer,
                    weight: pick(&|p| Some(&p.weight))?.expect("weight always present"),
                    bias: pick(&|p| p.bias.as_ref())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        PerExampleGrads::new(examples.len(), params)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn params(&self) -> &[ParamGrad] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamGrad] {
        &mut self.params
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.params.iter().flat_map(|p| p.tensors())
    }

    /// Gradients of example `b` alone.
    pub fn example(&self, b: usize) -> Result<Grads> {
        let params = self
            .params
            .iter()
            .map(|p| {
                Ok(ParamGrad {
                    layer: p.layer,
                    weight: p.weight.row(b)?,
                    bias: p.bias.as_ref().map(|t| t.row(b)).transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Grads { params })
    }

    pub fn sum_over_batch(&self) -> Result<Grads> {
        let params = self
            .params
            .iter()
            .map(|p| {
                Ok(ParamGrad {
                    layer: p.layer,
                    weight: p.weight.sum_batch()?,
                    bias: p.bias.as_ref().map(Tensor::sum_batch).transpose()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Grads { params })
    }

    /// Largest absolute difference per parameterized layer.
    pub fn max_abs_diff(&self, other: &PerExampleGrads) -> Result<Vec<f64>> {
        if self.batch != other.batch || self.params.len() != other.params.len() {
            return Err(Error::Shape(format!(
                "per-example gradients differ in layout: batch {} vs {}, {} vs {} layers",
                self.batch,
                other.batch,
                self.params.len(),
                other.params.len()
            )));
        }
        self.params
            .iter()
            .zip(&other.params)
            .map(|(a, b)| a.max_abs_diff(b))
            .collect()
    }
}
