use rand::Rng;

use super::ModelError;
use crate::autodiff::{Graph, Tensor, Var};

/// One linear layer: weight `[out, in]` and bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn fan_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

/// Parameters partitioned into layers θ = {θ^j}. Layer `j` is the weight
/// and bias of the j-th linear map, and is the unit of attenuation.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredParams {
    layers: Vec<Linear>,
}

/// Graph handles for one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars<'g> {
    pub weight: Var<'g>,
    pub bias: Var<'g>,
}

impl LayeredParams {
    pub fn new(layers: Vec<Linear>) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::EmptyArchitecture);
        }
        for (j, l) in layers.iter().enumerate() {
            let (w, b) = (l.weight.shape(), l.bias.shape());
            if w.len() != 2 || b.len() != 1 || b[0] != w[0] {
                return Err(ModelError::LayerShape { layer: j, weight: w.to_vec(), bias: b.to_vec() });
            }
            if w[0] == 0 || w[1] == 0 {
                return Err(ModelError::ZeroSizeLayer(j));
            }
        }
        for (j, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(ModelError::Incompatible { layer: j + 1, expected: pair[0].fan_out(), found: pair[1].fan_in() });
            }
        }
        Ok(Self { layers })
    }

    fn check_sizes(sizes: &[usize]) -> Result<(), ModelError> {
        if sizes.len() < 2 {
            return Err(ModelError::EmptyArchitecture);
        }
        if let Some(j) = sizes.iter().position(|&s| s == 0) {
            return Err(ModelError::ZeroSizeLayer(j));
        }
        Ok(())
    }

    /// Weights uniform in ±√(6 / (fan_in + fan_out)), biases zero.
    pub fn init(sizes: &[usize], rng: &mut impl Rng) -> Result<Self, ModelError> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect();
                Linear {
                    weight: Tensor::matrix(fan_out, fan_in, data).expect("layer shape"),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, ModelError> {
        Self::check_sizes(sizes)?;
        Self::new(
            sizes
                .windows(2)
                .map(|w| Linear { weight: Tensor::zeros(&[w[1], w[0]]), bias: Tensor::zeros(&[w[1]]) })
                .collect(),
        )
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    /// Number of layers `l`.
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// `[in, hidden..., out]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].fan_in()];
        sizes.extend(self.layers.iter().map(Linear::fan_out));
        sizes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    /// Weight then bias of each layer, row-major, in layer order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    /// Inverse of [`Self::flatten`]; returns the number of values consumed.
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<usize, ModelError> {
        let n = self.param_count();
        if values.len() < n {
            return Err(ModelError::FlatLength { expected: n, found: values.len() });
        }
        let mut offset = 0;
        for l in &mut self.layers {
            for t in [&mut l.weight, &mut l.bias] {
                let len = t.numel();
                t.data_mut().copy_from_slice(&values[offset..offset + len]);
                offset += len;
            }
        }
        Ok(offset)
    }

    /// Index range of each layer inside [`Self::flatten`].
    pub fn layer_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.layers
            .iter()
            .map(|l| {
                let r = start..start + l.param_count();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn to_vars<'g>(&self, graph: &'g Graph, trainable: bool) -> Vec<LayerVars<'g>> {
        let leaf = |t: &Tensor| if trainable { graph.param(t.clone()) } else { graph.constant(t.clone()) };
        self.layers.iter().map(|l| LayerVars { weight: leaf(&l.weight), bias: leaf(&l.bias) }).collect()
    }

    /// Snapshot of the current values of graph parameters.
    pub fn from_vars(vars: &[LayerVars<'_>]) -> Result<Self, ModelError> {
        Self::new(
            vars.iter()
                .map(|l| Linear { weight: l.weight.value().as_ref().clone(), bias: l.bias.value().as_ref().clone() })
                .collect(),
        )
    }
}

/// `[w0, b0, w1, b1, ...]`.
pub fn flat_vars<'g>(layers: &[LayerVars<'g>]) -> Vec<Var<'g>> {
    layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
}

/// Inverse of [`flat_vars`].
pub fn pair_vars<'g>(flat: &[Var<'g>]) -> Vec<LayerVars<'g>> {
    flat.chunks(2).map(|c| LayerVars { weight: c[0], bias: c[1] }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn regression_net_has_1761_parameters() {
        let p = LayeredParams::init(&[1, 40, 40, 1], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.layer_count(), 3);
        assert_eq!(p.param_count(), 40 + 40 + 40 * 40 + 40 + 40 + 1);
        assert_eq!(p.param_count(), 1761);
        assert_eq!(p.sizes(), vec![1, 40, 40, 1]);
    }

    #[test]
    fn degenerate_sizes_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(LayeredParams::init(&[1], &mut rng), Err(ModelError::EmptyArchitecture)));
        assert!(matches!(LayeredParams::init(&[1, 0, 1], &mut rng), Err(ModelError::ZeroSizeLayer(1))));
    }

    #[test]
    fn incompatible_layers_rejected() {
        let a = Linear { weight: Tensor::zeros(&[3, 2]), bias: Tensor::zeros(&[3]) };
        let b = Linear { weight: Tensor::zeros(&[1, 4]), bias: Tensor::zeros(&[1]) };
        assert!(matches!(LayeredParams::new(vec![a, b]), Err(ModelError::Incompatible { layer: 1, .. })));
    }

    #[test]
    fn init_is_bounded_with_zero_bias() {
        let p = LayeredParams::init(&[1, 40, 40, 1], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for l in p.layers() {
            let limit = (6.0 / (l.fan_in() + l.fan_out()) as f64).sqrt();
            assert!(l.weight.data().iter().all(|w| w.abs() <= limit));
            assert!(l.bias.data().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn flat_assign_inverts_flatten() {
        let p = LayeredParams::init(&[2, 3, 1], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut q = LayeredParams::zeros(&[2, 3, 1]).unwrap();
        assert_eq!(q.assign_flat(&p.flatten()).unwrap(), p.param_count());
        assert_eq!(p, q);
        assert_eq!(p.layer_ranges(), vec![0..9, 9..13]);
    }
}
