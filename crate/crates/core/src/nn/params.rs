use super::arch::ArchitectureSpec;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

/// Weight and bias of one parameterised layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Parameters of a model, addressed by layer index. Parameterless layers
/// hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T = f32> {
    layers: Vec<Option<LayerParams<T>>>,
}

/// Gradients share the layout of the parameters they belong to.
pub type Gradients<T = f32> = Parameters<T>;

impl<T: Scalar> Parameters<T> {
    /// All-zero parameters shaped for `spec`.
    pub fn zeros(spec: &ArchitectureSpec) -> Self {
        let mut layers: Vec<Option<LayerParams<T>>> = vec![None; spec.layers().len()];
        for (i, w, b) in spec.parameter_shapes() {
            layers[i] = Some(LayerParams {
                weight: Tensor::zeros(&w).expect("validated shape"),
                bias: Tensor::zeros(&b).expect("validated shape"),
            });
        }
        Parameters { layers }
    }

    /// Assembles parameters from per-layer tensors, checking them against
    /// `spec`.
    pub fn from_layers(spec: &ArchitectureSpec, layers: Vec<Option<LayerParams<T>>>) -> Result<Self> {
        let params = Parameters { layers };
        params.check_against(spec)?;
        Ok(params)
    }

    pub fn check_against(&self, spec: &ArchitectureSpec) -> Result<()> {
        if self.layers.len() != spec.layers().len() {
            return Err(Error::mismatch(
                "parameters",
                &[spec.layers().len()],
                &[self.layers.len()],
            ));
        }
        let shapes = spec.parameter_shapes();
        let present = self.layers.iter().filter(|l| l.is_some()).count();
        if present != shapes.len() {
            return Err(Error::mismatch("parameter tensors", &[shapes.len()], &[present]));
        }
        for (i, w, b) in shapes {
            match &self.layers[i] {
                Some(p) if p.weight.shape() == w && p.bias.shape() == b => {
                    p.weight.check_finite("parameters")?;
                    p.bias.check_finite("parameters")?;
                }
                Some(p) => return Err(Error::mismatch("parameters", &w, p.weight.shape())),
                None => return Err(Error::mismatch("parameters", &w, &[])),
            }
        }
        Ok(())
    }

    pub fn layer(&self, index: usize) -> Option<&LayerParams<T>> {
        self.layers.get(index).and_then(Option::as_ref)
    }

    pub fn layer_mut(&mut self, index: usize) -> Option<&mut LayerParams<T>> {
        self.layers.get_mut(index).and_then(Option::as_mut)
    }

    pub(crate) fn set(&mut self, index: usize, params: LayerParams<T>) {
        self.layers[index] = Some(params);
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Every tensor in layer order, weight before bias.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flatten().flat_map(|p| [&p.weight, &p.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flatten()
            .flat_map(|p| [&mut p.weight, &mut p.bias])
    }

    pub fn count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    l.as_ref().map(|p| LayerParams {
                        weight: p.weight.cast(),
                        bias: p.bias.cast(),
                    })
                })
                .collect(),
        }
    }
}

/// He initialisation: weights ~ N(0, 2 / fan_in), biases zero. Layers are
/// initialised in order from a single stream, so the result depends only on
/// the spec and the generator state.
pub fn init_parameters<T: Scalar>(spec: &ArchitectureSpec, rng: &mut Rng) -> Parameters<T> {
    let mut params = Parameters::zeros(spec);
    for (i, w_shape, _) in spec.parameter_shapes() {
        let fan_in: usize = if w_shape.len() == 4 {
            w_shape[1..].iter().product()
        } else {
            w_shape[0]
        };
        let std = (2.0 / fan_in as f64).sqrt();
        let p = params.layer_mut(i).expect("parameterised layer");
        for v in p.weight.data_mut() {
            *v = T::from_f64(rng.normal() * std);
        }
    }
    params
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_preset, Preset};

    #[test]
    fn deterministic_and_zero_bias() {
        let spec = build_preset(Preset::Mnist, Preset::Mnist.default_paradigm()).unwrap();
        let a: Parameters<f32> = init_parameters(&spec, &mut Rng::new(5));
        let b: Parameters<f32> = init_parameters(&spec, &mut Rng::new(5));
        assert_eq!(a, b);
        assert_eq!(a.count(), spec.count_parameters());
        for (i, ..) in spec.parameter_shapes() {
            assert!(a.layer(i).unwrap().bias.data().iter().all(|&v| v == 0.0));
        }
        a.check_against(&spec).unwrap();
    }

    #[test]
    fn conv_weight_spread_matches_he_scaling() {
        let spec = build_preset(Preset::Mnist, Preset::Mnist.default_paradigm()).unwrap();
        let params: Parameters<f64> = init_parameters(&spec, &mut Rng::new(8));
        // Second conv: 32 -> 32 channels, fan_in = 288, 9216 weights; the
        // third adds 18432 more with fan_in = 288 as well.
        let w: Vec<f64> = [2usize, 5]
            .iter()
            .flat_map(|&i| params.layer(i).unwrap().weight.data().to_vec())
            .collect();
        assert!(w.len() >= 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let target = (2.0f64 / 288.0).sqrt();
        assert!((std - target).abs() / target < 0.05, "{std} vs {target}");
    }
}
