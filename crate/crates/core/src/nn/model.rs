use super::activation::{relu_backward, relu_forward};
use super::arch::{ArchitectureSpec, LayerDesc};
use super::conv::{conv2d_backward_impl, conv2d_forward};
use super::dense::{dense_backward, dense_forward};
use super::dropout::{apply_mask, dropout_mask};
use super::params::{Gradients, LayerParams, Parameters};
use super::pool::{maxpool2x2_backward, maxpool2x2_forward};
use super::softmax::{softmax_cross_entropy, softmax_cross_entropy_backward};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

#[derive(Debug, Clone)]
enum LayerCache<T> {
    Conv { input: Tensor<T> },
    Pool { indices: Vec<usize>, in_shape: Vec<usize> },
    Relu { output: Tensor<T> },
    Dropout { mask: Tensor<T> },
    Flatten { in_shape: Vec<usize> },
    Dense { input: Tensor<T> },
}

/// What a training-mode forward pass saves for the backward pass: layer
/// inputs, pooling argmax indices, ReLU outputs and dropout masks.
#[derive(Debug, Clone)]
pub struct ForwardCache<T = f32> {
    layers: Vec<LayerCache<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    /// The dropout mask used at each layer (`None` for other layers), for
    /// replaying a forward pass with identical randomness.
    pub fn masks(&self) -> Vec<Option<Tensor<T>>> {
        self.layers
            .iter()
            .map(|l| match l {
                LayerCache::Dropout { mask } => Some(mask.clone()),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T = f32> {
    pub logits: Tensor<T>,
    /// Present only for training-mode passes.
    pub cache: Option<ForwardCache<T>>,
}

enum Masks<'a, T> {
    Eval,
    Sample(&'a mut Rng),
    Fixed(&'a [Option<Tensor<T>>]),
}

fn check_input<T: Scalar>(spec: &ArchitectureSpec, x: &Tensor<T>) -> Result<()> {
    let [c, h, w] = spec.input_shape();
    match *x.shape() {
        [n, xc, xh, xw] if (xc, xh, xw) == (c, h, w) && n > 0 => Ok(()),
        _ => Err(Error::mismatch("model input", &[0, c, h, w], x.shape())),
    }
}

fn layer_params<'a, T: Scalar>(params: &'a Parameters<T>, i: usize) -> Result<&'a LayerParams<T>> {
    params
        .layer(i)
        .ok_or_else(|| Error::InvalidArchitecture(format!("layer {i} has no parameters")))
}

fn run<T: Scalar>(
    spec: &ArchitectureSpec,
    params: &Parameters<T>,
    x: &Tensor<T>,
    mut masks: Masks<'_, T>,
) -> Result<ForwardOutput<T>> {
    check_input(spec, x)?;
    if params.len() != spec.layers().len() {
        return Err(Error::mismatch("parameters", &[spec.layers().len()], &[params.len()]));
    }
    let training = !matches!(masks, Masks::Eval);
    let mut cache = Vec::with_capacity(if training { spec.layers().len() } else { 0 });
    let mut cur = x.clone();
    for (i, layer) in spec.layers().iter().enumerate() {
        let (next, entry) = match *layer {
            LayerDesc::Conv3x3 { .. } => {
                let p = layer_params(params, i)?;
                let y = conv2d_forward(&cur, &p.weight, &p.bias)?;
                (y, LayerCache::Conv { input: cur })
            }
            LayerDesc::MaxPool2x2 => {
                let (y, indices) = maxpool2x2_forward(&cur)?;
                let in_shape = cur.shape().to_vec();
                (y, LayerCache::Pool { indices, in_shape })
            }
            LayerDesc::Relu => {
                let y = relu_forward(&cur);
                let output = if training { y.clone() } else { cur };
                (y, LayerCache::Relu { output })
            }
            LayerDesc::Dropout { rate, mode } => match &mut masks {
                // Eval-mode entries are discarded below.
                Masks::Eval => (cur, LayerCache::Flatten { in_shape: Vec::new() }),
                Masks::Sample(rng) => {
                    let mask = dropout_mask(cur.shape(), rate, mode, rng)?;
                    (apply_mask(&cur, &mask)?, LayerCache::Dropout { mask })
                }
                Masks::Fixed(fixed) => {
                    let mask = fixed
                        .get(i)
                        .and_then(Option::as_ref)
                        .ok_or(Error::MissingCache(i))?
                        .clone();
                    (apply_mask(&cur, &mask)?, LayerCache::Dropout { mask })
                }
            },
            LayerDesc::Flatten => {
                let in_shape = cur.shape().to_vec();
                let n = in_shape[0];
                let rest = cur.len() / n;
                (cur.reshape(&[n, rest])?, LayerCache::Flatten { in_shape })
            }
            LayerDesc::Dense { .. } | LayerDesc::SoftmaxClassifier { .. } => {
                let p = layer_params(params, i)?;
                let y = dense_forward(&cur, &p.weight, &p.bias)?;
                (y, LayerCache::Dense { input: cur })
            }
        };
        if training {
            cache.push(entry);
        }
        cur = next;
    }
    cur.check_finite("logits")?;
    Ok(ForwardOutput {
        logits: cur,
        cache: training.then_some(ForwardCache { layers: cache }),
    })
}

/// Runs every layer in order and returns the logits. In training mode
/// dropout masks are drawn from `rng` and a cache is returned; in eval mode
/// dropout is the identity, `rng` is not touched and no cache is kept.
pub fn model_forward<T: Scalar>(
    spec: &ArchitectureSpec,
    params: &Parameters<T>,
    x: &Tensor<T>,
    training: bool,
    rng: &mut Rng,
) -> Result<ForwardOutput<T>> {
    let masks = if training { Masks::Sample(rng) } else { Masks::Eval };
    run(spec, params, x, masks)
}

/// Training-mode forward with dropout masks supplied by the caller (indexed
/// by layer, as returned by [`ForwardCache::masks`]).
pub fn model_forward_with_masks<T: Scalar>(
    spec: &ArchitectureSpec,
    params: &Parameters<T>,
    x: &Tensor<T>,
    masks: &[Option<Tensor<T>>],
) -> Result<ForwardOutput<T>> {
    run(spec, params, x, Masks::Fixed(masks))
}

/// Eval-mode logits.
pub fn predict<T: Scalar>(spec: &ArchitectureSpec, params: &Parameters<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(run(spec, params, x, Masks::Eval)?.logits)
}

/// Chain rule through the cached forward pass, from `upstream` (the
/// gradient of the loss with respect to the logits) back to every
/// parameter.
pub fn model_backward<T: Scalar>(
    spec: &ArchitectureSpec,
    params: &Parameters<T>,
    cache: &ForwardCache<T>,
    upstream: &Tensor<T>,
) -> Result<Gradients<T>> {
    if cache.layers.len() != spec.layers().len() {
        return Err(Error::MissingCache(cache.layers.len()));
    }
    let mut grads = Parameters::zeros(spec);
    let mut g = upstream.clone();
    for (i, (layer, entry)) in spec.layers().iter().zip(&cache.layers).enumerate().rev() {
        g = match (layer, entry) {
            (LayerDesc::Conv3x3 { .. }, LayerCache::Conv { input }) => {
                let p = layer_params(params, i)?;
                let (dx, dw, db) = conv2d_backward_impl(input, &p.weight, &g, i > 0)?;
                grads.set(i, LayerParams { weight: dw, bias: db });
                match dx {
                    Some(dx) => dx,
                    None => break,
                }
            }
            (LayerDesc::MaxPool2x2, LayerCache::Pool { indices, in_shape }) => {
                maxpool2x2_backward(&g, indices, in_shape)?
            }
            (LayerDesc::Relu, LayerCache::Relu { output }) => relu_backward(&g, output)?,
            (LayerDesc::Dropout { .. }, LayerCache::Dropout { mask }) => apply_mask(&g, mask)?,
            (LayerDesc::Flatten, LayerCache::Flatten { in_shape }) => g.reshape(in_shape)?,
            (LayerDesc::Dense { .. } | LayerDesc::SoftmaxClassifier { .. }, LayerCache::Dense { input }) => {
                let p = layer_params(params, i)?;
                let d = dense_backward(input, &p.weight, &g)?;
                grads.set(i, LayerParams { weight: d.dw, bias: d.db });
                d.dx
            }
            _ => return Err(Error::MissingCache(i)),
        };
    }
    Ok(grads)
}

/// Result of one forward/backward pass on a labelled batch.
#[derive(Debug, Clone)]
pub struct StepOutput<T = f32> {
    pub loss: f64,
    pub correct: usize,
    pub grads: Gradients<T>,
}

/// Training-mode forward, mean cross-entropy, and backward in one call.
pub fn loss_and_gradients<T: Scalar>(
    spec: &ArchitectureSpec,
    params: &Parameters<T>,
    x: &Tensor<T>,
    labels: &[usize],
    rng: &mut Rng,
) -> Result<StepOutput<T>> {
    let out = model_forward(spec, params, x, true, rng)?;
    let (loss, probs) = softmax_cross_entropy(&out.logits, labels)?;
    let correct = count_correct(&out.logits, labels);
    let dlogits = softmax_cross_entropy_backward(&probs, labels)?;
    let cache = out.cache.expect("training forward keeps a cache");
    let grads = model_backward(spec, params, &cache, &dlogits)?;
    Ok(StepOutput { loss, correct, grads })
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn count_correct<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    argmax_rows(logits)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_preset, init_parameters, DropoutParadigm, Placement, Preset};

    fn mnist() -> ArchitectureSpec {
        build_preset(
            Preset::Mnist,
            DropoutParadigm::Combined {
                pool_rate: 0.125,
                fc_rate: 0.4,
                placement: Placement::BeforePool,
            },
        )
        .unwrap()
    }

    fn batch(n: usize, seed: u64) -> Tensor<f32> {
        let mut rng = Rng::new(seed);
        Tensor::from_vec(&[n, 1, 28, 28], (0..n * 784).map(|_| rng.uniform() as f32).collect()).unwrap()
    }

    #[test]
    fn eval_logits_shape_and_determinism() {
        let spec = mnist();
        let params: Parameters<f32> = init_parameters(&spec, &mut Rng::new(1));
        let x = batch(3, 2);
        let mut rng = Rng::new(9);
        let before = rng.clone().next_u64();
        let a = model_forward(&spec, &params, &x, false, &mut rng).unwrap();
        let b = model_forward(&spec, &params, &x, false, &mut rng).unwrap();
        assert_eq!(a.logits.shape(), &[3, 10]);
        assert_eq!(a.logits, b.logits);
        assert!(a.cache.is_none());
        assert_eq!(rng.next_u64(), before, "eval mode must not consume randomness");
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = mnist();
        let params: Parameters<f32> = init_parameters(&spec, &mut Rng::new(1));
        let out = model_forward(&spec, &params, &batch(2, 3), true, &mut Rng::new(4)).unwrap();
        let zero = Tensor::zeros(&[2, 10]).unwrap();
        let grads = model_backward(&spec, &params, out.cache.as_ref().unwrap(), &zero).unwrap();
        assert!(grads.tensors().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn gradient_shapes_match_parameters_for_every_preset() {
        for preset in Preset::ALL {
            let spec = build_preset(preset, preset.default_paradigm()).unwrap();
            let params: Parameters<f32> = init_parameters(&spec, &mut Rng::new(0));
            let [c, h, w] = spec.input_shape();
            let x = Tensor::new(&[1, c, h, w], 0.5f32).unwrap();
            let step = loss_and_gradients(&spec, &params, &x, &[1], &mut Rng::new(1)).unwrap();
            let shapes: Vec<_> = params.tensors().map(|t| t.shape().to_vec()).collect();
            let gshapes: Vec<_> = step.grads.tensors().map(|t| t.shape().to_vec()).collect();
            assert_eq!(shapes, gshapes, "{preset}");
        }
    }

    #[test]
    fn wrong_input_and_missing_cache() {
        let spec = mnist();
        let params: Parameters<f32> = init_parameters(&spec, &mut Rng::new(1));
        let x = Tensor::<f32>::zeros(&[1, 1, 32, 32]).unwrap();
        assert!(predict(&spec, &params, &x).is_err());
        let empty = ForwardCache { layers: Vec::new() };
        let up = Tensor::zeros(&[1, 10]).unwrap();
        assert!(matches!(model_backward(&spec, &params, &empty, &up), Err(Error::MissingCache(_))));
    }

    #[test]
    fn argmax_ties_go_low() {
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![1., 1., 0., 0., 2., 2.]).unwrap();
        assert_eq!(argmax_rows(&t), vec![0, 1]);
    }
}
