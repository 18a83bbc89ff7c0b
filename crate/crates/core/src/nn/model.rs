use crate::rng::SplitMix64;
use crate::tensor::{argmax, Tensor};

use super::layers::{self, ConvGeom, PoolGeom};
use super::spec::{Activation, LayerSpec, NetworkSpec, PoolKind};
use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
enum Kernel {
    Conv(ConvGeom, Activation),
    MaxPool(PoolGeom),
    AvgPool(PoolGeom),
    Gap,
    Dense,
    Softmax,
}

fn plan(spec: &NetworkSpec) -> Vec<Kernel> {
    spec.layers()
        .iter()
        .zip(spec.info())
        .map(|(layer, info)| {
            let (i, o) = (info.input, info.output);
            match *layer {
                LayerSpec::Conv {
                    kernel,
                    stride,
                    pad,
                    activation,
                    ..
                } => Kernel::Conv(
                    ConvGeom::new(i.channels, i.height, i.width, o.channels, o.height, o.width, kernel, stride, pad),
                    activation,
                ),
                LayerSpec::Pool { kind, kernel, stride } => {
                    let g = PoolGeom::new(i.channels, i.height, i.width, o.height, o.width, kernel, stride);
                    match kind {
                        PoolKind::Max => Kernel::MaxPool(g),
                        PoolKind::Avg => Kernel::AvgPool(g),
                    }
                }
                LayerSpec::Gap => Kernel::Gap,
                LayerSpec::Dense { .. } => Kernel::Dense,
                LayerSpec::Softmax => Kernel::Softmax,
            }
        })
        .collect()
}

/// Expected `(weight, bias)` shapes for a parameterised layer.
pub(crate) fn param_shapes(spec: &NetworkSpec, layer: usize) -> Option<(Vec<usize>, Vec<usize>)> {
    let info = spec.info()[layer];
    match spec.layers()[layer] {
        LayerSpec::Conv {
            out_channels, kernel, ..
        } => Some((vec![out_channels, info.input.channels, kernel, kernel], vec![out_channels])),
        LayerSpec::Dense { units } => Some((vec![units, info.input.len()], vec![units])),
        _ => None,
    }
}

/// A network description together with its weights.
#[derive(Debug, Clone)]
pub struct Model {
    spec: NetworkSpec,
    params: Vec<Option<LayerParams>>,
    seed: u64,
    kernels: Vec<Kernel>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params && self.seed == other.seed
    }
}

/// Activations of one sample through the network: `acts[0]` is the input,
/// `acts[i + 1]` the output of layer `i`.
struct Trace {
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
}

/// Gradients laid out like [`Model`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LayerParams>>,
}

impl Gradients {
    fn zeros_like(model: &Model) -> Self {
        Self {
            layers: model
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weight: Tensor::zeros(p.weight.shape()),
                        bias: Tensor::zeros(p.bias.shape()),
                    })
                })
                .collect(),
        }
    }
}

impl Model {
    /// Uniform `[-a, a]` weights with `a = init_scale / sqrt(fan_in)` drawn
    /// from a SplitMix64 stream seeded by `seed`; zero biases.
    pub fn init(spec: NetworkSpec, seed: u64, init_scale: f64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let params = (0..spec.layers().len())
            .map(|i| {
                param_shapes(&spec, i).map(|(ws, bs)| {
                    let fan_in: usize = ws[1..].iter().product();
                    let a = init_scale / (fan_in as f64).sqrt();
                    LayerParams {
                        weight: Tensor::from_fn(&ws, |_| rng.uniform(-a, a)),
                        bias: Tensor::zeros(&bs),
                    }
                })
            })
            .collect();
        Self::from_parts_unchecked(spec, params, seed)
    }

    pub(crate) fn from_parts_unchecked(spec: NetworkSpec, params: Vec<Option<LayerParams>>, seed: u64) -> Self {
        let kernels = plan(&spec);
        Self {
            spec,
            params,
            seed,
            kernels,
        }
    }

    /// Assembles a model from explicit weights, checking every shape.
    pub fn from_parts(spec: NetworkSpec, params: Vec<Option<LayerParams>>, seed: u64) -> Result<Self, ModelError> {
        if params.len() != spec.layers().len() {
            return Err(ModelError::ParamMismatch {
                layer: params.len().min(spec.layers().len()),
                message: format!("{} parameter slots for {} layers", params.len(), spec.layers().len()),
            });
        }
        for (i, p) in params.iter().enumerate() {
            match (param_shapes(&spec, i), p) {
                (None, None) => {}
                (Some((ws, bs)), Some(p)) if p.weight.shape() == ws && p.bias.shape() == bs => {}
                (expected, _) => {
                    return Err(ModelError::ParamMismatch {
                        layer: i,
                        message: format!("expected parameter shapes {expected:?}"),
                    })
                }
            }
        }
        Ok(Self::from_parts_unchecked(spec, params, seed))
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<LayerParams>] {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    /// Keeps these weights but swaps in a spec with identical parameter
    /// shapes (e.g. after replacing pooling layers).
    pub fn with_spec(&self, spec: NetworkSpec) -> Result<Self, ModelError> {
        Self::from_parts(spec, self.params.clone(), self.seed)
    }

    /// Splits a `[c, h, w]` or `[n, c, h, w]` tensor into per-sample slices.
    fn samples<'a>(&self, x: &'a Tensor) -> Result<Vec<&'a [f64]>, ModelError> {
        let want = self.spec.input().dims();
        let shape = x.shape();
        let ok = match shape.len() {
            3 => shape == want,
            4 => shape[1..] == want,
            _ => false,
        };
        if !ok {
            return Err(ModelError::InputShape {
                expected: want.to_vec(),
                actual: shape.to_vec(),
            });
        }
        let per = want.iter().product::<usize>();
        Ok(x.data().chunks_exact(per).collect())
    }

    fn trace(&self, input: &[f64], upto: usize) -> Trace {
        let mut acts = Vec::with_capacity(upto + 2);
        let mut argmax = vec![Vec::new(); upto + 1];
        acts.push(input.to_vec());
        for i in 0..=upto {
            let out_len = self.spec.info()[i].output.len();
            let mut out = vec![0.0; out_len];
            let x = &acts[i];
            match &self.kernels[i] {
                Kernel::Conv(g, act) => {
                    let p = self.params[i].as_ref().expect("conv params");
                    g.forward(x, p.weight.data(), p.bias.data(), &mut out);
                    if *act == Activation::Relu {
                        out.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                }
                Kernel::MaxPool(g) => {
                    let mut am = vec![0usize; out_len];
                    g.max_forward(x, &mut out, &mut am);
                    argmax[i] = am;
                }
                Kernel::AvgPool(g) => g.avg_forward(x, &mut out),
                Kernel::Gap => layers::gap_forward(x, self.spec.info()[i].input.channels, &mut out),
                Kernel::Dense => {
                    let p = self.params[i].as_ref().expect("dense params");
                    layers::dense_forward(x, p.weight.data(), p.bias.data(), &mut out);
                }
                Kernel::Softmax => layers::softmax(x, &mut out),
            }
            acts.push(out);
        }
        Trace { acts, argmax }
    }

    /// Class scores, shape `[n, classes]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        let samples = self.samples(x)?;
        let last = self.spec.layers().len() - 1;
        let k = self.num_classes();
        let mut data = Vec::with_capacity(samples.len() * k);
        for s in &samples {
            data.extend(self.trace(s, last).acts.pop().expect("output"));
        }
        Ok(Tensor::new(vec![samples.len(), k], data).expect("consistent shape"))
    }

    /// Class scores of a single `[c, h, w]` image.
    pub fn scores(&self, image: &Tensor) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward(image)?.into_data())
    }

    /// Output of layer `layer_index` as `[n, c, h, w]` (flat layers give `h = w = 1`).
    pub fn layer_activations(&self, x: &Tensor, layer_index: usize) -> Result<Tensor, ModelError> {
        let n_layers = self.spec.layers().len();
        if layer_index >= n_layers {
            return Err(ModelError::LayerIndex {
                index: layer_index,
                layers: n_layers,
            });
        }
        let samples = self.samples(x)?;
        let out = self.spec.info()[layer_index].output;
        let mut data = Vec::with_capacity(samples.len() * out.len());
        for s in &samples {
            data.extend(self.trace(s, layer_index).acts.pop().expect("output"));
        }
        Ok(Tensor::new(vec![samples.len(), out.channels, out.height, out.width], data).expect("consistent shape"))
    }

    pub fn predict_top1(&self, image: &Tensor) -> Result<usize, ModelError> {
        let scores = self.forward(image)?;
        if scores.shape()[0] != 1 {
            return Err(ModelError::InputShape {
                expected: self.spec.input().dims().to_vec(),
                actual: image.shape().to_vec(),
            });
        }
        Ok(argmax(scores.data()))
    }

    /// Index of the layer producing logits: the last layer, or the one
    /// before a trailing softmax.
    fn logit_layer(&self) -> usize {
        let last = self.spec.layers().len() - 1;
        if matches!(self.spec.layers()[last], LayerSpec::Softmax) && last > 0 {
            last - 1
        } else {
            last
        }
    }

    fn check_batch(&self, images: &[&Tensor], labels: &[usize]) -> Result<(), ModelError> {
        if images.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if images.len() != labels.len() {
            return Err(ModelError::BatchMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        let k = self.num_classes();
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(ModelError::LabelOutOfRange { label: bad, classes: k });
        }
        Ok(())
    }

    /// Mean softmax cross-entropy of a batch and its parameter gradients.
    pub fn loss_and_gradients(&self, images: &[&Tensor], labels: &[usize]) -> Result<(f64, Gradients), ModelError> {
        let (loss, _, grads) = self.batch_gradients(images, labels)?;
        Ok((loss, grads))
    }

    /// Mean loss, number of correct top-1 predictions and mean gradients.
    pub(crate) fn batch_gradients(&self, images: &[&Tensor], labels: &[usize]) -> Result<(f64, usize, Gradients), ModelError> {
        self.check_batch(images, labels)?;
        let mut grads = Gradients::zeros_like(self);
        let mut loss = 0.0;
        let mut correct = 0;
        for (img, &label) in images.iter().zip(labels) {
            let samples = self.samples(img)?;
            if samples.len() != 1 {
                return Err(ModelError::InputShape {
                    expected: self.spec.input().dims().to_vec(),
                    actual: img.shape().to_vec(),
                });
            }
            let (l, hit) = self.accumulate(samples[0], label, &mut grads);
            loss += l;
            correct += hit as usize;
        }
        let n = images.len() as f64;
        for p in grads.layers.iter_mut().flatten() {
            p.weight.data_mut().iter_mut().for_each(|g| *g /= n);
            p.bias.data_mut().iter_mut().for_each(|g| *g /= n);
        }
        Ok((loss / n, correct, grads))
    }

    /// Backpropagates one sample, adding into `grads`; returns its loss and
    /// whether the pre-update top-1 prediction was correct.
    fn accumulate(&self, input: &[f64], label: usize, grads: &mut Gradients) -> (f64, bool) {
        let top = self.logit_layer();
        let trace = self.trace(input, top);
        let logits = &trace.acts[top + 1];
        let mut probs = vec![0.0; logits.len()];
        layers::softmax(logits, &mut probs);
        let loss = -probs[label].max(f64::MIN_POSITIVE).ln();
        let hit = argmax(&probs) == label;
        let mut grad: Vec<f64> = probs;
        grad[label] -= 1.0;

        for i in (0..=top).rev() {
            let x = &trace.acts[i];
            let y = &trace.acts[i + 1];
            let mut grad_in = vec![0.0; x.len()];
            match &self.kernels[i] {
                Kernel::Conv(g, act) => {
                    if *act == Activation::Relu {
                        for (gv, &yv) in grad.iter_mut().zip(y) {
                            if yv <= 0.0 {
                                *gv = 0.0;
                            }
                        }
                    }
                    let p = self.params[i].as_ref().expect("conv params");
                    let gp = grads.layers[i].as_mut().expect("conv grads");
                    g.backward(x, p.weight.data(), &grad, gp.weight.data_mut(), gp.bias.data_mut(), &mut grad_in);
                }
                Kernel::MaxPool(_) => layers::max_backward(&trace.argmax[i], &grad, &mut grad_in),
                Kernel::AvgPool(g) => g.avg_backward(&grad, &mut grad_in),
                Kernel::Gap => layers::gap_backward(&grad, self.spec.info()[i].input.channels, &mut grad_in),
                Kernel::Dense => {
                    let p = self.params[i].as_ref().expect("dense params");
                    let gp = grads.layers[i].as_mut().expect("dense grads");
                    layers::dense_backward(x, p.weight.data(), &grad, gp.weight.data_mut(), gp.bias.data_mut(), &mut grad_in);
                }
                Kernel::Softmax => layers::softmax_backward(y, &grad, &mut grad_in),
            }
            grad = grad_in;
        }
        (loss, hit)
    }

    /// One plain SGD step on the batch; returns the batch loss measured
    /// before the update.
    pub fn backward_sgd_step(&mut self, images: &[&Tensor], labels: &[usize], lr: f64) -> Result<f64, ModelError> {
        let (loss, grads) = self.loss_and_gradients(images, labels)?;
        self.apply(&grads, lr);
        Ok(loss)
    }

    pub(crate) fn apply(&mut self, grads: &Gradients, lr: f64) {
        if lr == 0.0 {
            return;
        }
        for (p, g) in self.params.iter_mut().zip(&grads.layers) {
            if let (Some(p), Some(g)) = (p.as_mut(), g.as_ref()) {
                for (w, d) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
                    *w -= lr * d;
                }
                for (b, d) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
                    *b -= lr * d;
                }
            }
        }
    }
}
