use rand::Rng as _;
use rayon::prelude::*;

use super::layers::{self, Hwc};
use super::tensor::{Scalar, Tensor};
use super::NnError;
use crate::rng;

/// One layer descriptor. Convolutions are 3x3, stride 1, same padding;
/// pooling is 2x2, stride 2, floor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Conv2d { out_channels: usize },
    Relu,
    MaxPool2d,
    Flatten,
    Dense { out_features: usize },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d => "maxpool2d",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv2d { .. } | Layer::Dense { .. })
    }
}

/// Architecture: an input shape `(H, W, C)` and an ordered layer list.
///
/// Layers are numbered the way the architecture table numbers them: the
/// input is layer 1, so `layers[i]` is layer `i + 2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub input: [usize; 3],
    pub layers: Vec<Layer>,
}

/// Number of the layer at position `pos` of [`ModelSpec::layers`].
pub fn layer_number(pos: usize) -> usize {
    pos + 2
}

impl ModelSpec {
    /// VGG-style topology with one conv in the first two blocks and two in
    /// the last two, each block closed by ReLU and max pooling.
    pub fn vgg_like(input: [usize; 3], channels: [usize; 4]) -> Self {
        use Layer::*;
        let [c1, c2, c3, c4] = channels;
        ModelSpec {
            input,
            layers: vec![
                Conv2d { out_channels: c1 },
                Relu,
                MaxPool2d,
                Conv2d { out_channels: c2 },
                Relu,
                MaxPool2d,
                Conv2d { out_channels: c3 },
                Conv2d { out_channels: c3 },
                Relu,
                MaxPool2d,
                Conv2d { out_channels: c4 },
                Conv2d { out_channels: c4 },
                Relu,
                MaxPool2d,
                Flatten,
                Dense { out_features: 1 },
            ],
        }
    }

    /// Full-size network: 300x300x3 input, 64/128/256/512 channels.
    pub fn paper() -> Self {
        Self::vgg_like([300, 300, 3], [64, 128, 256, 512])
    }

    /// CPU-sized network: 96x96x3 input, channels scaled by 1/8.
    pub fn desk() -> Self {
        Self::vgg_like([96, 96, 3], [8, 16, 32, 64])
    }

    /// 8x8x3 input, conv channels 2 and 4, one dense output.
    pub fn tiny() -> Self {
        use Layer::*;
        ModelSpec {
            input: [8, 8, 3],
            layers: vec![
                Conv2d { out_channels: 2 },
                Relu,
                MaxPool2d,
                Conv2d { out_channels: 4 },
                Relu,
                MaxPool2d,
                Flatten,
                Dense { out_features: 1 },
            ],
        }
    }

    /// Per-sample shapes: entry 0 is the input, entry `i + 1` the output of
    /// `layers[i]`.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shapes = vec![self.input.to_vec()];
        for (pos, layer) in self.layers.iter().enumerate() {
            let cur = shapes.last().unwrap();
            let bad = |expected: &str| NnError::LayerShape {
                layer: layer_number(pos),
                kind: layer.kind(),
                expected: expected.to_string(),
                found: cur.clone(),
            };
            let next = match *layer {
                Layer::Conv2d { out_channels } => {
                    if cur.len() != 3 || out_channels == 0 {
                        return Err(bad("(H, W, C) input and at least one output channel"));
                    }
                    vec![cur[0], cur[1], out_channels]
                }
                Layer::Relu => cur.clone(),
                Layer::MaxPool2d => {
                    if cur.len() != 3 || cur[0] < 2 || cur[1] < 2 {
                        return Err(bad("(H, W, C) input with H, W >= 2"));
                    }
                    vec![cur[0] / 2, cur[1] / 2, cur[2]]
                }
                Layer::Flatten => {
                    if cur.len() != 3 {
                        return Err(bad("(H, W, C) input"));
                    }
                    vec![cur.iter().product()]
                }
                Layer::Dense { out_features } => {
                    if cur.len() != 1 || out_features == 0 {
                        return Err(bad("flat (N) input and at least one output feature"));
                    }
                    vec![out_features]
                }
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Checks the chain and that the network ends in a single linear unit.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>, NnError> {
        if self.input.contains(&0) {
            return Err(NnError::InvalidSpec("input extents must be positive".into()));
        }
        let shapes = self.shapes()?;
        match self.layers.last() {
            Some(Layer::Dense { out_features: 1 }) => Ok(shapes),
            _ => Err(NnError::InvalidSpec(
                "final layer must be Dense with one output".into(),
            )),
        }
    }

    /// Positions (into `layers`) of the parameterized layers.
    pub fn param_positions(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.has_params())
            .map(|(i, _)| i)
            .collect()
    }

    /// Weight and bias shapes of every parameterized layer, in order.
    pub fn param_shapes(&self) -> Result<Vec<(Vec<usize>, Vec<usize>)>, NnError> {
        let shapes = self.shapes()?;
        Ok(self
            .param_positions()
            .into_iter()
            .map(|pos| match self.layers[pos] {
                Layer::Conv2d { out_channels } => {
                    (vec![3, 3, shapes[pos][2], out_channels], vec![out_channels])
                }
                Layer::Dense { out_features } => {
                    (vec![shapes[pos][0], out_features], vec![out_features])
                }
                _ => unreachable!(),
            })
            .collect())
    }

    /// Stable parameter-set name, e.g. `conv2d_2` or `dense_17`.
    pub fn param_name(&self, slot: usize) -> String {
        let pos = self.param_positions()[slot];
        format!("{}_{}", self.layers[pos].kind(), layer_number(pos))
    }

    fn slot_of(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.layers
            .iter()
            .map(|l| {
                l.has_params().then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    }
}

/// Weight and bias of one parameterized layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros_like(&self) -> Self {
        Params {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }

    pub fn bit_eq(&self, other: &Params<T>) -> bool {
        self.weight.bit_eq(&other.weight) && self.bias.bit_eq(&other.bias)
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Learned parameters plus Adam moments and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    pub params: Vec<Params<T>>,
    pub m: Vec<Params<T>>,
    pub v: Vec<Params<T>>,
    pub step: u64,
    /// Bumped whenever parameters change; forward caches record it.
    pub(crate) version: u64,
}

impl<T: Scalar> ModelState<T> {
    /// Wraps parameters with zeroed optimizer state, checking shapes.
    pub fn from_params(spec: &ModelSpec, params: Vec<Params<T>>) -> Result<Self, NnError> {
        let shapes = spec.param_shapes()?;
        if shapes.len() != params.len() {
            return Err(NnError::ParamCount {
                expected: shapes.len(),
                found: params.len(),
            });
        }
        for (slot, ((ws, bs), p)) in shapes.iter().zip(&params).enumerate() {
            for (expected, found) in [(ws, p.weight.shape()), (bs, p.bias.shape())] {
                if expected.as_slice() != found {
                    return Err(NnError::ParamShape {
                        layer: spec.param_name(slot),
                        expected: expected.clone(),
                        found: found.to_vec(),
                    });
                }
            }
        }
        let m: Vec<_> = params.iter().map(Params::zeros_like).collect();
        Ok(ModelState {
            v: m.clone(),
            m,
            params,
            step: 0,
            version: 0,
        })
    }

    /// He-uniform conv weights, Glorot-uniform dense weights, zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self, NnError> {
        let shapes = spec.param_shapes()?;
        let params = spec
            .param_positions()
            .into_iter()
            .zip(shapes)
            .enumerate()
            .map(|(slot, (pos, (ws, bs)))| {
                let limit = match spec.layers[pos] {
                    Layer::Conv2d { .. } => (6.0 / (9 * ws[2]) as f64).sqrt(),
                    _ => (6.0 / (ws[0] + ws[1]) as f64).sqrt(),
                };
                init_params(&ws, &bs, limit, seed, slot as u64)
            })
            .collect();
        Self::from_params(spec, params)
    }

    /// Re-draws one parameter set (used to attach a fresh regression head).
    pub fn reinit_slot(&mut self, spec: &ModelSpec, slot: usize, seed: u64) -> Result<(), NnError> {
        let fresh = ModelState::<T>::init(spec, seed)?;
        self.params[slot] = fresh.params[slot].clone();
        self.m[slot] = self.params[slot].zeros_like();
        self.v[slot] = self.params[slot].zeros_like();
        self.version += 1;
        Ok(())
    }

    /// Zeroes Adam moments and the step counter.
    pub fn reset_optimizer(&mut self) {
        self.m = self.params.iter().map(Params::zeros_like).collect();
        self.v = self.m.clone();
        self.step = 0;
    }

    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        ModelState {
            params: self.params.iter().map(Params::cast).collect(),
            m: self.m.iter().map(Params::cast).collect(),
            v: self.v.iter().map(Params::cast).collect(),
            step: self.step,
            version: self.version,
        }
    }

    pub(crate) fn touch(&mut self) {
        self.version += 1;
    }
}

fn init_params<T: Scalar>(ws: &[usize], bs: &[usize], limit: f64, seed: u64, slot: u64) -> Params<T> {
    let mut rng = rng::stream(seed, &[0x1417, slot]);
    let n: usize = ws.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.random_range(-limit..limit)))
        .collect();
    Params {
        weight: Tensor::from_vec(ws, data).expect("init shape"),
        bias: Tensor::zeros(bs),
    }
}

/// Activations kept for the backward pass.
#[derive(Debug)]
pub struct ForwardCache<T> {
    start: usize,
    version: u64,
    inputs: Vec<Tensor<T>>,
    argmax: Vec<Option<Vec<u32>>>,
}

impl<T> ForwardCache<T> {
    /// Per-layer inputs; entry `i` feeds `layers[start + i]`.
    pub fn inputs(&self) -> &[Tensor<T>] {
        &self.inputs
    }

    pub fn start(&self) -> usize {
        self.start
    }
}

/// Parameter gradients (shaped like the parameters) and the input gradient.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub params: Vec<Params<T>>,
    pub input: Tensor<T>,
}

fn check_batch<T: Scalar>(
    shapes: &[Vec<usize>],
    pos: usize,
    batch: &Tensor<T>,
) -> Result<usize, NnError> {
    let mut expected = vec![batch.shape().first().copied().unwrap_or(0)];
    expected.extend_from_slice(&shapes[pos]);
    if batch.shape() != expected.as_slice() || expected[0] == 0 {
        return Err(NnError::InputShape {
            layer: if pos == 0 { 1 } else { layer_number(pos) },
            expected,
            found: batch.shape().to_vec(),
        });
    }
    Ok(expected[0])
}

fn dim(shape: &[usize]) -> Hwc {
    Hwc {
        h: shape[0],
        w: shape[1],
        c: shape[2],
    }
}

fn layer_forward<T: Scalar>(
    layer: Layer,
    params: Option<&Params<T>>,
    in_shape: &[usize],
    out_shape: &[usize],
    input: &Tensor<T>,
) -> (Tensor<T>, Option<Vec<u32>>) {
    let bs = input.shape()[0];
    let per_in: usize = in_shape.iter().product();
    let per_out: usize = out_shape.iter().product();
    let mut out = vec![T::zero(); bs * per_out];
    let mut argmax = None;
    match layer {
        Layer::Conv2d { .. } => {
            let p = params.unwrap();
            out.par_chunks_mut(per_out)
                .zip(input.data().par_chunks(per_in))
                .for_each(|(o, x)| {
                    layers::conv2d_forward(x, dim(in_shape), p.weight.data(), p.bias.data(), o)
                });
        }
        Layer::Relu => layers::relu_forward(input.data(), &mut out),
        Layer::MaxPool2d => {
            let mut idx = vec![0u32; bs * per_out];
            out.par_chunks_mut(per_out)
                .zip(idx.par_chunks_mut(per_out))
                .zip(input.data().par_chunks(per_in))
                .for_each(|((o, a), x)| layers::maxpool_forward(x, dim(in_shape), o, a));
            argmax = Some(idx);
        }
        Layer::Flatten => out.copy_from_slice(input.data()),
        Layer::Dense { .. } => {
            let p = params.unwrap();
            out.par_chunks_mut(per_out)
                .zip(input.data().par_chunks(per_in))
                .for_each(|(o, x)| {
                    layers::dense_forward(x, p.weight.data(), p.bias.data(), o)
                });
        }
    }
    let mut shape = vec![bs];
    shape.extend_from_slice(out_shape);
    (Tensor::from_vec(&shape, out).expect("layer output"), argmax)
}

fn run<T: Scalar>(
    spec: &ModelSpec,
    state: &ModelState<T>,
    input: &Tensor<T>,
    start: usize,
    end: usize,
    keep: bool,
) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
    let shapes = spec.shapes()?;
    if start > end || end > spec.layers.len() {
        return Err(NnError::LayerRange { start, end });
    }
    check_batch(&shapes, start, input)?;
    let slots = spec.slot_of();
    let mut cache = ForwardCache {
        start,
        version: state.version,
        inputs: Vec::new(),
        argmax: Vec::new(),
    };
    let mut cur = input.clone();
    for pos in start..end {
        let params = slots[pos].map(|s| &state.params[s]);
        let (next, argmax) = layer_forward(spec.layers[pos], params, &shapes[pos], &shapes[pos + 1], &cur);
        if keep {
            cache.inputs.push(cur);
            cache.argmax.push(argmax);
        }
        cur = next;
    }
    Ok((cur, cache))
}

/// Full forward pass over a `(BS, H, W, C)` batch.
pub fn forward<T: Scalar>(
    spec: &ModelSpec,
    state: &ModelState<T>,
    batch: &Tensor<T>,
) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
    forward_from(spec, state, batch, 0)
}

/// Forward pass over `layers[start..]`; `input` must be the activation
/// entering `layers[start]`.
pub fn forward_from<T: Scalar>(
    spec: &ModelSpec,
    state: &ModelState<T>,
    input: &Tensor<T>,
    start: usize,
) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
    run(spec, state, input, start, spec.layers.len(), true)
}

/// Output of `layers[start..end]` without keeping activations.
pub fn infer<T: Scalar>(
    spec: &ModelSpec,
    state: &ModelState<T>,
    input: &Tensor<T>,
    start: usize,
    end: usize,
) -> Result<Tensor<T>, NnError> {
    run(spec, state, input, start, end, false).map(|(out, _)| out)
}

/// Reverse-mode pass. Every parameterized layer covered by the cache gets a
/// gradient, trainable or not; layers before the cache start get zeros.
pub fn backward<T: Scalar>(
    spec: &ModelSpec,
    state: &ModelState<T>,
    cache: ForwardCache<T>,
    grad_out: &Tensor<T>,
) -> Result<Gradients<T>, NnError> {
    if cache.version != state.version {
        return Err(NnError::StaleCache);
    }
    let n_layers = spec.layers.len();
    if cache.inputs.len() != n_layers - cache.start {
        return Err(NnError::MissingCache);
    }
    let shapes = spec.shapes()?;
    let bs = cache.inputs.first().map(|t| t.shape()[0]).ok_or(NnError::MissingCache)?;
    let mut expected = vec![bs];
    expected.extend_from_slice(&shapes[n_layers]);
    if grad_out.shape() != expected.as_slice() {
        return Err(NnError::InputShape {
            layer: layer_number(n_layers - 1),
            expected,
            found: grad_out.shape().to_vec(),
        });
    }

    let slots = spec.slot_of();
    let mut param_grads: Vec<Params<T>> = state.params.iter().map(Params::zeros_like).collect();
    let mut grad = grad_out.clone();
    let ForwardCache { start, inputs, argmax, .. } = cache;

    for ((pos, input), argmax) in (start..n_layers).zip(inputs).zip(argmax).rev() {
        let in_shape = &shapes[pos];
        let out_shape = &shapes[pos + 1];
        let per_in: usize = in_shape.iter().product();
        let per_out: usize = out_shape.iter().product();
        let mut grad_in = vec![T::zero(); bs * per_in];
        match spec.layers[pos] {
            Layer::Conv2d { out_channels } => {
                let slot = slots[pos].unwrap();
                let w = state.params[slot].weight.data();
                let per_sample: Vec<(Vec<T>, Vec<T>)> = grad_in
                    .par_chunks_mut(per_in)
                    .zip(input.data().par_chunks(per_in))
                    .zip(grad.data().par_chunks(per_out))
                    .map(|((gi, x), go)| layers::conv2d_backward(x, dim(in_shape), w, out_channels, go, gi))
                    .collect();
                param_grads[slot] = reduce(&state.params[slot], per_sample);
            }
            Layer::Relu => layers::relu_backward(input.data(), grad.data(), &mut grad_in),
            Layer::MaxPool2d => {
                let idx = argmax.ok_or(NnError::MissingCache)?;
                grad_in
                    .par_chunks_mut(per_in)
                    .zip(idx.par_chunks(per_out))
                    .zip(grad.data().par_chunks(per_out))
                    .for_each(|((gi, a), go)| layers::maxpool_backward(a, go, gi));
            }
            Layer::Flatten => grad_in.copy_from_slice(grad.data()),
            Layer::Dense { .. } => {
                let slot = slots[pos].unwrap();
                let w = state.params[slot].weight.data();
                let per_sample: Vec<(Vec<T>, Vec<T>)> = grad_in
                    .par_chunks_mut(per_in)
                    .zip(input.data().par_chunks(per_in))
                    .zip(grad.data().par_chunks(per_out))
                    .map(|((gi, x), go)| layers::dense_backward(x, w, go, gi))
                    .collect();
                param_grads[slot] = reduce(&state.params[slot], per_sample);
            }
        }
        let mut shape = vec![bs];
        shape.extend_from_slice(in_shape);
        grad = Tensor::from_vec(&shape, grad_in)?;
    }
    Ok(Gradients {
        params: param_grads,
        input: grad,
    })
}

/// Sums per-sample gradients in sample order at 64-bit precision.
fn reduce<T: Scalar>(like: &Params<T>, per_sample: Vec<(Vec<T>, Vec<T>)>) -> Params<T> {
    let mut dw = vec![0.0f64; like.weight.len()];
    let mut db = vec![0.0f64; like.bias.len()];
    for (w, b) in &per_sample {
        for (acc, &g) in dw.iter_mut().zip(w) {
            *acc += g.as_f64();
        }
        for (acc, &g) in db.iter_mut().zip(b) {
            *acc += g.as_f64();
        }
    }
    let to_t = |v: Vec<f64>| v.into_iter().map(T::from_f64).collect();
    Params {
        weight: Tensor::from_vec(like.weight.shape(), to_t(dw)).expect("grad shape"),
        bias: Tensor::from_vec(like.bias.shape(), to_t(db)).expect("grad shape"),
    }
}
