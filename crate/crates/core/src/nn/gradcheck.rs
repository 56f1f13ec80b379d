//! Central finite-difference checks of the reverse-mode gradients, run at
//! 64-bit precision on small random instances.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{backward, forward, infer, mse, mse_grad, Layer, ModelSpec, ModelState, NnError, Params, Tensor};
use crate::rng;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Largest accepted norm-wise relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Conv2d,
    Relu,
    MaxPool2d,
    Flatten,
    Dense,
    /// The tiny network under MSE loss.
    EndToEnd,
}

impl Target {
    pub const ALL: [Target; 6] = [
        Target::Conv2d,
        Target::Relu,
        Target::MaxPool2d,
        Target::Flatten,
        Target::Dense,
        Target::EndToEnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::Conv2d => "conv2d",
            Target::Relu => "relu",
            Target::MaxPool2d => "maxpool2d",
            Target::Flatten => "flatten",
            Target::Dense => "dense",
            Target::EndToEnd => "tiny-network",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub target: Target,
    pub instances: usize,
    /// Largest relative error over all instances.
    pub worst: f64,
    /// Number of scalar derivatives compared.
    pub derivatives: usize,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.worst < TOLERANCE
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or `‖a − b‖` when both norms are below 1e-8.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// A single-loss problem: network, parameters, input batch and a scalar
/// objective of the network output.
pub struct Instance {
    pub spec: ModelSpec,
    pub state: ModelState<f64>,
    pub input: Tensor<f64>,
    objective: Objective,
}

enum Objective {
    /// `Σ out · r` for a fixed random `r`.
    Projection(Tensor<f64>),
    /// Mean squared error against fixed labels.
    Mse(Tensor<f64>),
}

impl Instance {
    fn loss(&self, state: &ModelState<f64>, input: &Tensor<f64>) -> Result<f64, NnError> {
        let out = infer(&self.spec, state, input, 0, self.spec.layers.len())?;
        match &self.objective {
            Objective::Projection(r) => Ok(out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()),
            Objective::Mse(labels) => mse(&out, labels),
        }
    }

    /// Worst relative error over the parameter and input gradients, and the
    /// number of derivatives compared.
    pub fn check(&self, step: f64) -> Result<(f64, usize), NnError> {
        let (out, cache) = forward(&self.spec, &self.state, &self.input)?;
        let grad_out = match &self.objective {
            Objective::Projection(r) => r.clone(),
            Objective::Mse(labels) => mse_grad(&out, labels)?,
        };
        let grads = backward(&self.spec, &self.state, cache, &grad_out)?;

        let mut worst: f64 = 0.0;
        let mut count = 0;
        for slot in 0..self.state.params.len() {
            for bias in [false, true] {
                let analytic = if bias { &grads.params[slot].bias } else { &grads.params[slot].weight };
                let len = analytic.len();
                let numeric = (0..len)
                    .map(|j| {
                        let at = |delta: f64| {
                            let mut s = self.state.clone();
                            let p = &mut s.params[slot];
                            let t = if bias { &mut p.bias } else { &mut p.weight };
                            t.data_mut()[j] += delta;
                            self.loss(&s, &self.input)
                        };
                        Ok((at(step)? - at(-step)?) / (2.0 * step))
                    })
                    .collect::<Result<Vec<_>, NnError>>()?;
                worst = worst.max(relative_error(analytic.data(), &numeric));
                count += len;
            }
        }
        let numeric = (0..self.input.len())
            .map(|j| {
                let at = |delta: f64| {
                    let mut x = self.input.clone();
                    x.data_mut()[j] += delta;
                    self.loss(&self.state, &x)
                };
                Ok((at(step)? - at(-step)?) / (2.0 * step))
            })
            .collect::<Result<Vec<_>, NnError>>()?;
        worst = worst.max(relative_error(grads.input.data(), &numeric));
        count += self.input.len();
        Ok((worst, count))
    }
}

fn uniform(rng: &mut rng::Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Random instance `index` for `target`. ReLU inputs stay at least 0.05
/// away from the kink and pooling inputs are distinct by at least 0.01, so
/// a step of 1e-5 never crosses a non-differentiable point.
pub fn instance(target: Target, seed: u64, index: usize) -> Instance {
    let mut rng = rng::stream(seed, &[target as u64, index as u64]);
    let bs = rng.random_range(1..=3);
    let (h, w, c) = (rng.random_range(2..=6), rng.random_range(2..=6), rng.random_range(1..=3));
    let (input_shape, layers) = match target {
        Target::Conv2d => ([h, w, c], vec![Layer::Conv2d { out_channels: rng.random_range(1..=3) }]),
        Target::Relu => ([h, w, c], vec![Layer::Relu]),
        Target::MaxPool2d => ([h, w, c], vec![Layer::MaxPool2d]),
        Target::Flatten => ([h, w, c], vec![Layer::Flatten]),
        Target::Dense => (
            [h, w, c],
            vec![Layer::Flatten, Layer::Dense { out_features: rng.random_range(1..=4) }],
        ),
        Target::EndToEnd => {
            let spec = ModelSpec::tiny();
            (spec.input, spec.layers)
        }
    };
    let spec = ModelSpec { input: input_shape, layers };
    let mut batch_shape = vec![bs];
    batch_shape.extend_from_slice(&input_shape);

    let mut input = uniform(&mut rng, &batch_shape, -1.0, 1.0);
    match target {
        Target::Relu => {
            for v in input.data_mut() {
                *v += 0.05f64.copysign(*v);
            }
        }
        Target::MaxPool2d => {
            let n = input.len();
            let mut ranks: Vec<usize> = (0..n).collect();
            ranks.shuffle(&mut rng);
            for (v, r) in input.data_mut().iter_mut().zip(ranks) {
                *v = r as f64 * 0.02 - 1.0 + rng.random_range(0.0..0.005);
            }
        }
        _ => {}
    }

    let init = ModelState::<f64>::init(&spec, rng.random()).expect("valid instance");
    let params = init
        .params
        .iter()
        .map(|p| Params {
            weight: p.weight.clone(),
            bias: uniform(&mut rng, p.bias.shape(), -0.5, 0.5),
        })
        .collect();
    let state = ModelState::from_params(&spec, params).expect("valid instance");
    let out_shape = infer(&spec, &state, &input, 0, spec.layers.len()).expect("valid instance").shape().to_vec();
    let objective = match target {
        Target::EndToEnd => Objective::Mse(uniform(&mut rng, &out_shape, -2.0, 2.0)),
        _ => Objective::Projection(uniform(&mut rng, &out_shape, -1.0, 1.0)),
    };
    Instance { spec, state, input, objective }
}

/// Checks `instances` random instances of `target`.
pub fn run(target: Target, instances: usize, seed: u64) -> Result<Report, NnError> {
    let mut worst: f64 = 0.0;
    let mut derivatives = 0;
    for i in 0..instances {
        let (err, n) = instance(target, seed, i).check(STEP)?;
        worst = worst.max(err);
        derivatives += n;
    }
    Ok(Report { target, instances, worst, derivatives })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((relative_error(&[3.0, 4.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(relative_error(&[0.0], &[1e-10]), 1e-10);
    }

    #[test]
    fn a_few_instances_pass() {
        for t in Target::ALL {
            let r = run(t, 3, 1).unwrap();
            assert!(r.passed(), "{:?}: {}", t, r.worst);
        }
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let inst = instance(Target::Dense, 2, 0);
        let (out, cache) = forward(&inst.spec, &inst.state, &inst.input).unwrap();
        let Objective::Projection(r) = &inst.objective else { unreachable!() };
        let g = backward(&inst.spec, &inst.state, cache, r).unwrap();
        let doubled: Vec<f64> = g.input.data().iter().map(|v| v * 2.0).collect();
        assert!(relative_error(g.input.data(), &doubled) > 0.4);
        assert_eq!(out.shape()[0], inst.input.shape()[0]);
    }
}
