use super::model::{Gradients, Layer, ModelSpec, ModelState};
use super::tensor::Scalar;
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Trainable flag per parameterized layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreezeMask {
    pub trainable: Vec<bool>,
}

impl FreezeMask {
    pub fn all_trainable(spec: &ModelSpec) -> Self {
        FreezeMask {
            trainable: vec![true; spec.param_positions().len()],
        }
    }

    /// Transfer-learning stage: only dense layers train.
    pub fn freeze_convs(spec: &ModelSpec) -> Self {
        Self::by_kind(spec, |l| matches!(l, Layer::Dense { .. }))
    }

    /// Fine-tuning stage: the final dense head is frozen, everything else trains.
    pub fn freeze_head(spec: &ModelSpec) -> Self {
        let mut mask = Self::all_trainable(spec);
        if let Some(last) = mask.trainable.last_mut() {
            *last = false;
        }
        mask
    }

    fn by_kind(spec: &ModelSpec, f: impl Fn(&Layer) -> bool) -> Self {
        FreezeMask {
            trainable: spec
                .param_positions()
                .into_iter()
                .map(|p| f(&spec.layers[p]))
                .collect(),
        }
    }

    pub fn any_trainable(&self) -> bool {
        self.trainable.iter().any(|&t| t)
    }
}

/// One bias-corrected Adam update on the trainable layers. Frozen layers
/// (parameters and moments) are left untouched. The step counter advances
/// once per call.
pub fn adam_step<T: Scalar>(
    spec: &ModelSpec,
    state: &mut ModelState<T>,
    grads: &Gradients<T>,
    mask: &FreezeMask,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    if mask.trainable.len() != state.params.len() || grads.params.len() != state.params.len() {
        return Err(NnError::ParamCount {
            expected: state.params.len(),
            found: mask.trainable.len().min(grads.params.len()),
        });
    }
    if !mask.any_trainable() {
        return Err(NnError::NothingTrainable);
    }
    for (slot, g) in grads.params.iter().enumerate() {
        if mask.trainable[slot] && !(g.weight.all_finite() && g.bias.all_finite()) {
            return Err(NnError::NonFiniteGradient {
                layer: spec.param_name(slot),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (cfg.beta1, cfg.beta2);

    for slot in 0..state.params.len() {
        if !mask.trainable[slot] {
            continue;
        }
        let g = &grads.params[slot];
        let p = &mut state.params[slot];
        let m = &mut state.m[slot];
        let v = &mut state.v[slot];
        let pairs = [
            (p.weight.data_mut(), m.weight.data_mut(), v.weight.data_mut(), g.weight.data()),
            (p.bias.data_mut(), m.bias.data_mut(), v.bias.data_mut(), g.bias.data()),
        ];
        for (p, m, v, g) in pairs {
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                let g = g.as_f64();
                let mn = b1 * m.as_f64() + (1.0 - b1) * g;
                let vn = b2 * v.as_f64() + (1.0 - b2) * g * g;
                *m = T::from_f64(mn);
                *v = T::from_f64(vn);
                let update = lr * (mn / c1) / ((vn / c2).sqrt() + cfg.eps);
                *p = T::from_f64(p.as_f64() - update);
            }
        }
    }
    state.touch();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward, Params, Tensor};

    fn scalar_model() -> (ModelSpec, ModelState<f64>) {
        let spec = ModelSpec {
            input: [1, 1, 1],
            layers: vec![Layer::Flatten, Layer::Dense { out_features: 1 }],
        };
        let params = vec![Params {
            weight: Tensor::from_vec(&[1, 1], vec![0.5]).unwrap(),
            bias: Tensor::zeros(&[1]),
        }];
        let state = ModelState::from_params(&spec, params).unwrap();
        (spec, state)
    }

    fn grads_of(value: f64) -> Gradients<f64> {
        Gradients {
            params: vec![Params {
                weight: Tensor::from_vec(&[1, 1], vec![value]).unwrap(),
                bias: Tensor::from_vec(&[1], vec![value]).unwrap(),
            }],
            input: Tensor::zeros(&[1, 1, 1, 1]),
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (spec, mut state) = scalar_model();
        let before = state.params.clone();
        let mask = FreezeMask::all_trainable(&spec);
        adam_step(&spec, &mut state, &grads_of(0.0), &mask, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(state.params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        // m = 0.1, v = 0.001; corrected m_hat = 1, v_hat = 1 -> delta = -lr / (1 + eps)
        let (spec, mut state) = scalar_model();
        let lr = 1e-3;
        let mask = FreezeMask::all_trainable(&spec);
        adam_step(&spec, &mut state, &grads_of(1.0), &mask, lr, &AdamConfig::default()).unwrap();
        let delta = state.params[0].weight.data()[0] - 0.5;
        assert!((delta + lr / (1.0 + 1e-8)).abs() < 1e-15, "delta = {delta}");
        assert!((state.m[0].weight.data()[0] - 0.1).abs() < 1e-15);
        assert!((state.v[0].weight.data()[0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn fully_frozen_mask_is_rejected() {
        let (spec, mut state) = scalar_model();
        let mask = FreezeMask { trainable: vec![false] };
        let err = adam_step(&spec, &mut state, &grads_of(1.0), &mask, 1e-3, &AdamConfig::default());
        assert!(matches!(err, Err(NnError::NothingTrainable)));
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let (spec, mut state) = scalar_model();
        let before = state.clone();
        let mask = FreezeMask::all_trainable(&spec);
        let err = adam_step(&spec, &mut state, &grads_of(f64::NAN), &mask, 1e-3, &AdamConfig::default());
        match err {
            Err(NnError::NonFiniteGradient { layer }) => assert_eq!(layer, "dense_3"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(state, before);
    }

    #[test]
    fn masks_for_the_two_stages() {
        let spec = ModelSpec::desk();
        let convs = FreezeMask::freeze_convs(&spec);
        let head = FreezeMask::freeze_head(&spec);
        assert_eq!(convs.trainable, vec![false, false, false, false, false, false, true]);
        assert_eq!(head.trainable, vec![true, true, true, true, true, true, false]);
    }

    #[test]
    fn frozen_layers_are_bit_identical() {
        let spec = ModelSpec::tiny();
        let mut state = ModelState::<f64>::init(&spec, 4).unwrap();
        let batch = Tensor::full(&[2, 8, 8, 3], 0.3);
        let (pred, cache) = forward(&spec, &state, &batch).unwrap();
        let grads = crate::nn::backward(&spec, &state, cache, &pred).unwrap();
        let before = state.params.clone();
        let mask = FreezeMask::freeze_convs(&spec);
        adam_step(&spec, &mut state, &grads, &mask, 1e-2, &AdamConfig::default()).unwrap();
        assert!(state.params[0].bit_eq(&before[0]));
        assert!(state.params[1].bit_eq(&before[1]));
        assert!(!state.params[2].bit_eq(&before[2]));
    }
}
