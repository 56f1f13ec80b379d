use super::tensor::{Scalar, Tensor};
use super::NnError;

fn check<T: Scalar>(pred: &Tensor<T>, label: &Tensor<T>) -> Result<(), NnError> {
    if pred.shape() != label.shape() {
        return Err(NnError::LossShape {
            pred: pred.shape().to_vec(),
            label: label.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean of squared differences over all elements.
pub fn mse<T: Scalar>(pred: &Tensor<T>, label: &Tensor<T>) -> Result<f64, NnError> {
    check(pred, label)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(label.data())
        .map(|(&p, &l)| {
            let d = p.as_f64() - l.as_f64();
            d * d
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`mse`] with respect to `pred`.
pub fn mse_grad<T: Scalar>(pred: &Tensor<T>, label: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    check(pred, label)?;
    let scale = 2.0 / pred.len() as f64;
    let data = pred
        .data()
        .iter()
        .zip(label.data())
        .map(|(&p, &l)| T::from_f64(scale * (p.as_f64() - l.as_f64())))
        .collect();
    Tensor::from_vec(pred.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        let a = Tensor::<f64>::from_vec(&[2, 1], vec![1.0, 2.0]).unwrap();
        let z = Tensor::<f64>::zeros(&[2, 1]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &z).unwrap(), 2.5);
        assert_eq!(mse_grad(&a, &z).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 1]);
        let b = Tensor::<f64>::zeros(&[1, 2]);
        assert!(mse(&a, &b).is_err());
    }

    #[test]
    fn matches_scalar_loop() {
        use rand::Rng as _;
        let mut rng = crate::rng::stream(11, &[]);
        let p: Vec<f64> = (0..257).map(|_| rng.random_range(-5.0..5.0)).collect();
        let l: Vec<f64> = (0..257).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut oracle = 0.0;
        for i in 0..p.len() {
            oracle += (p[i] - l[i]) * (p[i] - l[i]);
        }
        oracle /= p.len() as f64;
        let got = mse(
            &Tensor::from_vec(&[257], p).unwrap(),
            &Tensor::from_vec(&[257], l).unwrap(),
        )
        .unwrap();
        assert!(((got - oracle) / oracle).abs() < 1e-12);
    }
}
