//! Reconstruction, adversarial and repairing objectives.
//!
//! Squared errors are mean-reduced over pixels. The adversarial terms follow the
//! usual alternating scheme: the discriminator minimises
//! `E[-log D(real)] + E[-log(1 - D(fake))]` and the generator minimises the
//! non-saturating `-log D(fake)`, scaled by `lambda_g`.

use serde::{Deserialize, Serialize};

use crate::nn::{Scalar, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_g: f64,
    pub lambda_global: f64,
    pub lambda_local: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_g: 0.01,
            lambda_global: 0.25,
            lambda_local: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_g, self.lambda_global, self.lambda_local]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

fn same_len<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::arg(format!("shape mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn mse<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    same_len(a, b)?;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.to_f64().unwrap() - y.to_f64().unwrap();
            d * d
        })
        .sum::<f64>()
        / a.len() as f64)
}

/// Gradient of [`mse`] with respect to `a`, scaled by `weight`.
pub fn mse_grad<T: Scalar>(a: &[T], b: &[T], weight: f64) -> Vec<T> {
    let s = T::of(2.0 * weight / a.len() as f64);
    a.iter().zip(b).map(|(&x, &y)| s * (x - y)).collect()
}

pub fn masked_mse<T: Scalar>(a: &[T], b: &[T], mask: &[T]) -> Result<f64> {
    same_len(a, b)?;
    same_len(a, mask)?;
    let ma: Vec<T> = a.iter().zip(mask).map(|(&x, &m)| x * m).collect();
    let mb: Vec<T> = b.iter().zip(mask).map(|(&x, &m)| x * m).collect();
    mse(&ma, &mb)
}

/// Proxy prediction loss: mean squared error between predicted and target proxy.
pub fn loss_proxy<T: Scalar>(predicted: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if predicted.shape() != target.shape() {
        return Err(Error::arg("proxy shapes differ"));
    }
    mse(&predicted.data, &target.data)
}

/// Generator-side term `E[-log D(fake)]` over a probability map.
pub fn generator_adversarial(d_fake: &[f64]) -> f64 {
    d_fake.iter().map(|&p| -p.max(f64::MIN_POSITIVE).ln()).sum::<f64>() / d_fake.len() as f64
}

/// Discriminator objective `E[-log D(real)] + E[-log(1 - D(fake))]`.
pub fn discriminator_loss(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let real = d_real.iter().map(|&p| -p.max(f64::MIN_POSITIVE).ln()).sum::<f64>() / d_real.len() as f64;
    let fake = d_fake
        .iter()
        .map(|&p| -(1.0 - p).max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / d_fake.len() as f64;
    real + fake
}

/// Normal reconstruction loss `MSE(Î, I) + λ_g · E[-log D(Î)]`.
pub fn loss_rec<T: Scalar>(
    reconstruction: &Tensor<T>,
    image: &Tensor<T>,
    d_fake: &[f64],
    lambda_g: f64,
) -> Result<f64> {
    if reconstruction.shape() != image.shape() {
        return Err(Error::arg("reconstruction shape differs from image"));
    }
    let adv = if lambda_g == 0.0 { 0.0 } else { lambda_g * generator_adversarial(d_fake) };
    Ok(mse(&reconstruction.data, &image.data)? + adv)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RepairingLoss {
    pub global: f64,
    pub local: f64,
    /// `λ_global · global + λ_local · local`.
    pub total: f64,
}

/// Repairing loss for the reconstruction `Î′` of a pseudo-abnormal proxy.
///
/// `d_global` scores `Î′`, `d_local` scores `M ⊙ Î′`.
pub fn loss_repairing<T: Scalar>(
    reconstruction: &Tensor<T>,
    image: &Tensor<T>,
    mask: &[T],
    d_global: &[f64],
    d_local: &[f64],
    weights: &LossWeights,
) -> Result<RepairingLoss> {
    if reconstruction.shape() != image.shape() || mask.len() != image.plane() {
        return Err(Error::arg("repairing loss operands differ in shape"));
    }
    let adv = |d: &[f64]| {
        if weights.lambda_g == 0.0 {
            0.0
        } else {
            weights.lambda_g * generator_adversarial(d)
        }
    };
    let global = mse(&reconstruction.data, &image.data)? + adv(d_global);
    let local = mse(&reconstruction.masked(mask).data, &image.masked(mask).data)? + adv(d_local);
    Ok(RepairingLoss {
        global,
        local,
        total: weights.lambda_global * global + weights.lambda_local * local,
    })
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean binary cross-entropy of a logit map against a constant target, and
/// its gradient with respect to the logits (scaled by `weight`).
pub fn bce_with_logits(logits: &Tensor<f32>, real: bool, weight: f64) -> (f64, Tensor<f32>) {
    let n = logits.data.len() as f64;
    let mut value = 0.0;
    let grad = logits.map(|l| {
        let l = l as f64;
        let g = if real { sigmoid(l) - 1.0 } else { sigmoid(l) };
        (weight * g / n) as f32
    });
    for &l in &logits.data {
        let l = l as f64;
        value += if real { softplus(-l) } else { softplus(l) };
    }
    (value / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f64>) -> Tensor<f64> {
        let n = v.len();
        Tensor::from_vec(1, 1, n, v)
    }

    #[test]
    fn proxy_loss_basics() {
        let p = t(vec![0.1, 0.5, 0.9, 0.3]);
        assert_eq!(loss_proxy(&p, &p).unwrap(), 0.0);
        let shifted = p.map(|v| v + 0.1);
        assert!((loss_proxy(&shifted, &p).unwrap() - 0.01).abs() < 1e-12);
        assert!(loss_proxy(&t(vec![0.0; 3]), &p).is_err());
    }

    #[test]
    fn rec_loss_plug_in_values() {
        let img = t(vec![0.2, 0.4, 0.6, 0.8]);
        let v = loss_rec(&img, &img, &[0.5; 9], 0.01).unwrap();
        assert!((v - 0.01 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((v - 0.006931).abs() < 1e-6);
        let off = img.map(|x| x + 0.2);
        assert!((loss_rec(&off, &img, &[0.5; 9], 0.0).unwrap() - 0.04).abs() < 1e-12);
        assert!(loss_rec(&img, &img, &[1.0; 9], 0.01).unwrap().abs() < 1e-15);
    }

    #[test]
    fn repairing_plug_in_values() {
        let img = t(vec![0.2, 0.4, 0.6, 0.8]);
        let mask = vec![1.0, 0.0, 1.0, 0.0];
        let w = LossWeights::default();
        let r = loss_repairing(&img, &img, &mask, &[0.5; 4], &[0.5; 4], &w).unwrap();
        assert!((r.total - 0.75 * 0.01 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((r.total - 0.005199).abs() < 1e-6);

        let other = t(vec![0.9, 0.1, 0.3, 0.5]);
        let r = loss_repairing(&other, &img, &[0.0; 4], &[0.5; 4], &[0.5; 4], &LossWeights { lambda_g: 0.0, ..w }).unwrap();
        assert_eq!(r.local, 0.0);
        let zero = LossWeights {
            lambda_global: 0.0,
            lambda_local: 0.0,
            ..w
        };
        assert_eq!(loss_repairing(&other, &img, &mask, &[0.3; 4], &[0.2; 4], &zero).unwrap().total, 0.0);
    }

    #[test]
    fn logit_bce_matches_probability_form() {
        let logits = Tensor::from_vec(1, 1, 4, vec![-2.0f32, -0.1, 0.7, 3.0]);
        let probs: Vec<f64> = logits.data.iter().map(|&l| sigmoid(l as f64)).collect();
        let (real, _) = bce_with_logits(&logits, true, 1.0);
        let (fake, _) = bce_with_logits(&logits, false, 1.0);
        assert!((real - generator_adversarial(&probs)).abs() < 1e-7);
        assert!((real + fake - discriminator_loss(&probs, &probs)).abs() < 1e-7);
    }

    #[test]
    fn logit_bce_gradient_matches_finite_differences() {
        let base = vec![-1.3f32, 0.2, 0.9];
        for real in [true, false] {
            let (_, g) = bce_with_logits(&Tensor::from_vec(1, 1, 3, base.clone()), real, 1.0);
            for i in 0..3 {
                let h = 1e-3f32;
                let mut p = base.clone();
                p[i] += h;
                let mut m = base.clone();
                m[i] -= h;
                let fp = bce_with_logits(&Tensor::from_vec(1, 1, 3, p), real, 1.0).0;
                let fm = bce_with_logits(&Tensor::from_vec(1, 1, 3, m), real, 1.0).0;
                let fd = (fp - fm) / (2.0 * h as f64);
                assert!((fd - g.data[i] as f64).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
    }
}
