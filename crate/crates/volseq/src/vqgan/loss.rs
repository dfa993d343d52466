//! Adversarial loss over patch logits. The discriminator maximizes
//! log D(X) + log(1 - D(X_hat)); we minimize its negation. The generator
//! uses the non-saturating form -log D(X_hat). Probabilities are clamped
//! to [1e-6, 1 - 1e-6] to protect float32 logs.

use crate::autodiff::{ops, Tensor};
use crate::Result;

pub const PROB_CLAMP: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GanSide {
    Discriminator,
    Generator,
}

fn clamped_prob(logits: &Tensor) -> Result<Tensor> {
    ops::clamp(&ops::sigmoid(logits)?, PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Minimization objective for the requested side, averaged over patches.
pub fn gan_loss(d_real_logits: &Tensor, d_fake_logits: &Tensor, side: GanSide) -> Result<Tensor> {
    match side {
        GanSide::Discriminator => {
            let p_real = clamped_prob(d_real_logits)?;
            let p_fake = clamped_prob(d_fake_logits)?;
            let one = Tensor::scalar(1.0);
            let value = ops::add(
                &ops::mean(&ops::log(&p_real)?)?,
                &ops::mean(&ops::log(&ops::sub(&one, &p_fake)?)?)?,
            )?;
            ops::neg(&value)
        }
        GanSide::Generator => {
            let p_fake = clamped_prob(d_fake_logits)?;
            ops::neg(&ops::mean(&ops::log(&p_fake)?)?)
        }
    }
}

/// The adversarial value itself, log D(X) + log(1 - D(X_hat)); equal to
/// the negated discriminator loss. Zero is its supremum.
pub fn eq_gan_value(d_real_logits: &Tensor, d_fake_logits: &Tensor) -> Result<f32> {
    let loss = gan_loss(d_real_logits, d_fake_logits, GanSide::Discriminator)?;
    Ok(-loss.item()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_probability_fixture() {
        // logits 0 -> p = 0.5 on both sides -> value 2*ln(0.5)
        let zeros = Tensor::zeros(&[1, 1, 2, 2, 2]);
        let v = eq_gan_value(&zeros, &zeros).unwrap();
        let want = 2.0 * 0.5f64.ln();
        assert!((v as f64 - want).abs() < 1e-6, "{v} vs {want}");
    }

    #[test]
    fn perfect_discriminator_approaches_zero() {
        // saturated logits: p_real ~ 1, p_fake ~ 0; value hits the clamped
        // supremum 2*ln(1 - 1e-6), within 1e-5 of zero
        let real = Tensor::full(&[4], 50.0);
        let fake = Tensor::full(&[4], -50.0);
        let v = eq_gan_value(&real, &fake).unwrap();
        assert!(v <= 0.0);
        assert!(v.abs() < 1e-5, "{v}");
    }

    #[test]
    fn generator_loss_decreases_as_fake_probability_rises() {
        let real = Tensor::zeros(&[1]);
        let mut last = f32::INFINITY;
        for logit in [-3.0f32, -1.0, 0.0, 1.0, 3.0] {
            let fake = Tensor::full(&[1], logit);
            let loss = gan_loss(&real, &fake, GanSide::Generator).unwrap().item().unwrap();
            assert!(loss < last, "loss {loss} did not decrease (logit {logit})");
            last = loss;
        }
    }

    #[test]
    fn losses_finite_for_extreme_logits() {
        let real = Tensor::full(&[3], 1e4);
        let fake = Tensor::full(&[3], -1e4);
        for side in [GanSide::Discriminator, GanSide::Generator] {
            let l = gan_loss(&real, &fake, side).unwrap();
            assert!(l.all_finite());
        }
    }
}
