use super::network::Parameter;
use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::with_lr(1e-3)
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }

    /// Applies one update to every parameter. Nothing is modified when any
    /// gradient is non-finite.
    pub fn step(&self, params: &mut [Parameter], grads: &[Vec<f32>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if g.len() != p.value.len() {
                return Err(Error::Shape(format!(
                    "gradient for {} has {} entries, parameter has {}",
                    p.name,
                    g.len(),
                    p.value.len()
                )));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {} at {}[{i}] (step {})",
                    g[i],
                    p.name,
                    p.step + 1
                )));
            }
        }
        for (p, g) in params.iter_mut().zip(grads) {
            p.step += 1;
            let t = p.step as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
            let data = p.value.data_mut();
            for (((w, m), v), &gi) in data.iter_mut().zip(p.m.iter_mut()).zip(p.v.iter_mut()).zip(g) {
                *m = b1 * *m + (1.0 - b1) * gi;
                *v = b2 * *v + (1.0 - b2) * gi * gi;
                let m_hat = *m as f64 / c1;
                let v_hat = *v as f64 / c2;
                *w -= (self.lr * m_hat / (v_hat.sqrt() + self.eps)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn scalar_param(w: f32) -> Parameter {
        Parameter::new("w", Tensor::new(&[1], vec![w]).unwrap())
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.5f32, -3.0, 1e-3] {
            let mut p = [scalar_param(1.0)];
            Adam::with_lr(0.01).step(&mut p, &[vec![g]]).unwrap();
            let delta = (1.0 - p[0].value.data()[0]) as f64;
            let expected = 0.01 * g as f64 / (g.abs() as f64 + 1e-7);
            assert!((delta - expected).abs() < 5e-7, "g={g}: {delta} vs {expected}");
            assert_eq!(p[0].step, 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = [scalar_param(0.25)];
        Adam::default().step(&mut p, &[vec![0.0]]).unwrap();
        assert_eq!(p[0].value.data()[0], 0.25);
    }

    #[test]
    fn descends_on_square() {
        let mut p = [scalar_param(1.0)];
        let adam = Adam::with_lr(0.1);
        let mut prev = 1.0;
        for _ in 0..2 {
            let w = p[0].value.data()[0];
            adam.step(&mut p, &[vec![2.0 * w]]).unwrap();
            let now = p[0].value.data()[0];
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = [scalar_param(1.0), scalar_param(2.0)];
        let err = Adam::default().step(&mut p, &[vec![1.0], vec![f32::NAN]]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(p[0].value.data()[0], 1.0);
        assert_eq!(p[0].step, 0);
    }
}
