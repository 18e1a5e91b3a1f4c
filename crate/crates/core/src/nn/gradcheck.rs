//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Finite-difference step used on the `f64` shadow.
pub const STEP: f64 = 1e-4;

/// Compares reverse-mode gradients of `build` with central differences.
///
/// `build` records an arbitrary differentiable computation on a fresh `f64`
/// tape from leaves holding `inputs`. Its output is contracted against fixed
/// random weights to obtain a scalar. Returns the maximum over all input
/// elements of `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(inputs: &[Tensor<f64>], build: F, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights: Option<Vec<f64>> = None;

    let mut eval = |inputs: &[Tensor<f64>], grad: bool| -> Result<(f64, Option<Vec<Vec<f64>>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), grad)).collect();
        let out = build(&mut tape, &vars)?;
        let n = tape.value(out).len();
        let w = weights
            .get_or_insert_with(|| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .clone();
        let loss = tape.weighted_sum(out, w)?;
        let value = tape.value(loss).data()[0];
        if !grad {
            return Ok((value, None));
        }
        let mut g = tape.backward(loss)?;
        let grads = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| g.take(v).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect();
        Ok((value, Some(grads)))
    };

    let (_, analytic) = eval(inputs, true)?;
    let analytic = analytic.expect("gradients requested");
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for i in 0..t.len() {
            let orig = t.data()[i];
            probe[ti].data_mut()[i] = orig + STEP;
            let (plus, _) = eval(&probe, false)?;
            probe[ti].data_mut()[i] = orig - STEP;
            let (minus, _) = eval(&probe, false)?;
            probe[ti].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic[ti][i];
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient at input {ti}[{i}]")));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
