//! Central finite-difference gradient checks against the tape.

use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tape::{Graph, Tape, Var};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;

/// Denominator floor so that gradients that are zero up to rounding do not
/// produce huge relative errors.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(input, element)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares reverse-mode gradients of `f` with central differences over
/// every element of every input.
///
/// Non-scalar outputs are reduced with a fixed random projection, seeded by
/// `projection_seed`, so the whole Jacobian takes part in the check.
pub fn check<F>(inputs: &[Tensor], projection_seed: u64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |tape: &mut Tape, ins: &[Tensor]| -> Result<Var> {
        let vars: Vec<Var> = ins
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(i, t))
            .collect();
        let out = f(tape, &vars)?;
        scalarize(tape, out, projection_seed)
    };

    let mut tape = Tape::new();
    let loss = eval(&mut tape, inputs)?;
    tape.backward(loss)?;
    let grads = tape.param_grads(inputs.len());

    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for i in 0..inputs.len() {
        for k in 0..inputs[i].numel() {
            let orig = inputs[i].data()[k];
            probe[i].data_mut()[k] = orig + STEP;
            let up = value_at(&eval, &probe)?;
            probe[i].data_mut()[k] = orig - STEP;
            let down = value_at(&eval, &probe)?;
            probe[i].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grads[i].as_ref().map_or(0.0, |g| g[k]);
            let err = relative_error(analytic, numeric);
            if !err.is_finite() {
                return Err(Error::NonFinite("gradient check".into()));
            }
            if err > worst.max_rel_error {
                worst.max_rel_error = err;
                worst.worst = (i, k);
            }
            worst.checked += 1;
        }
    }
    Ok(worst)
}

fn value_at<E>(eval: &E, inputs: &[Tensor]) -> Result<f64>
where
    E: Fn(&mut Tape, &[Tensor]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = eval(&mut tape, inputs)?;
    Ok(tape.tensor(v).data()[0])
}

fn scalarize(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let value = tape.tensor(out);
    if value.numel() == 1 {
        return Ok(out);
    }
    let shape = value.shape().to_vec();
    let mut rng = crate::rng_from_seed(seed);
    let weights = (0..value.numel())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let proj = tape.constant(Tensor::new(&shape, weights)?);
    let weighted = tape.mul(&out, &proj)?;
    Ok(tape.sum(&weighted))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // clamp passes no gradient outside its range, the difference quotient
        // at the edge sees half of it
        let x = Tensor::vector(alloc::vec![1.0]);
        let r = check(&[x], 0, |g, v| Ok(g.clamp(&v[0], 1.0, 2.0))).unwrap();
        assert!(r.max_rel_error > 0.1);
    }

    #[test]
    fn exact_on_a_polynomial() {
        let x = Tensor::vector(alloc::vec![0.3, -1.2, 2.0]);
        let r = check(&[x], 1, |g, v| {
            let sq = g.mul(&v[0], &v[0])?;
            g.mul(&sq, &v[0])
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 3);
    }
}
