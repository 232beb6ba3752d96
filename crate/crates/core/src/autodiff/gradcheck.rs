use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Maximum relative error between the tape gradient of `f` and a central
/// finite difference, over every element of every input.
///
/// The relative error of one element is `|a - n| / max(|a|, |n|, 1e-12)`.
/// Non-finite comparisons, or a failing `f`, count as infinite error.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let grads = f(&mut tape, &vars).and_then(|loss| {
            tape.backward(loss)?;
            Ok(vars.iter().map(|&v| tape.grad(v).expect("param")).collect::<Vec<_>>())
        });
        match grads {
            Ok(g) => g,
            Err(_) => return f64::INFINITY,
        }
    };

    let eval = |probe: &[Tensor]| -> Option<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        f(&mut tape, &vars).ok().map(|v| tape.value(v).item())
    };

    let mut probe: Vec<Tensor> = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (k, grad) in analytic.iter().enumerate() {
        for i in 0..grad.numel() {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let plus = eval(&probe);
            probe[k].data_mut()[i] = orig - eps;
            let minus = eval(&probe);
            probe[k].data_mut()[i] = orig;
            let (Some(plus), Some(minus)) = (plus, minus) else {
                return f64::INFINITY;
            };
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            if !numeric.is_finite() || !a.is_finite() {
                return f64::INFINITY;
            }
            let denom = a.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_sum_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[3, 3], 1.0, &mut rng);
        let err = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
            &[x],
            1e-5,
        );
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = grad_check(
            |t, _| Ok(t.constant(Tensor::scalar(4.0))),
            &[Tensor::ones(&[2, 2])],
            1e-5,
        );
        assert_eq!(err, 0.0);
    }
}
