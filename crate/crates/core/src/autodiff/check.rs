use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Compares the tape gradient of a scalar computation against central
/// differences with step `h`, returning the max relative error over all
/// coordinates of `theta`.
///
/// `f` receives a fresh tape and the leaf holding `theta` and must return a
/// single-element node.
pub fn grad_check<F>(f: F, theta: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.param(t.clone());
        let out = f(&mut tape, leaf)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("f = {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let leaf = tape.param(theta.clone());
    let out = f(&mut tape, leaf)?;
    let analytic = tape.backward(out)?.get_or_zeros(leaf, theta.len());

    let mut numeric = Vec::with_capacity(theta.len());
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((plus - minus) / (2.0 * h));
    }
    Ok(max_relative_error(&analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_at_three() {
        let theta = Tensor::vector(vec![3.0]);
        let err = grad_check(
            |t, x| {
                let sq = t.hadamard(x, x)?;
                Ok(t.sum(sq))
            },
            &theta,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn sum_sigmoid_matvec() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Tensor::uniform(&[3, 3], 1.0, &mut rng);
        let x = Tensor::uniform(&[3], 1.0, &mut rng);
        let err = grad_check(
            |t, wv| {
                let xv = t.constant(x.clone());
                let y = t.matvec(wv, xv)?;
                let s = t.sigmoid(y);
                Ok(t.sum(s))
            },
            &w,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn matvec_input_gradient_is_column_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Tensor::uniform(&[4, 3], 1.0, &mut rng);
        let mut tape = Tape::new();
        let wv = tape.constant(w.clone());
        let xv = tape.param(Tensor::uniform(&[3], 1.0, &mut rng));
        let y = tape.matvec(wv, xv).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        for j in 0..3 {
            let col: f64 = (0..4).map(|i| w.data()[i * 3 + j]).sum();
            assert!((g.get(xv).unwrap()[j] - col).abs() < 1e-14);
        }
    }

    #[test]
    fn non_finite_evaluation_is_reported() {
        let theta = Tensor::vector(vec![1.0]);
        let res = grad_check(
            |t, x| {
                let huge = t.scale(x, f64::INFINITY);
                Ok(t.sum(huge))
            },
            &theta,
            1e-4,
        );
        assert!(matches!(res, Err(Error::Evaluation(_))));
    }
}
