use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Largest relative disagreement between reverse-mode gradients of `f` and
/// central finite differences, over every coordinate of every input.
///
/// `f` receives the tape and one parameter leaf per entry of `points`, and
/// must return a scalar. The error at a coordinate is
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, points: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::Contract(format!("grad_check step must be positive, got {step}")));
    }
    let eval = |pts: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).item()?.is_finite() {
        return Err(Error::Oracle { coordinate: 0 });
    }
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut coordinate = 0;
    let mut shifted = points.to_vec();
    for (k, point) in points.iter().enumerate() {
        let zeros = Tensor::zeros(point.rows(), point.cols());
        let analytic = grads.get(vars[k]).unwrap_or(&zeros);
        for j in 0..point.len() {
            let x = point.data()[j];
            shifted[k].data_mut()[j] = x + step;
            let up = eval(&shifted)?;
            shifted[k].data_mut()[j] = x - step;
            let down = eval(&shifted)?;
            shifted[k].data_mut()[j] = x;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Oracle { coordinate });
            }
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
            coordinate += 1;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let err = grad_check(|t, v| t.mul(v[0], v[0]), &[Tensor::scalar(3.0)], 1e-4).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn log_sigmoid_at_zero() {
        let err = grad_check(|t, v| Ok(t.log_sigmoid(v[0])), &[Tensor::scalar(0.0)], 1e-4).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // detach hides the dependence on the second factor from reverse mode.
        let err = grad_check(
            |t, v| {
                let d = t.detach(v[0]);
                t.mul(v[0], d)
            },
            &[Tensor::scalar(3.0)],
            1e-4,
        )
        .unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn non_finite_value_reports_coordinate() {
        let f = |t: &mut Tape, v: &[Var]| {
            let inv = t.value(v[0]).map(|x| if x > 0.5 { f64::NAN } else { x });
            let c = t.constant(inv);
            let s = t.add(v[0], c)?;
            Ok(t.sum(s))
        };
        let err = grad_check(f, &[Tensor::row(vec![0.0, 0.0, 0.5])], 1e-3).unwrap_err();
        assert!(matches!(err, Error::Oracle { coordinate: 2 }), "{err:?}");
    }

    #[test]
    fn rejects_non_positive_step() {
        assert!(grad_check(|t, v| Ok(t.sum(v[0])), &[Tensor::scalar(1.0)], 0.0).is_err());
    }
}
