use super::{Tape, Tensor, Var};
use crate::error::config_err;
use crate::{Error, Result};

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-4;

/// Smallest step tried when a perturbation crosses a switch.
const MIN_STEP_FACTOR: f64 = 1e-3;

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over the checked coordinates.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates whose step had to shrink to stay on one smooth piece.
    pub refined: usize,
    /// Coordinates left unchecked because even the smallest step crossed a
    /// switch (the point is numerically on a kink).
    pub skipped: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn eval_scalar<F>(f: &F, point: &Tensor<f64>) -> Result<(f64, Vec<u32>)>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x)?;
    let out = tape.value(y);
    if out.len() != 1 {
        return Err(config_err!(
            "gradient check needs a scalar function, got shape {:?}",
            out.shape()
        ));
    }
    Ok((out.data()[0], tape.branch_pattern()))
}

/// Checks every coordinate of `point` with step [`FD_STEP`].
pub fn grad_check<F>(f: F, point: &Tensor<f64>, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_with_step(f, point, tolerance, FD_STEP, None)
}

/// Like [`grad_check`], with an explicit step and an optional subset of
/// flat coordinates to perturb.
///
/// Central differences are only meaningful inside one smooth piece of a
/// piecewise function. When `x ± step` lands on a different ReLU, pooling or
/// clamp branch than `x`, the step is divided by ten, down to
/// `step * 1e-3`; coordinates that still cross are counted as skipped.
pub fn grad_check_with_step<F>(
    f: F,
    point: &Tensor<f64>,
    tolerance: f64,
    step: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x)?;
    if tape.value(y).len() != 1 {
        return Err(config_err!(
            "gradient check needs a scalar function, got shape {:?}",
            tape.value(y).shape()
        ));
    }
    let base_pattern = tape.branch_pattern();
    let grads = tape.backward(y)?;
    let analytic = match grads.leaf(x) {
        Some(g) => g.clone(),
        None => Tensor::zeros(point.shape().to_vec()),
    };

    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        refined: 0,
        skipped: 0,
        tolerance,
    };
    for &i in coords {
        if i >= point.len() {
            return Err(Error::Config(format!("coordinate {i} out of range")));
        }
        let mut h = step;
        let numeric = loop {
            let mut plus = point.clone();
            plus.data_mut()[i] += h;
            let mut minus = point.clone();
            minus.data_mut()[i] -= h;
            let (fp, pp) = eval_scalar(&f, &plus)?;
            let (fm, pm) = eval_scalar(&f, &minus)?;
            if pp == base_pattern && pm == base_pattern {
                break Some((fp - fm) / (2.0 * h));
            }
            h /= 10.0;
            if h < step * MIN_STEP_FACTOR * 0.5 {
                break None;
            }
        };
        let Some(numeric) = numeric else {
            report.skipped += 1;
            continue;
        };
        if h < step {
            report.refined += 1;
        }
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_error || report.checked == 1 {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let point = Tensor::from_fn(vec![1, 3, 3, 2], |i| (i as f64 * 0.37).sin());
        let r = grad_check(
            |t, x| {
                let sq = t.square(x)?;
                t.sum(sq)
            },
            &point,
            1e-6,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.checked, 18);
        assert_eq!((r.refined, r.skipped), (0, 0));
    }

    #[test]
    fn step_shrinks_near_a_relu_switch() {
        // 5e-5 is within one default step of the ReLU kink at zero.
        let point = Tensor::new(vec![1, 1, 1, 2], vec![5e-5, 0.7]).unwrap();
        let r = grad_check(|t, x| { let y = t.relu(x)?; t.sum(y) }, &point, 1e-6).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!((r.checked, r.refined, r.skipped), (2, 1, 0));
        // Exactly on the kink every step crosses it.
        let point = Tensor::new(vec![1, 1, 1, 1], vec![0.0]).unwrap();
        let r = grad_check(|t, x| { let y = t.relu(x)?; t.sum(y) }, &point, 1e-6).unwrap();
        assert_eq!(r.skipped, 1);
    }

    #[test]
    fn non_scalar_function_is_rejected() {
        let point = Tensor::<f64>::zeros(vec![1, 2, 2, 1]);
        let r = grad_check(|t, x| t.relu(x), &point, 1e-6);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
