use crate::tape::{Tape, TapeError, Var};
use crate::tensor::Tensor;

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// `(parameter index, flat element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of `loss_fn` at `point` against central differences.
///
/// Relative error per coordinate is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
/// `loss_fn` receives one trainable leaf per tensor in `point` and must return a scalar node.
pub fn grad_check<F>(loss_fn: F, point: &[Tensor], eps: f64) -> Result<GradCheck, TapeError>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var, TapeError>,
{
    grad_check_with_floor(loss_fn, point, eps, |_| 1e-8)
}

/// Ulps of rounding assumed in one loss evaluation.
pub const LOSS_ULPS: f64 = 10.0;

/// Denominator floor under which central differences at step `eps` cannot resolve relative
/// error `rtol` for a loss of magnitude `loss`: the rounding noise
/// `LOSS_ULPS * EPSILON * |loss| / eps` divided by `rtol`.
pub fn roundoff_floor(loss: f64, eps: f64, rtol: f64) -> f64 {
    (LOSS_ULPS * f64::EPSILON * loss.abs() / eps / rtol).max(1e-8)
}

/// [`grad_check`] with the denominator floor computed from the loss value by `floor`.
pub fn grad_check_with_floor<F>(
    loss_fn: F,
    point: &[Tensor],
    eps: f64,
    floor: impl Fn(f64) -> f64,
) -> Result<GradCheck, TapeError>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var, TapeError>,
{
    assert!(
        (1e-7..=1e-3).contains(&eps),
        "finite-difference step {eps} outside [1e-7, 1e-3]"
    );
    let mut tape = Tape::new();
    let params: Vec<Var> = point.iter().map(|t| tape.param(t.clone())).collect();
    let loss = loss_fn(&mut tape, &params)?;
    let grads = tape.backward(loss)?;
    let floor = floor(tape.value(loss).item());

    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (p, (&var, original)) in params.iter().zip(point).enumerate() {
        let zero = Tensor::zeros(original.rows(), original.cols());
        let analytic = grads.get(var).unwrap_or(&zero);
        for k in 0..original.len() {
            let mut shifted = original.clone();
            shifted.data_mut()[k] = original.data()[k] + eps;
            tape.forward(&[(var, shifted.clone())])?;
            let up = tape.value(loss).item();
            shifted.data_mut()[k] = original.data()[k] - eps;
            tape.forward(&[(var, shifted)])?;
            let down = tape.value(loss).item();

            let numeric = (up - down) / (2.0 * eps);
            let exact = analytic.data()[k];
            let denom = exact.abs().max(numeric.abs()).max(floor);
            let err = (exact - numeric).abs() / denom;
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((p, k));
            }
        }
        tape.forward(&[(var, original.clone())])?;
    }
    Ok(report)
}
