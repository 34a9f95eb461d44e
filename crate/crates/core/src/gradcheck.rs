//! Central finite-difference verification of tape gradients.

use crate::tape::{Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

/// Gradient magnitudes below this are compared in absolute rather than
/// relative terms; central differences carry roughly 1e-10 of rounding noise.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, flat element index) of the worst component.
    pub worst: Option<(usize, usize)>,
    pub components: usize,
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Checks every component of the gradient of `f` w.r.t. `params` on eval
/// tapes (dropout disabled).
pub fn grad_check<F>(f: F, params: &mut [Tensor], h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_with(Tape::eval, f, params, h)
}

/// Like [`grad_check`] but with caller-built tapes. Fails with a contract
/// error if `f` turns out to be stochastic.
pub fn grad_check_with<T, F>(
    make_tape: T,
    mut f: F,
    params: &mut [Tensor],
    h: f64,
) -> Result<GradCheckReport>
where
    T: Fn() -> Tape,
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(TensorError::Contract(format!("finite-difference step {h} outside [1e-6, 1e-4]")));
    }

    let mut tape = make_tape();
    let vars = params
        .iter()
        .map(|p| tape.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    if tape.is_stochastic() {
        return Err(TensorError::Contract(
            "gradient check needs a deterministic function; dropout is active".into(),
        ));
    }
    let base = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params.iter())
        .map(|(v, p)| grads.dense(*v, p.len()))
        .collect();

    let mut eval = |params: &[Tensor]| -> Result<f64> {
        let mut tape = make_tape();
        let vars = params
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = f(&mut tape, &vars)?;
        if tape.is_stochastic() {
            return Err(TensorError::Contract(
                "gradient check needs a deterministic function; dropout is active".into(),
            ));
        }
        Ok(tape.value(loss).data()[0])
    };

    if eval(params)? != base {
        return Err(TensorError::Contract(
            "gradient check needs a deterministic function; repeated evaluation differs".into(),
        ));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        components: 0,
    };
    #[allow(clippy::needless_range_loop)]
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let orig = params[pi].data()[ei];
            params[pi].data_mut()[ei] = orig + h;
            let plus = eval(params);
            params[pi].data_mut()[ei] = orig - h;
            let minus = eval(params);
            params[pi].data_mut()[ei] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            let err = relative_error(analytic[pi][ei], numeric);
            report.components += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((pi, ei));
            }
        }
    }
    Ok(report)
}
