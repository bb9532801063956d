//! Central finite-difference check of tape gradients.

use super::{ParameterStore, Tape, Var};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// parameter name and flat index of the worst coordinate
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the backward pass of `f` against central differences with step
/// `eps` on every coordinate of every parameter.
pub fn check_gradients(
    store: &ParameterStore<f64>,
    eps: f64,
    floor: f64,
    f: impl Fn(&mut Tape<f64>) -> Result<Var>,
) -> Result<GradCheck> {
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |s: &ParameterStore<f64>| -> Result<f64> {
        let mut tape = Tape::new(s);
        let loss = f(&mut tape)?;
        Ok(tape.value(loss).item())
    };
    let mut work = store.clone();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for id in store.ids() {
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            work.value_mut(id).data_mut()[k] = orig + eps;
            let up = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig - eps;
            let down = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(analytic.get(id).data()[k], numeric, floor);
            out.checked += 1;
            if err > out.max_rel_error || out.worst.is_none() {
                out.max_rel_error = out.max_rel_error.max(err);
                if err >= out.max_rel_error {
                    out.worst = Some((store.name(id).to_string(), k));
                }
            }
        }
    }
    Ok(out)
}
