use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares the tape gradient of a scalar function with central differences.
///
/// Returns `max |analytic − numeric| / max(1, |analytic|, |numeric|)` over
/// every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_all(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// [`grad_check`] over several inputs at once; `f` receives one leaf per input.
pub fn grad_check_all<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().requiring_grad())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = probe.iter().map(|x| t.leaf(x.clone())).collect();
        let out = f(&mut t, &vs)?;
        let value = t.scalar(out);
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "grad_check probe".into() });
        }
        Ok(value)
    };

    let mut probe: Vec<Tensor> = inputs.to_vec();
    let mut worst = 0.0_f64;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let base = input.values()[j];
            probe[i].values_mut()[j] = base + h;
            let up = eval(&probe)?;
            probe[i].values_mut()[j] = base - h;
            let down = eval(&probe)?;
            probe[i].values_mut()[j] = base;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i][j];
            let err = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
