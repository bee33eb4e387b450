//! Central finite-difference verification of tape gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const SCALE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    /// `max |analytic - numeric|` over the tensor.
    pub max_abs_err: f64,
    /// `max_abs_err` divided by the larger of the two gradients' max-norms,
    /// floored at `SCALE_FLOOR` times the largest gradient of the check.
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

/// Compares the tape gradient of `loss_fn` against central differences
/// `(L(p + eps) - L(p - eps)) / 2eps` for every element of every parameter.
///
/// The relative error of a tensor is normalised by the max-norm of its
/// gradients so that near-zero entries do not dominate. Tensors whose
/// gradient is tiny compared to the largest gradient anywhere (a bias the
/// loss is invariant to, say) are normalised by `SCALE_FLOOR` times that
/// largest gradient instead, which keeps rounding noise from failing them.
pub fn grad_check<F>(params: &ParamStore, loss_fn: F, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(format!("finite-difference step {eps} outside (0, 1e-2]")));
    }
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, params)?;
    if !tape.scalar(loss).is_finite() {
        return Err(Error::NonFinite("loss at the unperturbed point".into()));
    }
    let analytic = tape.backward(loss)?;

    let eval = |store: &ParamStore, name: &str| -> Result<f64> {
        let mut t = Tape::new();
        let l = loss_fn(&mut t, store).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} while perturbing {name}")),
            other => other,
        })?;
        let v = t.scalar(l);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss while perturbing {name}")));
        }
        Ok(v)
    };

    let mut probe = params.clone();
    let mut entries = Vec::new();
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let n = params.value(&name)?.len();
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let orig = probe.value(&name)?.data()[i];
            probe.value_mut(&name)?.data_mut()[i] = orig + eps;
            let up = eval(&probe, &name)?;
            probe.value_mut(&name)?.data_mut()[i] = orig - eps;
            let down = eval(&probe, &name)?;
            probe.value_mut(&name)?.data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * eps));
        }
        let zero;
        let grad = match analytic.get(&name) {
            Some(g) => g.data(),
            None => {
                zero = vec![0.0; n];
                &zero
            }
        };
        let max_abs_err = grad
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = grad
            .iter()
            .chain(&numeric)
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        entries.push((name, max_abs_err, scale));
    }
    let global = entries.iter().map(|e| e.2).fold(0.0, f64::max);
    let entries = entries
        .into_iter()
        .map(|(name, max_abs_err, scale)| {
            let scale = scale.max(global * SCALE_FLOOR);
            let max_rel_err = if scale > 0.0 { max_abs_err / scale } else { 0.0 };
            GradCheckEntry {
                name,
                max_abs_err,
                max_rel_err,
                passed: max_rel_err <= tol,
            }
        })
        .collect();
    Ok(GradCheckReport { entries, tol })
}
