use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Gradients, Graph, ParamStore, Var};
use crate::{Error, Result};

/// Denominator floor for the relative error, so gradients that are zero up
/// to roundoff are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn eval<F>(f: &F, store: &ParamStore<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let out = f(&mut g)?;
    g.value(out).item()
}

/// Compares reverse-mode gradients of `f` with central differences
/// `(f(θ+h) - f(θ-h)) / 2h`, element by element, for every parameter.
///
/// A parameter passes when its worst relative error is strictly below
/// `tolerance`.
pub fn grad_check<F>(f: F, store: &mut ParamStore<f64>, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    grad_check_with(f, store, step, tolerance, |_| {})
}

/// [`grad_check`] with a hook that may rewrite the analytic gradients before
/// comparison; used to confirm that the checker catches broken gradients.
pub fn grad_check_with<F, A>(
    f: F,
    store: &mut ParamStore<f64>,
    step: f64,
    tolerance: f64,
    adjust: A,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
    A: FnOnce(&mut Gradients<f64>),
{
    if !(step > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let first = eval(&f, store)?;
    let second = eval(&f, store)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Nondeterministic);
    }

    let mut analytic = {
        let mut g = Graph::new(&*store);
        let out = f(&mut g)?;
        g.backward(out)?
    };
    adjust(&mut analytic);

    let ids: Vec<_> = store.ids().collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let mut worst = ParamCheck {
            name: store.name(id).to_string(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for k in 0..store.value(id).numel() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + step;
            let plus = eval(&f, store);
            store.value_mut(id).data_mut()[k] = orig - step;
            let minus = eval(&f, store);
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * step);
            let a = analytic.get(id).data()[k];
            let err = relative_error(a, numeric);
            if k == 0 || err > worst.max_rel_error {
                worst.max_rel_error = err;
                worst.worst_index = k;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        worst.passed = worst.max_rel_error < tolerance;
        params.push(worst);
    }
    Ok(GradCheckReport {
        tolerance,
        step,
        params,
    })
}
