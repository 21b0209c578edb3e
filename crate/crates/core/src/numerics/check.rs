//! Central finite-difference gradient verification.
//!
//! The numeric side evaluates the taped function forward only, so it stays
//! independent of the reverse-mode path it is checking.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::Tensor;

/// Denominator floor for relative error.
const REL_FLOOR: f64 = 1e-8;

/// Bind every tensor in `params` (sorted path order) onto a fresh graph.
pub fn bind_all(g: &mut Graph, params: &BTreeMap<String, Tensor>) -> Result<BTreeMap<String, Var>> {
    let mut vars = BTreeMap::new();
    for (path, t) in params {
        vars.insert(path.clone(), g.param(path, t.clone())?);
    }
    Ok(vars)
}

fn eval_scalar<F>(build: &F, params: &BTreeMap<String, Tensor>) -> Result<f64>
where
    F: Fn(&mut Graph, &BTreeMap<String, Var>) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = bind_all(&mut g, params)?;
    let loss = build(&mut g, &vars)?;
    let v = g.value(loss).item()?;
    if !v.is_finite() {
        return Err(Error::Numeric(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Compare reverse-mode gradients of `build` against central differences.
///
/// `build` records a scalar objective on the graph from the bound parameter
/// vars. Returns the maximum relative error over every parameter coordinate,
/// where the relative error divides by `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(
    build: F,
    params: &BTreeMap<String, Tensor>,
    h: f64,
) -> Result<f64>
where
    F: Fn(&mut Graph, &BTreeMap<String, Var>) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::Config("finite_diff_check: h must be positive".into()));
    }

    // Analytic side: one taped forward + backward.
    let analytic = {
        let mut g = Graph::new();
        let vars = bind_all(&mut g, params)?;
        let loss = build(&mut g, &vars)?;
        let v = g.value(loss).item()?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("objective evaluated to {v}")));
        }
        g.backward(loss)?
    };

    // Numeric side: two forward evaluations per coordinate.
    let mut work = params.clone();
    let mut max_rel: f64 = 0.0;
    let paths: Vec<String> = params.keys().cloned().collect();
    for path in &paths {
        let n = params[path].len();
        let grad = analytic
            .get(path)
            .ok_or_else(|| Error::Contract(format!("no gradient recorded for {path}")))?
            .clone();
        for i in 0..n {
            let orig = work[path].data()[i];
            work.get_mut(path).unwrap().data_mut()[i] = orig + h;
            let f_plus = eval_scalar(&build, &work)?;
            work.get_mut(path).unwrap().data_mut()[i] = orig - h;
            let f_minus = eval_scalar(&build, &work)?;
            work.get_mut(path).unwrap().data_mut()[i] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = grad.data()[i];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
