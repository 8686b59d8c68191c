use super::{Gradients, ParamStore};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// `(parameter name, max relative error)` in canonical order.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Compares analytic gradients against central differences
/// `(f(w + h) - f(w - h)) / 2h`, elementwise, with relative error
/// `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// `loss` must be deterministic and return the loss with its gradients.
pub fn finite_difference_check<F, E>(params: &ParamStore, h: f64, tol: f64, mut loss: F) -> Result<FdReport, E>
where
    F: FnMut(&ParamStore) -> Result<(f64, Gradients), E>,
{
    assert!((1e-7..=1e-3).contains(&h), "step {h} outside [1e-7, 1e-3]");
    let (_, analytic) = loss(params)?;
    let mut work = params.clone();
    let mut per_param = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let id = super::ParamId(pi);
        let mut worst = 0.0f64;
        for i in 0..p.len() {
            let orig = p.values[i];
            work.get_mut(id).values[i] = orig + h;
            let (up, _) = loss(&work)?;
            work.get_mut(id).values[i] = orig - h;
            let (down, _) = loss(&work)?;
            work.get_mut(id).values[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id).map_or(0.0, |g| g[i]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        per_param.push((p.name.clone(), worst));
    }
    let max_rel_error = per_param.iter().map(|x| x.1).fold(0.0, f64::max);
    Ok(FdReport { per_param, max_rel_error, tolerance: tol })
}
