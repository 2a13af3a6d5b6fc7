use super::param::ParamSet;
use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Scalar function of a parameter set with an analytic gradient.
pub trait Objective<S: Scalar> {
    fn value(&mut self, params: &ParamSet<S>) -> Result<S>;

    /// Adds the analytic gradient into the (already zeroed) `params` grads.
    fn gradient(&mut self, params: &mut ParamSet<S>) -> Result<()>;
}

/// Adapter turning a `(value, gradient)` closure pair into an [`Objective`].
pub struct FnObjective<V, G> {
    pub value: V,
    pub gradient: G,
}

impl<S, V, G> Objective<S> for FnObjective<V, G>
where
    S: Scalar,
    V: FnMut(&ParamSet<S>) -> Result<S>,
    G: FnMut(&mut ParamSet<S>) -> Result<()>,
{
    fn value(&mut self, params: &ParamSet<S>) -> Result<S> {
        (self.value)(params)
    }

    fn gradient(&mut self, params: &mut ParamSet<S>) -> Result<()> {
        (self.gradient)(params)
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries: usize,
}

/// Compares the analytic gradient against central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` at every parameter entry, returning the max of
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<S: Scalar>(
    objective: &mut impl Objective<S>,
    params: &mut ParamSet<S>,
    eps: S,
) -> Result<GradCheckReport> {
    params.zero_grads();
    objective.gradient(params)?;
    let analytic = params.grads();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        let n = params.value(id).as_slice().len();
        for k in 0..n {
            let orig = params.value(id).as_slice()[k];
            params.value_mut(id).as_mut_slice()[k] = orig + eps;
            let plus = objective.value(params)?;
            params.value_mut(id).as_mut_slice()[k] = orig - eps;
            let minus = objective.value(params)?;
            params.value_mut(id).as_mut_slice()[k] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!("objective near {}[{k}]", params.get(id).name)));
            }
            let numeric = ((plus - minus) / (eps + eps)).as_f64();
            let a = analytic[pi].as_slice()[k].as_f64();
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.entries += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((params.get(id).name.clone(), k));
            }
        }
    }
    Ok(report)
}
