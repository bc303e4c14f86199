use crate::error::Result;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: Option<(ParamId, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares backward-pass gradients against central finite differences for
/// every element of every trainable parameter in `store` (or only `only`,
/// when given). `fragment` must build a scalar loss.
pub fn grad_check<S, F>(
    store: &mut ParamStore<S>,
    only: Option<&[ParamId]>,
    step: f64,
    mut fragment: F,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: FnMut(&mut Graph<S>, &ParamStore<S>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = fragment(&mut g, store)?;
    let analytic = g.backward(loss)?;

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.trainable_ids(),
    };
    let h = S::lit(step);
    let mut eval = |store: &ParamStore<S>| -> Result<f64> {
        let mut g = Graph::new();
        let l = fragment(&mut g, store)?;
        Ok(g.value(l).item().as_f64())
    };

    let mut report = GradCheckReport { max_rel_err: 0.0, checked: 0, worst: None };
    for id in ids {
        let n = store.get(id).len();
        for k in 0..n {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig - h;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig;
            // use the actually representable step, which matters in f32
            let span = ((orig + h) - (orig - h)).as_f64();
            let numeric = (plus - minus) / span;
            let a = analytic.get(id).map_or(0.0, |t| t.data()[k].as_f64());
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((id, k));
            }
        }
    }
    Ok(report)
}
