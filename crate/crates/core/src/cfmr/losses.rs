use crate::cfmr::model::RecForward;
use crate::dataset::Triple;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};
use crate::scalar::Scalar;

/// Cross-modal contrastive loss over a batch of users. `users` holds the
/// batch rows of `f_u`, `modal[m]` the rows of `e^m_u`. For each `m` and
/// `u`: `−log exp(s(f_u,e_u)) / Σ_v [exp(s(f_v,e_u)) + exp(s(e_v,e_u))]`
/// with cosine `s`; the positive pair stays in the denominator.
pub fn contrastive_loss<S: Scalar>(g: &mut Graph<S>, users: Var, modal: &[Var]) -> Result<Var> {
    let b = g.shape(users)[0];
    if b < 2 {
        return Err(Error::InvalidArgument(format!("contrastive batch needs at least 2 users, got {b}")));
    }
    let f = g.normalize_rows(users)?;
    let ft = g.transpose(f)?;
    let mut total: Option<Var> = None;
    for &em in modal {
        if g.shape(em) != g.shape(users) {
            return Err(Error::Shape(format!("modal {:?} vs users {:?}", g.shape(em), g.shape(users))));
        }
        let e = g.normalize_rows(em)?;
        let et = g.transpose(e)?;
        // row u, column v
        let s_fe = g.matmul(e, ft)?;
        let s_ee = g.matmul(e, et)?;
        let pos = g.row_dot(e, f)?;
        let x1 = g.exp(s_fe);
        let x2 = g.exp(s_ee);
        let d1 = g.sum_axis(x1, 1)?;
        let d2 = g.sum_axis(x2, 1)?;
        let den = g.add(d1, d2)?;
        let log_den = g.log(den)?;
        let per_user = g.sub(log_den, pos)?;
        let l = g.sum(per_user);
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("contrastive loss needs a modality".into()))
}

/// `−Σ log sigm(pos − neg)` over paired `B × 1` score columns.
pub fn bpr_loss<S: Scalar>(g: &mut Graph<S>, pos: Var, neg: Var) -> Result<Var> {
    if g.value(pos).is_empty() {
        return Err(Error::InvalidArgument("empty triple set".into()));
    }
    let diff = g.sub(pos, neg)?;
    let ls = g.log_sigmoid(diff);
    let s = g.sum(ls);
    Ok(g.neg(s))
}

#[derive(Debug, Clone, Copy)]
pub struct BprLosses {
    pub matching: Var,
    pub item: Var,
    /// `matching + α₂·item`.
    pub total: Var,
}

/// Both BPR components for a set of triples under one forward pass.
pub fn bpr_losses<S: Scalar>(g: &mut Graph<S>, fwd: &RecForward, triples: &[Triple], alpha2: f64) -> Result<BprLosses> {
    if triples.is_empty() {
        return Err(Error::InvalidArgument("empty triple set".into()));
    }
    let users: Vec<usize> = triples.iter().map(|t| t.user).collect();
    let pos: Vec<usize> = triples.iter().map(|t| t.pos).collect();
    let neg: Vec<usize> = triples.iter().map(|t| t.neg).collect();
    let fu = g.gather_rows(fwd.users, &users)?;
    let fp = g.gather_rows(fwd.items, &pos)?;
    let fn_ = g.gather_rows(fwd.items, &neg)?;
    let sp = g.row_dot(fu, fp)?;
    let sn = g.row_dot(fu, fn_)?;
    let matching = bpr_loss(g, sp, sn)?;
    let ip = g.gather_rows(fwd.item_scores, &pos)?;
    let in_ = g.gather_rows(fwd.item_scores, &neg)?;
    let item = bpr_loss(g, ip, in_)?;
    let w = g.scale(item, S::lit(alpha2));
    let total = g.add(matching, w)?;
    Ok(BprLosses { matching, item, total })
}
