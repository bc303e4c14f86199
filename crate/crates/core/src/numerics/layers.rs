use rand::Rng;

use crate::error::Result;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Affine map `x·W + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_weight(format!("{name}.w"), fan_in, fan_out, rng);
        let bias = bias.then(|| store.add_bias(format!("{name}.b"), fan_out));
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let mut y = g.matmul(x, w)?;
        if let Some(b) = self.bias {
            let bv = g.param(store, b);
            y = g.add(y, bv)?;
        }
        Ok(y)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.weight];
        v.extend(self.bias);
        v
    }
}

/// Two affine layers with a leaky ReLU in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mlp2 {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp2 {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        dims: (usize, usize, usize),
        rng: &mut R,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.0"), dims.0, dims.1, true, rng),
            out: Linear::new(store, &format!("{name}.1"), dims.1, dims.2, true, rng),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, store, x)?;
        let h = g.leaky_relu(h);
        self.out.forward(g, store, h)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = self.hidden.param_ids();
        v.extend(self.out.param_ids());
        v
    }
}
