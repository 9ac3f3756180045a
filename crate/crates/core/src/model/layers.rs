use rand::Rng;

use crate::autograd::{Graph, Init, ParamId, ParamStore, Var};
use crate::error::Result;

/// `x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub(crate) struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), &[d_in, d_out], Init::FanIn, rng),
            b: Some(store.add(format!("{name}.b"), &[d_out], Init::Zeros, rng)),
        }
    }

    pub fn no_bias(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), &[d_in, d_out], Init::FanIn, rng),
            b: None,
        }
    }

    /// Bias-free projection that starts at zero, so an additive branch
    /// through it leaves the host path unchanged at initialisation.
    pub fn zero_no_bias(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), &[d_in, d_out], Init::Zeros, rng),
            b: None,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let y = x.matmul(g.param(store, self.w))?;
        match self.b {
            Some(b) => y.add(g.param(store, b)),
            None => Ok(y),
        }
    }
}

/// Linear layers with GELU between them (none after the last).
#[derive(Clone, Debug)]
pub(crate) struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, mut x: Var<'g>) -> Result<Var<'g>> {
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, store, x)?;
            if i < last {
                x = x.gelu();
            }
        }
        Ok(x)
    }
}
