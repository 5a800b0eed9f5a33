use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use super::DiffError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
    Tanh,
    Softplus,
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// He-uniform weights, zero bias.
    pub fn new<R: Real>(store: &mut ParamStore<R>, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| R::of(rng.gen_range(-bound..bound))).collect();
        let weight = store.add(format!("{name}.weight"), Tensor::new(&[inputs, outputs], w).expect("shape"));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self { weight, bias, inputs, outputs }
    }

    pub fn zeroed<R: Real>(store: &mut ParamStore<R>, name: &str, inputs: usize, outputs: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(&[inputs, outputs]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self { weight, bias, inputs, outputs }
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, x: Var) -> Result<Var, DiffError> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Fully connected stack with ReLU between layers and no activation on the output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`. With `zero_head` the last layer starts at zero.
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        widths: &[usize],
        zero_head: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let lname = format!("{name}.{i}");
                if zero_head && i + 1 == n {
                    Linear::zeroed(store, &lname, widths[i], widths[i + 1])
                } else {
                    Linear::new(store, &lname, widths[i], widths[i + 1], rng)
                }
            })
            .collect();
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, x: Var) -> Result<Var, DiffError> {
        let mut h = x;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i + 1 < n {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn head(&self) -> &Linear {
        self.layers.last().expect("non-empty mlp")
    }
}

pub fn activate<R: Real>(g: &mut Graph<'_, R>, x: Var, act: Activation) -> Var {
    match act {
        Activation::None => x,
        Activation::Relu => g.relu(x),
        Activation::Sigmoid => g.sigmoid(x),
        Activation::Tanh => g.tanh(x),
        Activation::Softplus => g.softplus(x),
    }
}
