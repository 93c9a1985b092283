//! Multi-layer perceptrons recorded on a [`Tape`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mat::Mat;
use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
    Tanh,
}

/// Map applied to the final layer output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OutputMap {
    #[default]
    Identity,
    Softplus,
}

#[derive(Clone, Debug)]
pub struct Mlp {
    name: String,
    widths: Vec<usize>,
    activation: Activation,
    output: OutputMap,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers weights `{name}.w{k}` and biases `{name}.b{k}` in `store`
    /// with Glorot-uniform weights and zero biases.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activation: Activation,
        output: OutputMap,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidInput(format!("MLP `{name}` needs at least two positive widths, got {widths:?}")));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (k, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
            let w = store.add(format!("{name}.w{k}"), Mat::from_vec(fan_in, fan_out, data)?)?;
            let b = store.add(format!("{name}.b{k}"), Mat::zeros(1, fan_out))?;
            layers.push((w, b));
        }
        Ok(Mlp { name: name.to_string(), widths: widths.to_vec(), activation, output, layers })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_map(&self) -> OutputMap {
        self.output
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("widths validated non-empty")
    }

    /// `(weight, bias)` ids per layer.
    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    /// Applies the network row-wise to `x`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.input_width() {
            return Err(Error::dims("mlp input", format!("{} ({})", self.input_width(), self.name), cols));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            h = tape.affine(h, wv, bv)?;
            if k < last {
                h = match self.activation {
                    Activation::Silu => tape.silu(h)?,
                    Activation::Tanh => tape.tanh(h)?,
                };
            }
        }
        match self.output {
            OutputMap::Identity => Ok(h),
            OutputMap::Softplus => tape.softplus(h),
        }
    }

    /// Every parameter finite and every layer shaped as declared.
    pub fn check(&self, store: &ParamStore) -> Result<()> {
        for (k, (&(w, b), pair)) in self.layers.iter().zip(self.widths.windows(2)).enumerate() {
            let (ws, bs) = (store.get(w).shape(), store.get(b).shape());
            if ws != (pair[0], pair[1]) || bs != (1, pair[1]) {
                return Err(Error::dims(
                    "mlp layer",
                    format!("{}[{k}] ({},{}) + (1,{})", self.name, pair[0], pair[1], pair[1]),
                    format!("{ws:?} + {bs:?}"),
                ));
            }
            if !store.get(w).all_finite() || !store.get(b).all_finite() {
                return Err(Error::InvalidInput(format!("non-finite parameter in {}[{k}]", self.name)));
            }
        }
        Ok(())
    }
}
