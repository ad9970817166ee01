//! Plain feed-forward networks on top of the tape.

use super::kernels;
use super::store::ParamStore;
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
    Softplus,
}

#[derive(Clone, Debug)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

/// Architecture of a sequential MLP: layer widths and per-layer activations.
#[derive(Clone, Debug)]
pub struct MlpArch {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl MlpArch {
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Parameter("MLP input dim must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::Parameter("MLP needs at least one layer".into()));
        }
        if layers.iter().any(|l| l.width == 0) {
            return Err(Error::Parameter("MLP layer widths must be positive".into()));
        }
        Ok(MlpArch { input_dim, layers })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("validated non-empty").width
    }
}

/// An MLP bound to a block-name prefix inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Mlp {
    pub arch: MlpArch,
    pub prefix: String,
}

impl Mlp {
    pub fn new(prefix: &str, arch: MlpArch) -> Self {
        Mlp {
            arch,
            prefix: prefix.to_string(),
        }
    }

    fn weight_name(&self, layer: usize) -> String {
        format!("{}.layer{layer}.w", self.prefix)
    }

    fn bias_name(&self, layer: usize) -> String {
        format!("{}.layer{layer}.b", self.prefix)
    }

    /// He initialization for rectifier layers, Xavier otherwise, zero biases.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        let mut fan_in = self.arch.input_dim;
        for (i, layer) in self.arch.layers.iter().enumerate() {
            let scale = match layer.activation {
                Activation::Relu => (2.0 / fan_in as f64).sqrt(),
                _ => (1.0 / fan_in as f64).sqrt(),
            };
            let w: Vec<f64> = (0..layer.width * fan_in)
                .map(|_| rng.normal() * scale)
                .collect();
            store.add_block(&self.weight_name(i), vec![layer.width, fan_in], w, true)?;
            store.add_block(
                &self.bias_name(i),
                vec![layer.width],
                vec![0.0; layer.width],
                true,
            )?;
            fan_in = layer.width;
        }
        Ok(())
    }

    /// Forward pass on the tape; records everything needed for backward.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: NodeId) -> Result<NodeId> {
        if tape.value(input).cols() != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "MLP `{}` expects {} input features, got {}",
                self.prefix,
                self.arch.input_dim,
                tape.value(input).cols()
            )));
        }
        let mut h = input;
        for (i, layer) in self.arch.layers.iter().enumerate() {
            let w = tape.param(store, &self.weight_name(i))?;
            let b = tape.param(store, &self.bias_name(i))?;
            h = tape.affine(h, w, b)?;
            h = apply_activation(tape, h, layer.activation);
        }
        Ok(h)
    }

    /// Fast inference path without tape bookkeeping.
    pub fn forward_plain(&self, store: &ParamStore, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "MLP `{}` expects {} input features, got {}",
                self.prefix,
                self.arch.input_dim,
                input.cols()
            )));
        }
        let n = input.rows();
        let mut h = input.clone();
        for (i, layer) in self.arch.layers.iter().enumerate() {
            let w = store.block(&self.weight_name(i))?;
            let b = store.block(&self.bias_name(i))?;
            let (o, icols) = w.shape2d();
            let mut y = Tensor::zeros(n, o);
            kernels::affine_forward(h.data(), n, icols, w.values(), o, b.values(), y.data_mut());
            apply_activation_plain(&mut y, layer.activation);
            h = y;
        }
        Ok(h)
    }
}

pub(crate) fn apply_activation(tape: &mut Tape, x: NodeId, act: Activation) -> NodeId {
    match act {
        Activation::Identity => x,
        Activation::Relu => tape.relu(x),
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::Tanh => tape.tanh(x),
        Activation::Softplus => tape.softplus(x),
    }
}

pub(crate) fn apply_activation_plain(t: &mut Tensor, act: Activation) {
    let f: fn(f64) -> f64 = match act {
        Activation::Identity => return,
        Activation::Relu => |v| v.max(0.0),
        Activation::Sigmoid => kernels::sigmoid,
        Activation::Tanh => f64::tanh,
        Activation::Softplus => kernels::softplus,
    };
    t.data_mut().iter_mut().for_each(|v| *v = f(*v));
}
