use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Silu,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "silu" => Ok(Self::Silu),
            _ => Err(Error::Config(format!("activation `{s}` unknown; valid: tanh, silu"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Tanh => "tanh",
            Self::Silu => "silu",
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Tanh => z.tanh(),
            Self::Silu => z / (1.0 + (-z).exp()),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Self::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

/// Activations recorded by [`Mlp::forward`], consumed by [`Mlp::backward`].
#[derive(Debug)]
pub struct Tape {
    store_id: u64,
    version: u64,
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
}

/// Fully connected chain; hidden layers use `activation`, the output layer is linear.
///
/// Parameters are `l{i}.weight` (`in x out`) and `l{i}.bias` (`out`).
#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    store: ParamStore,
}

impl Mlp {
    /// `widths = [input, hidden.., output]` with at least one hidden layer.
    /// Weights and biases start uniform in `+-1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::InvalidArgument("an Mlp needs at least one hidden layer".into()));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        let mut store = ParamStore::new();
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
            let b = Array2::from_shape_fn((1, fan_out), |_| rng.random_range(-bound..bound));
            store.add(format!("l{l}.weight"), vec![fan_in, fan_out], w);
            store.add(format!("l{l}.bias"), vec![fan_out], b);
        }
        Ok(Self {
            widths: widths.to_vec(),
            activation,
            store,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn weight(&self, layer: usize) -> &Array2<f64> {
        self.store.value(2 * layer)
    }

    pub fn bias(&self, layer: usize) -> &Array2<f64> {
        self.store.value(2 * layer + 1)
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        self.store.value_mut(2 * layer)
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        self.store.value_mut(2 * layer + 1)
    }

    pub fn zero_grad(&mut self) {
        self.store.zero_grad();
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::shape("layer 0 input width", self.input_dim(), input.ncols()));
        }
        Ok(())
    }

    fn affine(&self, layer: usize, h: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = h.dot(self.weight(layer));
        z += &self.bias(layer).row(0);
        z
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let last = self.n_layers() - 1;
        let mut h = self.affine(0, &input);
        for layer in 1..=last {
            let act = self.activation;
            h.mapv_inplace(|z| act.apply(z));
            h = self.affine(layer, &h.view());
        }
        Ok(h)
    }

    pub fn forward(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(&input)?;
        let last = self.n_layers() - 1;
        let mut inputs = Vec::with_capacity(self.n_layers());
        let mut pre = Vec::with_capacity(last);
        inputs.push(input.to_owned());
        for layer in 0..last {
            let z = self.affine(layer, &inputs[layer].view());
            let act = self.activation;
            let h = z.mapv(|x| act.apply(x));
            pre.push(z);
            inputs.push(h);
        }
        let out = self.affine(last, &inputs[last].view());
        let tape = Tape {
            store_id: self.store.id(),
            version: self.store.version(),
            inputs,
            pre,
        };
        Ok((out, tape))
    }

    fn check_tape(&self, tape: &Tape, grad: &ArrayView2<f64>) -> Result<()> {
        if tape.store_id != self.store.id() {
            return Err(Error::StaleTape("recorded on a different network".into()));
        }
        if tape.version != self.store.version() {
            return Err(Error::StaleTape("parameters changed since forward".into()));
        }
        let batch = tape.inputs[0].nrows();
        if grad.dim() != (batch, self.output_dim()) {
            return Err(Error::shape(
                "output gradient",
                format!("({batch}, {})", self.output_dim()),
                format!("{:?}", grad.dim()),
            ));
        }
        Ok(())
    }

    fn backprop(
        &self,
        tape: Tape,
        grad_out: ArrayView2<f64>,
        mut grads: Option<&mut [Array2<f64>]>,
    ) -> Result<Array2<f64>> {
        self.check_tape(&tape, &grad_out)?;
        let last = self.n_layers() - 1;
        let mut g = grad_out.to_owned();
        for layer in (0..=last).rev() {
            if layer < last {
                let act = self.activation;
                Zip::from(&mut g)
                    .and(&tape.pre[layer])
                    .for_each(|g, &z| *g *= act.derivative(z));
            }
            if let Some(grads) = grads.as_deref_mut() {
                let h = &tape.inputs[layer];
                general_mat_mul(1.0, &h.t(), &g, 1.0, &mut grads[2 * layer]);
                let db: Array1<f64> = g.sum_axis(Axis(0));
                let mut brow = grads[2 * layer + 1].row_mut(0);
                brow += &db;
            }
            g = g.dot(&self.weight(layer).t());
        }
        Ok(g)
    }

    /// Accumulates parameter gradients for `output_grad` and returns the
    /// gradient with respect to the input batch.
    pub fn backward(&mut self, tape: Tape, output_grad: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut grads = std::mem::take(&mut self.store.grads);
        let out = self.backprop(tape, output_grad, Some(&mut grads));
        self.store.grads = grads;
        out
    }

    /// Gradient with respect to the input only; parameter gradients untouched.
    pub fn input_grad(&self, tape: Tape, output_grad: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.backprop(tape, output_grad, None)
    }
}
