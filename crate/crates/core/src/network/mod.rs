//! Feed-forward tanh networks with an optional input-to-output skip path.
//!
//! Parameters live in one flat vector, layer by layer, each layer's weight
//! matrix (`fan_in x fan_out`, row-major, applied as `h * W`) followed by its
//! bias row. Optimizers only ever see the flat vector; [`BoundNetwork`] puts
//! the same numbers on a tape.

mod checkpoint;

pub use checkpoint::{Checkpoint, TrainingPhase};

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub skip_connection: bool,
}

/// Where one affine layer sits inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        hidden_layers: usize,
        hidden_width: usize,
        skip_connection: bool,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            output_dim,
            hidden_layers,
            hidden_width,
            skip_connection,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::invalid("network dimensions must be positive"));
        }
        if self.hidden_layers > 0 && self.hidden_width == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        if self.skip_connection && self.input_dim != 1 && self.input_dim != self.output_dim {
            return Err(Error::invalid(format!(
                "skip connection needs input_dim 1 or equal dims, got {} -> {}",
                self.input_dim, self.output_dim
            )));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        w.push(self.output_dim);
        w
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let widths = self.widths();
        let mut offset = 0;
        widths
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let weights = offset..offset + fan_in * fan_out;
                let bias = weights.end..weights.end + fan_out;
                offset = bias.end;
                LayerLayout {
                    fan_in,
                    fan_out,
                    weights,
                    bias,
                }
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layout().last().map_or(0, |l| l.bias.end)
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim {
            return Err(Error::shape(
                "network forward",
                format!("input has {cols} columns, network expects {}", self.input_dim),
            ));
        }
        Ok(())
    }

    /// Plain forward pass for a `batch x input_dim` input.
    pub fn forward(&self, params: &NetworkParams, input: &Tensor) -> Result<Tensor> {
        self.forward_raw(params.values(), input)
    }

    pub(crate) fn forward_raw(&self, params: &[f64], input: &Tensor) -> Result<Tensor> {
        self.check_input(input.cols())?;
        if params.len() != self.param_count() {
            return Err(Error::shape(
                "network forward",
                format!("{} parameters, expected {}", params.len(), self.param_count()),
            ));
        }
        let layout = self.layout();
        let last = layout.len() - 1;
        let mut h = input.clone();
        for (l, layer) in layout.iter().enumerate() {
            let w = Tensor::new(layer.fan_in, layer.fan_out, params[layer.weights.clone()].to_vec())?;
            let mut a = h.matmul(&w)?;
            let b = &params[layer.bias.clone()];
            for row in a.data_mut().chunks_mut(layer.fan_out) {
                for (x, bi) in row.iter_mut().zip(b) {
                    *x += bi;
                }
            }
            h = if l < last { a.map(f64::tanh) } else { a };
        }
        if self.skip_connection {
            let out_dim = self.output_dim;
            for (r, row) in h.data_mut().chunks_mut(out_dim).enumerate() {
                for (c, x) in row.iter_mut().enumerate() {
                    *x += if self.input_dim == 1 {
                        input.get(r, 0)
                    } else {
                        input.get(r, c)
                    };
                }
            }
        }
        if !h.all_finite() {
            return Err(Error::NonFinite {
                op: "network forward",
            });
        }
        Ok(h)
    }

    /// `dX/dt` of a time-input network at each row of `t` (`batch x 1`).
    pub fn time_derivative(&self, params: &NetworkParams, t: &Tensor) -> Result<Tensor> {
        if self.input_dim != 1 {
            return Err(Error::invalid(format!(
                "time derivative needs a scalar-input network, this one takes {}",
                self.input_dim
            )));
        }
        let mut tape = Tape::new();
        let bound = BoundNetwork::bind(&mut tape, *self, params.values(), false)?;
        let input = tape.constant(t.clone())?;
        let (_, dx) = bound.forward_with_tangent(&mut tape, input)?;
        Ok(tape.value(dx).clone())
    }
}

/// Flat trainable vector of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    values: Vec<f64>,
}

impl NetworkParams {
    pub fn from_values(spec: &NetworkSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::shape(
                "network params",
                format!("{} values, expected {}", values.len(), spec.param_count()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "network params",
            });
        }
        Ok(Self { values })
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; spec.param_count()];
    for layer in spec.layout() {
        let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        for w in &mut values[layer.weights] {
            *w = rng.gen_range(-limit..limit);
        }
    }
    NetworkParams { values }
}

/// Plain single-row evaluation with the layout resolved once; used on hot
/// paths such as Newton iterations.
#[derive(Debug, Clone)]
pub struct RowEvaluator<'a> {
    spec: NetworkSpec,
    params: &'a [f64],
    layout: Vec<LayerLayout>,
}

impl<'a> RowEvaluator<'a> {
    pub fn new(spec: NetworkSpec, params: &'a [f64]) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::shape(
                "network forward",
                format!("{} parameters, expected {}", params.len(), spec.param_count()),
            ));
        }
        Ok(Self {
            spec,
            params,
            layout: spec.layout(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.spec.check_input(x.len())?;
        let last = self.layout.len() - 1;
        let mut h = x.to_vec();
        for (l, layer) in self.layout.iter().enumerate() {
            let mut a = self.params[layer.bias.clone()].to_vec();
            let w = &self.params[layer.weights.clone()];
            for (i, hi) in h.iter().enumerate() {
                let row = &w[i * layer.fan_out..(i + 1) * layer.fan_out];
                for (aj, wij) in a.iter_mut().zip(row) {
                    *aj += hi * wij;
                }
            }
            if l < last {
                a.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = a;
        }
        if self.spec.skip_connection {
            for (c, o) in h.iter_mut().enumerate() {
                *o += if self.spec.input_dim == 1 { x[0] } else { x[c] };
            }
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "network forward",
            });
        }
        Ok(h)
    }
}

/// Trainable θ followed by physical parameters λ̂.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedParams {
    values: Vec<f64>,
    network_len: usize,
}

impl AugmentedParams {
    pub fn new(network: &NetworkParams, physical: &[f64]) -> Self {
        let mut values = network.values.clone();
        values.extend_from_slice(physical);
        Self {
            values,
            network_len: network.values.len(),
        }
    }

    pub fn from_flat(values: Vec<f64>, network_len: usize) -> Result<Self> {
        if network_len > values.len() {
            return Err(Error::invalid("network slice longer than augmented vector"));
        }
        Ok(Self {
            values,
            network_len,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn network(&self) -> &[f64] {
        &self.values[..self.network_len]
    }

    pub fn physical(&self) -> &[f64] {
        &self.values[self.network_len..]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A network whose parameters are leaves on a tape.
#[derive(Debug, Clone)]
pub struct BoundNetwork {
    spec: NetworkSpec,
    weights: Vec<Var>,
    biases: Vec<Var>,
    /// `1 x output_dim` ones, used to broadcast a scalar input on the skip path.
    ones_row: Option<Var>,
}

impl BoundNetwork {
    pub fn bind(tape: &mut Tape, spec: NetworkSpec, params: &[f64], trainable: bool) -> Result<Self> {
        if params.len() != spec.param_count() {
            return Err(Error::shape(
                "bind network",
                format!("{} values, expected {}", params.len(), spec.param_count()),
            ));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for layer in spec.layout() {
            let w = Tensor::new(layer.fan_in, layer.fan_out, params[layer.weights].to_vec())?;
            let b = Tensor::row(params[layer.bias].to_vec());
            if trainable {
                weights.push(tape.param(w)?);
                biases.push(tape.param(b)?);
            } else {
                weights.push(tape.constant(w)?);
                biases.push(tape.constant(b)?);
            }
        }
        let ones_row = if spec.skip_connection && spec.input_dim == 1 && spec.output_dim > 1 {
            Some(tape.constant(Tensor::filled(1, spec.output_dim, 1.0))?)
        } else {
            None
        };
        Ok(Self {
            spec,
            weights,
            biases,
            ones_row,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn skip_term(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        match self.ones_row {
            Some(ones) => tape.matmul(input, ones),
            None => Ok(input),
        }
    }

    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        self.spec.check_input(tape.shape(input).1)?;
        let last = self.weights.len() - 1;
        let mut h = input;
        for (l, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let a = tape.matmul(h, w)?;
            let a = tape.add_row(a, b)?;
            h = if l < last { tape.tanh(a)? } else { a };
        }
        if self.spec.skip_connection {
            let skip = self.skip_term(tape, input)?;
            h = tape.add(h, skip)?;
        }
        Ok(h)
    }

    /// Output and its derivative with respect to a scalar input, both as
    /// differentiable tape nodes (tangent propagated forward through the
    /// same layers).
    pub fn forward_with_tangent(&self, tape: &mut Tape, t: Var) -> Result<(Var, Var)> {
        if self.spec.input_dim != 1 {
            return Err(Error::invalid(format!(
                "time derivative needs a scalar-input network, this one takes {}",
                self.spec.input_dim
            )));
        }
        self.spec.check_input(tape.shape(t).1)?;
        let one = tape.constant(Tensor::scalar(1.0))?;
        let last = self.weights.len() - 1;
        let mut h = t;
        let mut dh: Option<Var> = None;
        for (l, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let a = tape.matmul(h, w)?;
            let a = tape.add_row(a, b)?;
            // d(t W)/dt = W broadcast over the batch, i.e. ones * W.
            let da = match dh {
                Some(d) => tape.matmul(d, w)?,
                None => {
                    let ones = tape.constant(Tensor::filled(tape.shape(t).0, 1, 1.0))?;
                    tape.matmul(ones, w)?
                }
            };
            if l < last {
                h = tape.tanh(a)?;
                let h2 = tape.square(h)?;
                let slope = tape.sub(one, h2)?;
                dh = Some(tape.mul(slope, da)?);
            } else {
                h = a;
                dh = Some(da);
            }
        }
        let mut out = h;
        let mut dout = dh.expect("network has at least one layer");
        if self.spec.skip_connection {
            let skip = self.skip_term(tape, t)?;
            out = tape.add(out, skip)?;
            dout = tape.add(dout, one)?;
        }
        Ok((out, dout))
    }

    /// Gradient with respect to the bound parameters, flattened in layout order.
    pub fn flat_gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut flat = vec![0.0; self.spec.param_count()];
        let layers = self.spec.layout();
        for ((&w, &b), layer) in self.weights.iter().zip(&self.biases).zip(layers) {
            for (v, range) in [(w, layer.weights), (b, layer.bias)] {
                if let Some(g) = grads.get(v) {
                    flat[range].copy_from_slice(g.data());
                }
            }
        }
        flat
    }
}
