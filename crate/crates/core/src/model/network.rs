//! The feedforward quality scorer: affine layers interleaved with GDN,
//! ending in a single scalar output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::gdn::{GdnLayer, GDN_FLOOR};
use crate::error::{check_dim, Error, Result};
use crate::objectives::AnnotatorReliability;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn new(inputs: usize, outputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        check_dim("affine weight", inputs * outputs, weight.len())?;
        check_dim("affine bias", outputs, bias.len())?;
        Ok(Self {
            inputs,
            outputs,
            weight,
            bias,
        })
    }

    pub fn num_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Affine(Affine),
    Gdn(GdnLayer),
}

impl Layer {
    fn input_dim(&self) -> usize {
        match self {
            Layer::Affine(a) => a.inputs,
            Layer::Gdn(g) => g.channels,
        }
    }

    fn output_dim(&self) -> usize {
        match self {
            Layer::Affine(a) => a.outputs,
            Layer::Gdn(g) => g.channels,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Layer::Affine(a) => a.num_params(),
            Layer::Gdn(g) => g.num_params(),
        }
    }
}

/// All trainable parameters of the scorer, plus the annotator reliabilities
/// learned jointly during pre-training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
    /// Number of leading layers that use the shallow learning rate during
    /// active fine-tuning.
    pub shallow_layers: usize,
    #[serde(default)]
    pub annotators: Option<AnnotatorReliability>,
}

/// Gradient of a scalar objective with respect to every scorer parameter,
/// laid out in [`ModelParams::flatten`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad {
    pub values: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn add_scaled(&mut self, other: &ParamGrad, scale: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Intermediate activations of one forward pass; `inputs[i]` feeds layer `i`.
struct Trace {
    inputs: Vec<Vec<f64>>,
    output: f64,
}

impl ModelParams {
    /// Checks that layer shapes compose into a scalar-valued function.
    pub fn new(layers: Vec<Layer>, shallow_layers: usize) -> Result<Self> {
        let params = Self {
            layers,
            shallow_layers,
            annotators: None,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or(Error::Empty("model layers"))?;
        let mut dim = first.input_dim();
        for layer in &self.layers {
            check_dim("layer composition", dim, layer.input_dim())?;
            if let Layer::Gdn(g) = layer {
                g.validate()?;
            }
            dim = layer.output_dim();
        }
        check_dim("scorer output", 1, dim)?;
        if self.shallow_layers > self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "shallow layer count {} exceeds depth {}",
                self.shallow_layers,
                self.layers.len()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Concatenates every parameter: per layer, affine weights then bias, or
    /// GDN omega then gamma (row-major, full matrix).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            match layer {
                Layer::Affine(a) => {
                    out.extend_from_slice(&a.weight);
                    out.extend_from_slice(&a.bias);
                }
                Layer::Gdn(g) => {
                    out.extend_from_slice(&g.omega);
                    out.extend_from_slice(&g.gamma);
                }
            }
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten). Does not project.
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        check_dim("flat parameters", self.num_params(), values.len())?;
        let mut rest = values;
        let mut take = |dst: &mut Vec<f64>| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        for layer in &mut self.layers {
            match layer {
                Layer::Affine(a) => {
                    take(&mut a.weight);
                    take(&mut a.bias);
                }
                Layer::Gdn(g) => {
                    take(&mut g.omega);
                    take(&mut g.gamma);
                }
            }
        }
        Ok(())
    }

    /// One flag per flattened parameter: `true` for the shallow partition.
    pub fn shallow_mask(&self) -> Vec<bool> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| std::iter::repeat_n(i < self.shallow_layers, l.num_params()))
            .collect()
    }

    /// Applies the GDN constraints to every GDN layer.
    pub fn project(&mut self) {
        for layer in &mut self.layers {
            if let Layer::Gdn(g) = layer {
                g.project();
            }
        }
    }

    fn trace(&self, x: &[f64]) -> Result<Trace> {
        check_dim("feature vector", self.input_dim(), x.len())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for layer in &self.layers {
            let next = match layer {
                Layer::Affine(a) => a.forward(&current),
                Layer::Gdn(g) => g.forward(&current)?,
            };
            inputs.push(current);
            current = next;
        }
        Ok(Trace {
            inputs,
            output: current[0],
        })
    }

    /// Quality score of one feature vector.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.trace(x)?.output)
    }

    /// Gradient of `grad_out * score(x)` with respect to every parameter.
    pub fn score_backward(&self, x: &[f64], grad_out: f64) -> Result<ParamGrad> {
        let mut grad = ParamGrad::zeros(self.num_params());
        self.accumulate_backward(x, grad_out, &mut grad)?;
        Ok(grad)
    }

    /// Adds the gradient of `grad_out * score(x)` into `grad`.
    pub fn accumulate_backward(&self, x: &[f64], grad_out: f64, grad: &mut ParamGrad) -> Result<f64> {
        check_dim("gradient buffer", self.num_params(), grad.values.len())?;
        let trace = self.trace(x)?;
        if grad_out == 0.0 {
            return Ok(trace.output);
        }
        let mut upstream = vec![grad_out];
        let mut end = grad.values.len();
        for (layer, input) in self.layers.iter().zip(&trace.inputs).rev() {
            let start = end - layer.num_params();
            let slot = &mut grad.values[start..end];
            upstream = match layer {
                Layer::Affine(a) => {
                    let (gw, gb) = slot.split_at_mut(a.inputs * a.outputs);
                    let mut down = vec![0.0; a.inputs];
                    for (o, &g) in upstream.iter().enumerate() {
                        gb[o] += g;
                        let row = &a.weight[o * a.inputs..(o + 1) * a.inputs];
                        let grow = &mut gw[o * a.inputs..(o + 1) * a.inputs];
                        for i in 0..a.inputs {
                            grow[i] += g * input[i];
                            down[i] += g * row[i];
                        }
                    }
                    down
                }
                Layer::Gdn(g) => {
                    let gg = g.backward(input, &upstream)?;
                    let (go, gm) = slot.split_at_mut(g.channels);
                    go.iter_mut().zip(&gg.omega).for_each(|(a, b)| *a += b);
                    gm.iter_mut().zip(&gg.gamma).for_each(|(a, b)| *a += b);
                    gg.input
                }
            };
            end = start;
        }
        Ok(trace.output)
    }
}

/// Builds a scorer with layer sizes `dims` (input first, final entry 1):
/// affine + GDN for each hidden width, then a final affine to the scalar.
///
/// Weights are drawn from `N(0, 1/fan_in)`, biases start at zero, GDN starts
/// at `omega = 1` and `gamma = 2^-10 (1 + I + jitter)` with symmetric jitter.
pub fn init_params(seed: u64, dims: &[usize]) -> Result<ModelParams> {
    if dims.len() < 2 {
        return Err(Error::Empty("layer dimensions"));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument("zero-width layer".into()));
    }
    if *dims.last().unwrap() != 1 {
        return Err(Error::InvalidArgument("final layer width must be 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Uniform::new(0.0, 0.1).expect("valid range");
    let mut layers = Vec::new();
    for (i, pair) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
        let weight = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
        layers.push(Layer::Affine(Affine::new(
            fan_in,
            fan_out,
            weight,
            vec![0.0; fan_out],
        )?));
        if i + 2 < dims.len() {
            let c = fan_out;
            let mut gamma = vec![0.0; c * c];
            for r in 0..c {
                for s in r..c {
                    let diag = if r == s { 1.0 } else { 0.0 };
                    let g = GDN_FLOOR * (1.0 + diag + jitter.sample(&mut rng));
                    gamma[r * c + s] = g;
                    gamma[s * c + r] = g;
                }
            }
            let mut gdn = GdnLayer {
                channels: c,
                omega: vec![1.0; c],
                gamma,
            };
            gdn.project();
            layers.push(Layer::Gdn(gdn));
        }
    }
    let shallow = layers.len().min(2);
    ModelParams::new(layers, shallow)
}
