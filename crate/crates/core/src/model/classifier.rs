use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Function, Graph, NodeId, Selector, Tensor};
use crate::error::{invalid, shape_err, Error, Result};
use crate::seeding::rng_from;

const CHECKPOINT_FORMAT: &str = "advshap-classifier";
const CHECKPOINT_VERSION: u32 = 1;

/// Spatial input layout of a classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputShape {
    pub fn gray(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            channels: 1,
        }
    }

    /// Tensor shape `[C, H, W]`.
    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// One layer with its weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    /// `kernel: [O, C, KH, KW]`, `bias: [O]`.
    Conv2d {
        kernel: Tensor,
        bias: Tensor,
        padding: usize,
    },
    Relu,
    /// Reshapes to a `[1, n]` row for the following dense layer.
    Flatten,
    /// `weight: [in, out]`, `bias: [out]`.
    Dense { weight: Tensor, bias: Tensor },
}

/// A feed-forward classifier producing pre-softmax scores `g(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    layers: Vec<Layer>,
    num_classes: usize,
    input_shape: InputShape,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    classifier: Classifier,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_parts(data, shape.to_vec())
}

fn conv_layer(rng: &mut impl Rng, cin: usize, cout: usize) -> Layer {
    let fan_in = (cin * 9) as f64;
    Layer::Conv2d {
        kernel: uniform(rng, &[cout, cin, 3, 3], (6.0 / fan_in).sqrt()),
        bias: Tensor::zeros(&[cout]),
        padding: 1,
    }
}

fn dense_layer(rng: &mut impl Rng, nin: usize, nout: usize, relu_follows: bool) -> Layer {
    let gain = if relu_follows { 6.0 } else { 3.0 };
    Layer::Dense {
        weight: uniform(rng, &[nin, nout], (gain / nin as f64).sqrt()),
        bias: Tensor::zeros(&[nout]),
    }
}

impl Classifier {
    /// Validates layer shapes by running a zero input through the stack.
    pub fn new(layers: Vec<Layer>, num_classes: usize, input_shape: InputShape) -> Result<Self> {
        if num_classes < 2 {
            return Err(invalid("a classifier needs at least two classes"));
        }
        let c = Self {
            layers,
            num_classes,
            input_shape,
        };
        let out = autodiff::forward(&c, &Tensor::zeros(&input_shape.dims()))?;
        if out.numel() != num_classes {
            return Err(shape_err(
                "classifier",
                format!("network emits {} scores for {num_classes} classes", out.numel()),
            ));
        }
        Ok(c)
    }

    /// conv(8, 3×3)–ReLU–conv(16, 3×3)–ReLU–flatten–dense(T), same padding.
    pub fn toy(input_shape: InputShape, num_classes: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_from(seed);
        let flat = 16 * input_shape.height * input_shape.width;
        let layers = vec![
            conv_layer(&mut rng, input_shape.channels, 8),
            Layer::Relu,
            conv_layer(&mut rng, 8, 16),
            Layer::Relu,
            Layer::Flatten,
            dense_layer(&mut rng, flat, num_classes, false),
        ];
        Self::new(layers, num_classes, input_shape)
    }

    /// Flatten followed by one dense layer: `g(x) = Wᵀx + b`.
    pub fn linear(input_shape: InputShape, weight: Tensor, bias: Tensor) -> Result<Self> {
        let num_classes = bias.numel();
        Self::new(
            vec![Layer::Flatten, Layer::Dense { weight, bias }],
            num_classes,
            input_shape,
        )
    }

    /// Flatten–dense(hidden)–ReLU–dense(T).
    pub fn mlp(input_shape: InputShape, hidden: usize, num_classes: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_from(seed);
        let layers = vec![
            Layer::Flatten,
            dense_layer(&mut rng, input_shape.numel(), hidden, true),
            Layer::Relu,
            dense_layer(&mut rng, hidden, num_classes, false),
        ];
        Self::new(layers, num_classes, input_shape)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_shape(&self) -> InputShape {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// All weight buffers in a fixed order (per layer: weight, then bias).
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv2d { kernel, bias, .. } => out.extend([kernel, bias]),
                Layer::Dense { weight, bias } => out.extend([weight, bias]),
                Layer::Relu | Layer::Flatten => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv2d { kernel, bias, .. } => out.extend([kernel, bias]),
                Layer::Dense { weight, bias } => out.extend([weight, bias]),
                Layer::Relu | Layer::Flatten => {}
            }
        }
        out
    }

    /// Records the network on `g`. With `trainable`, weights become
    /// variables and their node ids are returned in [`Classifier::params`] order.
    pub fn build_graph(
        &self,
        g: &mut Graph,
        input: NodeId,
        trainable: bool,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        if g.value(input).shape() != self.input_shape.dims() {
            return Err(shape_err(
                "classifier",
                format!(
                    "input shape {:?}, expected {:?}",
                    g.value(input).shape(),
                    self.input_shape.dims()
                ),
            ));
        }
        let leaf = |g: &mut Graph, t: &Tensor| {
            if trainable {
                g.variable(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let mut ids = Vec::new();
        let mut h = input;
        for layer in &self.layers {
            h = match layer {
                Layer::Conv2d {
                    kernel,
                    bias,
                    padding,
                } => {
                    let (k, b) = (leaf(g, kernel), leaf(g, bias));
                    ids.extend([k, b]);
                    let c = g.conv2d(h, k, *padding)?;
                    g.bias_add(c, b, 0)?
                }
                Layer::Relu => g.relu(h),
                Layer::Flatten => {
                    let n = g.value(h).numel();
                    g.reshape(h, &[1, n])?
                }
                Layer::Dense { weight, bias } => {
                    let (w, b) = (leaf(g, weight), leaf(g, bias));
                    ids.extend([w, b]);
                    let m = g.matmul(h, w)?;
                    g.bias_add(m, b, 1)?
                }
            };
        }
        let n = g.value(h).numel();
        let out = g.reshape(h, &[n])?;
        Ok((out, ids))
    }

    /// Pre-softmax scores.
    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(autodiff::forward(self, x)?.into_data())
    }

    /// Index of the highest score (first on ties).
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Tensor::from_parts(self.logits(x)?, vec![self.num_classes]).argmax()
    }

    /// `g_a(x) − g_b(x)` and its input gradient.
    pub fn score_diff_and_grad(&self, x: &Tensor, a: usize, b: usize) -> Result<(f64, Tensor)> {
        self.check_class(a)?;
        self.check_class(b)?;
        let mut w = vec![0.0; self.num_classes];
        w[a] += 1.0;
        w[b] -= 1.0;
        autodiff::value_and_grad(self, x, &Selector::Weighted(w))
    }

    /// Scores at `x` plus the input gradient of `Σ wᵢ·g_i(x)`, where the
    /// weights are chosen from the scores themselves.
    pub fn logits_and_grad(
        &self,
        x: &Tensor,
        weights: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Tensor)> {
        let mut g = Graph::new();
        let xi = g.variable(x.clone());
        let (out, _) = self.build_graph(&mut g, xi, false)?;
        let logits = g.value(out).data().to_vec();
        let w = weights(&logits);
        let wn = g.constant(Tensor::new(w, vec![logits.len()])?);
        let p = g.mul(out, wn)?;
        let s = g.sum(p);
        let grads = g.backward(s)?;
        Ok((logits, grads.get_or_zeros(xi)))
    }

    /// Cross-entropy of the scores against `label` and its input gradient.
    pub fn loss_and_input_grad(&self, x: &Tensor, label: usize) -> Result<(f64, Tensor)> {
        self.check_class(label)?;
        let mut loss = 0.0;
        let (_, grad) = self.logits_and_grad(x, |z| {
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            loss = s.ln() + max - z[label];
            let mut w: Vec<f64> = e.iter().map(|v| v / s).collect();
            w[label] -= 1.0;
            w
        })?;
        Ok((loss, grad))
    }

    pub(crate) fn check_class(&self, c: usize) -> Result<()> {
        if c >= self.num_classes {
            return Err(invalid(format!(
                "class {c} out of range for {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Writes a versioned JSON checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes()?)?;
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            classifier: self.clone(),
        };
        Ok(serde_json::to_vec(&ck)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_bytes(&std::fs::read(path)?)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(bytes)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(invalid(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let c = ck.classifier;
        if c.params().iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("checkpoint weights"));
        }
        Self::new(c.layers, c.num_classes, c.input_shape)
    }
}

impl Function for Classifier {
    fn build(&self, graph: &mut Graph, input: NodeId) -> Result<NodeId> {
        self.build_graph(graph, input, false).map(|(out, _)| out)
    }
}

/// `max(max_{i≠t} Z_i − Z_t, −threshold)` on precomputed scores.
pub fn margin_from_logits(logits: &[f64], target: usize, threshold: f64) -> Result<f64> {
    if target >= logits.len() {
        return Err(invalid(format!(
            "target {target} out of range for {} classes",
            logits.len()
        )));
    }
    let other = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target)
        .map(|(_, &z)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((other - logits[target]).max(-threshold))
}

/// Targeted margin of `classifier` at `image`. Values `≤ −threshold` mean the
/// target wins by at least `threshold`.
pub fn attack_margin(
    classifier: &Classifier,
    image: &Tensor,
    target: usize,
    threshold: f64,
) -> Result<f64> {
    classifier.check_class(target)?;
    margin_from_logits(&classifier.logits(image)?, target, threshold)
}
