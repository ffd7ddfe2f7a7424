//! Forward pass and backpropagation for dense/ReLU stacks with a softmax
//! cross-entropy head. Matrices are row-major `[batch × width]` slices.

use std::hash::{Hash, Hasher};

use super::params::ParamVector;
use super::spec::{Layer, ModelSpec};
use crate::error::{Error, Result};

/// Minibatch of row-major features and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                what: "batch features vs rows",
                expected: dim * labels.len(),
                got: features.len(),
            });
        }
        Ok(Self {
            features,
            dim,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch::new(features, self.dim, labels)
    }
}

/// Per-layer inputs recorded by [`forward`] for use by [`backward`].
#[derive(Debug, Clone)]
pub struct ActivationCache {
    /// `inputs[i]` is the activation entering layer `i`.
    inputs: Vec<Vec<f64>>,
    probs: Vec<f64>,
    rows: usize,
    params_fingerprint: u64,
    batch_fingerprint: u64,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub loss: f64,
    pub cache: ActivationCache,
}

fn fingerprint(values: &[f64], extra: &[usize]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    values.len().hash(&mut h);
    for v in values {
        v.to_bits().hash(&mut h);
    }
    extra.hash(&mut h);
    h.finish()
}

/// Computes `out[b][o] = Σ_i x[b][i]·w[o][i] (+ bias[o])`.
fn dense_forward(
    x: &[f64],
    rows: usize,
    input: usize,
    w: &[f64],
    b: Option<&[f64]>,
    output: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; rows * output];
    for r in 0..rows {
        let xr = &x[r * input..(r + 1) * input];
        let orow = &mut out[r * output..(r + 1) * output];
        for (o, slot) in orow.iter_mut().enumerate() {
            let wr = &w[o * input..(o + 1) * input];
            let mut acc = 0.0;
            for (a, c) in xr.iter().zip(wr) {
                acc += a * c;
            }
            *slot = acc + b.map_or(0.0, |b| b[o]);
        }
    }
    out
}

/// Row-wise softmax and mean cross-entropy, stabilized with log-sum-exp.
pub fn softmax_cross_entropy(logits: &[f64], classes: usize, labels: &[usize]) -> (Vec<f64>, f64) {
    let rows = labels.len();
    let mut probs = vec![0.0; logits.len()];
    let mut total = 0.0;
    for r in 0..rows {
        let z = &logits[r * classes..(r + 1) * classes];
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let p = &mut probs[r * classes..(r + 1) * classes];
        for (pi, zi) in p.iter_mut().zip(z) {
            *pi = (zi - m).exp() / sum;
        }
        total += -(z[labels[r]] - m - sum.ln());
    }
    (probs, total / rows as f64)
}

pub fn forward(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<ForwardOutput> {
    if batch.dim() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "batch feature dimension vs first layer",
            expected: spec.input_dim(),
            got: batch.dim(),
        });
    }
    if let Some(i) = batch.features().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("batch feature {i}")));
    }
    let classes = spec.classes();
    if let Some(&bad) = batch.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    check_params(spec, params)?;

    let rows = batch.len();
    let values = params.values();
    let mut inputs = Vec::with_capacity(spec.layers().len());
    let mut act = batch.features().to_vec();
    let mut width = batch.dim();
    let mut offset = 0;
    let mut result = None;
    for layer in spec.layers() {
        match *layer {
            Layer::Dense {
                input,
                output,
                bias,
            } => {
                let w = &values[offset..offset + input * output];
                offset += input * output;
                let b = bias.then(|| {
                    let b = &values[offset..offset + output];
                    offset += output;
                    b
                });
                let next = dense_forward(&act, rows, input, w, b, output);
                inputs.push(std::mem::replace(&mut act, next));
                width = output;
            }
            Layer::Relu => {
                let next = act.iter().map(|&v| v.max(0.0)).collect();
                inputs.push(std::mem::replace(&mut act, next));
            }
            Layer::SoftmaxCrossEntropyHead { classes } => {
                debug_assert_eq!(width, classes);
                let (probs, loss) = softmax_cross_entropy(&act, classes, batch.labels());
                inputs.push(act.clone());
                result = Some((std::mem::take(&mut act), probs, loss));
            }
        }
    }
    let (logits, probs, loss) = result.expect("validated spec ends in a head");
    Ok(ForwardOutput {
        cache: ActivationCache {
            inputs,
            probs: probs.clone(),
            rows,
            params_fingerprint: fingerprint(params.values(), &[]),
            batch_fingerprint: fingerprint(batch.features(), batch.labels()),
        },
        logits,
        probs,
        loss,
    })
}

/// Gradient of the mean cross-entropy with respect to every parameter.
pub fn backward(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
    cache: &ActivationCache,
) -> Result<Vec<f64>> {
    check_params(spec, params)?;
    if cache.rows != batch.len()
        || cache.inputs.len() != spec.layers().len()
        || cache.params_fingerprint != fingerprint(params.values(), &[])
        || cache.batch_fingerprint != fingerprint(batch.features(), batch.labels())
    {
        return Err(Error::StaleCache);
    }
    let rows = batch.len();
    let values = params.values();
    let mut grad = vec![0.0; values.len()];

    // Parameter offsets per dense layer, walked in reverse.
    let mut offsets = Vec::with_capacity(spec.layers().len());
    let mut offset = 0;
    for layer in spec.layers() {
        offsets.push(offset);
        if let Layer::Dense {
            input,
            output,
            bias,
        } = *layer
        {
            offset += input * output + if bias { output } else { 0 };
        }
    }

    // Upstream gradient with respect to the current layer's output.
    let mut upstream: Vec<f64> = Vec::new();
    for (i, layer) in spec.layers().iter().enumerate().rev() {
        let x = &cache.inputs[i];
        match *layer {
            Layer::SoftmaxCrossEntropyHead { classes } => {
                let scale = 1.0 / rows as f64;
                upstream = cache.probs.clone();
                for (r, &label) in batch.labels().iter().enumerate() {
                    upstream[r * classes + label] -= 1.0;
                }
                for g in &mut upstream {
                    *g *= scale;
                }
            }
            Layer::Relu => {
                for (g, &xi) in upstream.iter_mut().zip(x) {
                    if xi <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            Layer::Dense {
                input,
                output,
                bias,
            } => {
                let base = offsets[i];
                let w = &values[base..base + input * output];
                {
                    let gw = &mut grad[base..base + input * output];
                    for r in 0..rows {
                        let xr = &x[r * input..(r + 1) * input];
                        let ur = &upstream[r * output..(r + 1) * output];
                        for (o, &u) in ur.iter().enumerate() {
                            if u == 0.0 {
                                continue;
                            }
                            for (gwi, &xi) in gw[o * input..(o + 1) * input].iter_mut().zip(xr) {
                                *gwi += u * xi;
                            }
                        }
                    }
                }
                if bias {
                    let gb = &mut grad[base + input * output..base + input * output + output];
                    for r in 0..rows {
                        for (g, &u) in gb.iter_mut().zip(&upstream[r * output..(r + 1) * output]) {
                            *g += u;
                        }
                    }
                }
                if i > 0 {
                    let mut down = vec![0.0; rows * input];
                    for r in 0..rows {
                        let dr = &mut down[r * input..(r + 1) * input];
                        for (o, &u) in upstream[r * output..(r + 1) * output].iter().enumerate() {
                            if u == 0.0 {
                                continue;
                            }
                            for (d, &wi) in dr.iter_mut().zip(&w[o * input..(o + 1) * input]) {
                                *d += u * wi;
                            }
                        }
                    }
                    upstream = down;
                }
            }
        }
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            layer: params.partition().layer_of(i).unwrap_or("?").to_string(),
            index: i,
        });
    }
    Ok(grad)
}

fn check_params(spec: &ModelSpec, params: &ParamVector) -> Result<()> {
    if params.len() != spec.param_count() {
        return Err(Error::DimensionMismatch {
            what: "parameter count vs model spec",
            expected: spec.param_count(),
            got: params.len(),
        });
    }
    Ok(())
}

/// Forward + backward in one call; returns `(loss, grad)`.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, Vec<f64>)> {
    let out = forward(spec, params, batch)?;
    let grad = backward(spec, params, batch, &out.cache)?;
    Ok((out.loss, grad))
}
