use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a feedforward classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    Dense {
        input: usize,
        output: usize,
        bias: bool,
    },
    Relu,
    SoftmaxCrossEntropyHead {
        classes: usize,
    },
}

/// Ordered layer stack ending in a softmax cross-entropy head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    layers: Vec<Layer>,
}

impl ModelSpec {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let spec = Self { layers };
        spec.validate()?;
        Ok(spec)
    }

    /// Dense/ReLU stack with the given hidden widths, biased dense layers and a softmax head.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(2 * hidden.len() + 2);
        let mut width = input;
        for &h in hidden {
            layers.push(Layer::Dense {
                input: width,
                output: h,
                bias: true,
            });
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(Layer::Dense {
            input: width,
            output: classes,
            bias: true,
        });
        layers.push(Layer::SoftmaxCrossEntropyHead { classes });
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        match self.layers[0] {
            Layer::Dense { input, .. } => input,
            _ => unreachable!("validated: first layer is dense"),
        }
    }

    pub fn classes(&self) -> usize {
        match self.layers[self.layers.len() - 1] {
            Layer::SoftmaxCrossEntropyHead { classes } => classes,
            _ => unreachable!("validated: last layer is the head"),
        }
    }

    /// Width of the activation flowing *into* each layer.
    pub fn input_widths(&self) -> Vec<usize> {
        let mut width = self.input_dim();
        self.layers
            .iter()
            .map(|layer| {
                let w = width;
                if let Layer::Dense { output, .. } = layer {
                    width = *output;
                }
                w
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                Layer::Dense {
                    input,
                    output,
                    bias,
                } => input * output + if bias { output } else { 0 },
                _ => 0,
            })
            .sum()
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        let Some(first) = self.layers.first() else {
            return bad("no layers".into());
        };
        if !matches!(first, Layer::Dense { .. }) {
            return bad("first layer must be dense".into());
        }
        let heads = self
            .layers
            .iter()
            .filter(|l| matches!(l, Layer::SoftmaxCrossEntropyHead { .. }))
            .count();
        if heads != 1 {
            return bad(format!("expected exactly one softmax head, found {heads}"));
        }
        let mut width = None;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Dense { input, output, .. } => {
                    if input == 0 || output == 0 {
                        return bad(format!("layer {i}: dense dimensions must be positive"));
                    }
                    if let Some(w) = width {
                        if w != input {
                            return bad(format!(
                                "layer {i}: dense input {input} does not chain with width {w}"
                            ));
                        }
                    }
                    width = Some(output);
                }
                Layer::Relu => {}
                Layer::SoftmaxCrossEntropyHead { classes } => {
                    if i + 1 != self.layers.len() {
                        return bad("softmax head must be the last layer".into());
                    }
                    if classes < 2 {
                        return bad(format!("head needs at least 2 classes, got {classes}"));
                    }
                    if width != Some(classes) {
                        return bad(format!(
                            "head expects {classes} logits but previous width is {}",
                            width.unwrap_or(0)
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}
