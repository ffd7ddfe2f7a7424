use std::ops::Range;

use rand::Rng;

use super::spec::{Layer, ModelSpec};
use crate::error::{Error, Result};
use crate::rng;

/// A named contiguous slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlice {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl LayerSlice {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Ordered, contiguous, non-overlapping cover of `[0, total)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPartition {
    slices: Vec<LayerSlice>,
}

impl LayerPartition {
    pub fn new(slices: Vec<LayerSlice>) -> Result<Self> {
        let mut next = 0;
        for s in &slices {
            if s.offset != next {
                return Err(Error::InvalidArgument(format!(
                    "slice `{}` starts at {} but previous slice ended at {next}",
                    s.name, s.offset
                )));
            }
            next += s.len;
        }
        Ok(Self { slices })
    }

    /// One weight slice and (if biased) one bias slice per dense layer, named `dense{i}.w` / `dense{i}.b`.
    pub fn for_spec(spec: &ModelSpec) -> Self {
        let mut slices = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, len: usize| {
            slices.push(LayerSlice { name, offset, len });
            offset += len;
        };
        let dense = spec.layers().iter().filter_map(|l| match *l {
            Layer::Dense {
                input,
                output,
                bias,
            } => Some((input, output, bias)),
            _ => None,
        });
        for (i, (input, output, bias)) in dense.enumerate() {
            push(format!("dense{i}.w"), input * output);
            if bias {
                push(format!("dense{i}.b"), output);
            }
        }
        Self { slices }
    }

    pub fn slices(&self) -> &[LayerSlice] {
        &self.slices
    }

    pub fn total(&self) -> usize {
        self.slices.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn get(&self, name: &str) -> Option<&LayerSlice> {
        self.slices.iter().find(|s| s.name == name)
    }

    /// Name of the slice containing flat index `index`.
    pub fn layer_of(&self, index: usize) -> Option<&str> {
        self.slices
            .iter()
            .find(|s| s.range().contains(&index))
            .map(|s| s.name.as_str())
    }
}

/// Flat parameter store together with its layer partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    partition: LayerPartition,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, partition: LayerPartition) -> Result<Self> {
        if values.len() != partition.total() {
            return Err(Error::DimensionMismatch {
                what: "parameter values vs partition",
                expected: partition.total(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "parameter {i} (layer `{}`)",
                partition.layer_of(i).unwrap_or("?")
            )));
        }
        Ok(Self { values, partition })
    }

    pub fn zeros(partition: LayerPartition) -> Self {
        Self {
            values: vec![0.0; partition.total()],
            partition,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn partition(&self) -> &LayerPartition {
        &self.partition
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        self.partition.get(name).map(|s| &self.values[s.range()])
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub(crate) fn from_parts_unchecked(values: Vec<f64>, partition: LayerPartition) -> Self {
        debug_assert_eq!(values.len(), partition.total());
        Self { values, partition }
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn check_same_shape(&self, other_len: usize, what: &'static str) -> Result<()> {
        if self.values.len() != other_len {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.values.len(),
                got: other_len,
            });
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    // ModelSpec is only constructible in a valid state; re-check for specs built via serde.
    let spec = ModelSpec::new(spec.layers().to_vec())?;
    let partition = LayerPartition::for_spec(&spec);
    let mut values = Vec::with_capacity(partition.total());
    let mut rng = rng::stream(seed);
    for layer in spec.layers() {
        if let Layer::Dense {
            input,
            output,
            bias,
        } = *layer
        {
            let limit = (6.0 / (input + output) as f64).sqrt();
            values.extend((0..input * output).map(|_| rng.random_range(-limit..=limit)));
            if bias {
                values.extend(std::iter::repeat_n(0.0, output));
            }
        }
    }
    Ok(ParamVector::from_parts_unchecked(values, partition))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(input: usize, output: usize) -> ModelSpec {
        ModelSpec::new(vec![
            Layer::Dense {
                input,
                output,
                bias: true,
            },
            Layer::SoftmaxCrossEntropyHead { classes: output },
        ])
        .unwrap()
    }

    #[test]
    fn dense_2x3_partition_and_zero_bias() {
        let p = init_params(&dense(2, 3), 1).unwrap();
        let names: Vec<_> = p
            .partition()
            .slices()
            .iter()
            .map(|s| (s.name.as_str(), s.offset, s.len))
            .collect();
        assert_eq!(names, vec![("dense0.w", 0, 6), ("dense0.b", 6, 3)]);
        assert_eq!(p.layer("dense0.b").unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn init_is_deterministic() {
        let spec = ModelSpec::mlp(5, &[7], 3).unwrap();
        let a = init_params(&spec, 99).unwrap();
        let b = init_params(&spec, 99).unwrap();
        let bits = |p: &ParamVector| p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&init_params(&spec, 100).unwrap()));
    }

    #[test]
    fn glorot_bound_holds() {
        let bound = (6.0f64 / 8.0).sqrt();
        for seed in 0..50 {
            let p = init_params(&dense(4, 4), seed).unwrap();
            assert!(p
                .layer("dense0.w")
                .unwrap()
                .iter()
                .all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn partition_must_be_contiguous() {
        let s = |name: &str, offset, len| LayerSlice {
            name: name.into(),
            offset,
            len,
        };
        assert!(LayerPartition::new(vec![s("a", 0, 2), s("b", 3, 1)]).is_err());
        let p = LayerPartition::new(vec![s("a", 0, 2), s("b", 2, 1)]).unwrap();
        assert_eq!(p.total(), 3);
        assert_eq!(p.layer_of(2), Some("b"));
        assert!(ParamVector::new(vec![0.0; 2], p.clone()).is_err());
        assert!(ParamVector::new(vec![0.0, f64::NAN, 1.0], p).is_err());
    }
}
