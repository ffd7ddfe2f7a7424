//! Layer-wise Gaussian model of epoch-to-epoch parameter deltas.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{LayerPartition, ParamVector};

/// Default variance floor added to every fitted variance.
pub const DEFAULT_EPSILON: f64 = 0.001;

/// Parameter delta between two snapshots, partitioned like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochError {
    values: Vec<f64>,
    partition: LayerPartition,
    /// `(previous, current)` epoch indices of the two snapshots, when known.
    pub source_epochs: Option<(usize, usize)>,
}

impl EpochError {
    pub fn new(values: Vec<f64>, partition: LayerPartition) -> Result<Self> {
        if values.len() != partition.total() {
            return Err(Error::DimensionMismatch {
                what: "error vector vs partition",
                expected: partition.total(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("error vector".into()));
        }
        Ok(Self {
            values,
            partition,
            source_epochs: None,
        })
    }

    pub fn with_epochs(mut self, prev: usize, cur: usize) -> Self {
        self.source_epochs = Some((prev, cur));
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn partition(&self) -> &LayerPartition {
        &self.partition
    }

    /// `(layer name, values)` for every slice in partition order.
    pub fn layers(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.partition
            .slices()
            .iter()
            .map(|s| (s.name.as_str(), &self.values[s.range()]))
    }
}

/// `cur − prev`, elementwise.
pub fn compute_error(cur: &ParamVector, prev: &ParamVector) -> Result<EpochError> {
    if cur.partition() != prev.partition() {
        return Err(Error::DimensionMismatch {
            what: "snapshot partitions differ",
            expected: cur.len(),
            got: prev.len(),
        });
    }
    let values = cur
        .values()
        .iter()
        .zip(prev.values())
        .map(|(c, p)| c - p)
        .collect();
    EpochError::new(values, cur.partition().clone())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussParams {
    pub mu: f64,
    pub var: f64,
}

/// One fitted `(mean, variance)` pair per partition slice.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGauss {
    layers: Vec<(String, GaussParams)>,
}

impl LayerGauss {
    pub fn layers(&self) -> &[(String, GaussParams)] {
        &self.layers
    }

    pub fn get(&self, name: &str) -> Option<GaussParams> {
        self.layers.iter().find(|(n, _)| n == name).map(|(_, g)| *g)
    }

    fn covers(&self, partition: &LayerPartition) -> bool {
        self.layers.len() == partition.slices().len()
            && self
                .layers
                .iter()
                .zip(partition.slices())
                .all(|((name, _), s)| *name == s.name)
    }
}

/// Population mean and population variance plus `epsilon`, per layer.
pub fn fit_layer_gaussians(err: &EpochError, epsilon: f64) -> Result<LayerGauss> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "variance floor must be > 0, got {epsilon}"
        )));
    }
    let layers = err
        .layers()
        .map(|(name, values)| {
            if values.is_empty() {
                return Err(Error::Empty("layer slice"));
            }
            let n = values.len() as f64;
            let mu = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n + epsilon;
            Ok((name.to_string(), GaussParams { mu, var }))
        })
        .collect::<Result<_>>()?;
    Ok(LayerGauss { layers })
}

/// Fills each layer slice with i.i.d. draws from that layer's fitted normal.
pub fn sample_update<R: Rng + ?Sized>(
    fit: &LayerGauss,
    partition: &LayerPartition,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !fit.covers(partition) {
        return Err(Error::InvalidArgument(
            "fit does not cover every partition slice".into(),
        ));
    }
    let mut out = Vec::with_capacity(partition.total());
    for (slice, (_, g)) in partition.slices().iter().zip(&fit.layers) {
        let normal = Normal::new(g.mu, g.var.sqrt())
            .map_err(|e| Error::InvalidArgument(format!("layer `{}`: {e}", slice.name)))?;
        out.extend((0..slice.len).map(|_| normal.sample(rng)));
    }
    Ok(out)
}

/// `θ + ẽ`, elementwise.
pub fn apply_sampled_update(theta: &ParamVector, e_tilde: &[f64]) -> Result<ParamVector> {
    theta.check_same_shape(e_tilde.len(), "sampled update vs parameters")?;
    let values = theta
        .values()
        .iter()
        .zip(e_tilde)
        .map(|(t, e)| t + e)
        .collect();
    ParamVector::new(values, theta.partition().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSlice, SgdHyper, SgdState};
    use crate::rng;

    fn partition(lens: &[usize]) -> LayerPartition {
        let mut offset = 0;
        LayerPartition::new(
            lens.iter()
                .enumerate()
                .map(|(i, &len)| {
                    let s = LayerSlice {
                        name: format!("l{i}"),
                        offset,
                        len,
                    };
                    offset += len;
                    s
                })
                .collect(),
        )
        .unwrap()
    }

    fn pv(values: Vec<f64>) -> ParamVector {
        let p = partition(&[values.len()]);
        ParamVector::new(values, p).unwrap()
    }

    #[test]
    fn error_is_elementwise_difference() {
        let a = pv(vec![1.5, 2.0]);
        assert_eq!(compute_error(&a, &a).unwrap().values(), &[0.0, 0.0]);
        let b = pv(vec![1.0, 3.0]);
        assert_eq!(compute_error(&a, &b).unwrap().values(), &[0.5, -1.0]);
        assert!(compute_error(&a, &pv(vec![1.0])).is_err());
    }

    #[test]
    fn error_after_plain_gd_step_is_scaled_gradient() {
        use crate::nn::{init_params, loss_and_grad, sgd_step, Batch, ModelSpec};
        let spec = ModelSpec::mlp(3, &[4], 2).unwrap();
        let before = init_params(&spec, 21).unwrap();
        let batch = Batch::new(vec![0.3, -0.2, 0.8, -0.5, 0.9, 0.1], 3, vec![1, 0]).unwrap();
        let (_, grad) = loss_and_grad(&spec, &before, &batch).unwrap();
        let hyper = SgdHyper {
            eta: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut after = before.clone();
        sgd_step(
            &mut after,
            &grad,
            &mut SgdState::zeros(before.len()),
            &hyper,
        )
        .unwrap();
        let err = compute_error(&after, &before).unwrap();
        let diff: f64 = err
            .values()
            .iter()
            .zip(&grad)
            .map(|(e, g)| (e + hyper.eta * g).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = grad
            .iter()
            .map(|g| (hyper.eta * g).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(diff / scale < 1e-12, "{}", diff / scale);
    }

    #[test]
    fn fit_fixtures() {
        let eps = DEFAULT_EPSILON;
        let err = EpochError::new(vec![0.0; 4], partition(&[4])).unwrap();
        let g = fit_layer_gaussians(&err, eps).unwrap().get("l0").unwrap();
        assert_eq!((g.mu, g.var), (0.0, 0.001));

        let err = EpochError::new(vec![1.0, 2.0, 3.0, 4.0], partition(&[4])).unwrap();
        let g = fit_layer_gaussians(&err, eps).unwrap().get("l0").unwrap();
        assert_eq!(g.mu, 2.5);
        assert!((g.var - 1.251).abs() < 1e-15);

        let err = EpochError::new(vec![1.0], partition(&[1])).unwrap();
        let g = fit_layer_gaussians(&err, eps).unwrap().get("l0").unwrap();
        assert_eq!((g.mu, g.var), (1.0, 0.001));

        assert!(fit_layer_gaussians(&err, 0.0).is_err());
        let empty = EpochError::new(vec![1.0], partition(&[0, 1])).unwrap();
        assert!(matches!(
            fit_layer_gaussians(&empty, eps),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn sampled_moments_at_floor() {
        let n = 100_000;
        let part = partition(&[n]);
        let err = EpochError::new(vec![0.0; n], part.clone()).unwrap();
        let fit = fit_layer_gaussians(&err, DEFAULT_EPSILON).unwrap();
        let draw = sample_update(&fit, &part, &mut rng::stream(2024)).unwrap();
        let mean = draw.iter().sum::<f64>() / n as f64;
        let var = draw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(
            mean.abs() < 4.0 * (0.001f64 / n as f64).sqrt(),
            "mean {mean}"
        );
        assert!((var - 0.001).abs() < 0.1 * 0.001, "var {var}");
    }

    #[test]
    fn sampling_is_deterministic_per_stream_state() {
        let part = partition(&[3, 5]);
        let err = EpochError::new((0..8).map(f64::from).collect(), part.clone()).unwrap();
        let fit = fit_layer_gaussians(&err, DEFAULT_EPSILON).unwrap();
        let a = sample_update(&fit, &part, &mut rng::stream(5)).unwrap();
        let b = sample_update(&fit, &part, &mut rng::stream(5)).unwrap();
        assert_eq!(a, b);
        assert!(sample_update(&fit, &partition(&[8]), &mut rng::stream(5)).is_err());
    }

    #[test]
    fn apply_adds_exactly() {
        let theta = pv(vec![1.0, 2.0]);
        assert_eq!(apply_sampled_update(&theta, &[0.0, 0.0]).unwrap(), theta);
        let next = apply_sampled_update(&theta, &[0.1, -0.1]).unwrap();
        assert_eq!(next.values(), &[1.1, 1.9]);
        assert!(apply_sampled_update(&theta, &[0.1]).is_err());
    }
}
