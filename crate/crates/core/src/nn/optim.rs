use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use crate::error::{Error, Result};

/// SGD hyperparameters. Defaults: lr 0.001, momentum 0.9, weight decay 0.001.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdHyper {
    pub eta: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdHyper {
    fn default() -> Self {
        Self {
            eta: 0.001,
            momentum: 0.9,
            weight_decay: 0.001,
        }
    }
}

impl SgdHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eta must be > 0, got {}",
                self.eta
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Heavy-ball velocity buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    velocity: Vec<f64>,
}

impl SgdState {
    pub fn zeros(len: usize) -> Self {
        Self {
            velocity: vec![0.0; len],
        }
    }

    pub fn from_velocity(velocity: Vec<f64>) -> Self {
        Self { velocity }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

/// `v ← m·v + g + λ·θ`, then `θ ← θ − η·v`.
pub fn sgd_step(
    params: &mut ParamVector,
    grad: &[f64],
    state: &mut SgdState,
    hyper: &SgdHyper,
) -> Result<()> {
    params.check_same_shape(grad.len(), "gradient vs parameters")?;
    params.check_same_shape(state.velocity.len(), "velocity vs parameters")?;
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            layer: params.partition().layer_of(i).unwrap_or("?").to_string(),
            index: i,
        });
    }
    let SgdHyper {
        eta,
        momentum,
        weight_decay,
    } = *hyper;
    for ((theta, v), g) in params
        .values_mut()
        .iter_mut()
        .zip(state.velocity.iter_mut())
        .zip(grad)
    {
        let mut d = *g;
        if weight_decay != 0.0 {
            d += weight_decay * *theta;
        }
        *v = momentum * *v + d;
        *theta -= eta * *v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{LayerPartition, LayerSlice};

    fn vec1(values: Vec<f64>) -> ParamVector {
        let n = values.len();
        let partition = LayerPartition::new(vec![LayerSlice {
            name: "w".into(),
            offset: 0,
            len: n,
        }])
        .unwrap();
        ParamVector::new(values, partition).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec1(vec![0.3, -1.7, 2.5]);
        let before = p.clone();
        let mut state = SgdState::zeros(3);
        let hyper = SgdHyper {
            weight_decay: 0.0,
            ..SgdHyper::default()
        };
        sgd_step(&mut p, &[0.0; 3], &mut state, &hyper).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn hand_evaluated_step() {
        let mut p = vec1(vec![1.0]);
        let mut state = SgdState::zeros(1);
        let hyper = SgdHyper {
            eta: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        sgd_step(&mut p, &[2.0], &mut state, &hyper).unwrap();
        assert_eq!(state.velocity(), &[2.0]);
        assert_eq!(p.values(), &[0.8]);
    }

    #[test]
    fn zero_momentum_is_plain_gd() {
        let hyper = SgdHyper {
            eta: 0.05,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut p = vec1(vec![1.0, -2.0]);
        let mut state = SgdState::zeros(2);
        let g1 = [0.4, -0.2];
        let g2 = [1.5, 0.25];
        sgd_step(&mut p, &g1, &mut state, &hyper).unwrap();
        sgd_step(&mut p, &g2, &mut state, &hyper).unwrap();
        let expected: Vec<f64> = [1.0f64, -2.0]
            .iter()
            .zip(g1.iter().zip(&g2))
            .map(|(t, (a, b))| t - 0.05 * a - 0.05 * b)
            .collect();
        assert_eq!(p.values(), expected.as_slice());
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut p = vec1(vec![1.0, 2.0]);
        let mut state = SgdState::zeros(2);
        let err = sgd_step(
            &mut p,
            &[0.0, f64::INFINITY],
            &mut state,
            &SgdHyper::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
    }

    #[test]
    fn hyper_validation() {
        assert!(SgdHyper::default().validate().is_ok());
        let bad = [
            SgdHyper {
                eta: 0.0,
                ..SgdHyper::default()
            },
            SgdHyper {
                momentum: 1.0,
                ..SgdHyper::default()
            },
            SgdHyper {
                weight_decay: -1.0,
                ..SgdHyper::default()
            },
        ];
        assert!(bad.iter().all(|h| h.validate().is_err()));
    }
}
