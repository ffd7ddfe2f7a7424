use super::engine::{forward, Batch};
use super::params::ParamVector;
use super::spec::ModelSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(spec: &ModelSpec, params: &ParamVector, data: &Batch) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let out = forward(spec, params, data)?;
    let classes = spec.classes();
    let correct = out
        .logits
        .chunks(classes)
        .zip(data.labels())
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        loss: out.loss,
    })
}
