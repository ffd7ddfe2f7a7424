#![allow(dead_code)]

use gradsamp::data::{gen_blobs, Dataset};
use gradsamp::nn::{Batch, LayerPartition, ModelSpec, ParamVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn blobs(n: usize, dim: usize, classes: usize, spread: f64, seed: u64) -> (Dataset, Dataset) {
    gen_blobs(n, dim, classes, spread, seed)
        .unwrap()
        .split(0.2, seed ^ 0x5a5a)
        .unwrap()
}

/// Parameters with every coordinate (biases included) drawn from N(0, scale²).
pub fn random_params(spec: &ModelSpec, scale: f64, seed: u64) -> ParamVector {
    let mut rng = gradsamp::rng::stream(seed);
    let partition = LayerPartition::for_spec(spec);
    let values = (0..partition.total())
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    ParamVector::new(values, partition).unwrap()
}

pub fn random_batch(n: usize, dim: usize, classes: usize, seed: u64) -> Batch {
    let mut rng = gradsamp::rng::stream(seed);
    let features = (0..n * dim)
        .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Batch::new(features, dim, labels).unwrap()
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Model specs with at most 200 parameters used by the gradient checks.
pub fn small_specs() -> Vec<ModelSpec> {
    use gradsamp::nn::Layer;
    vec![
        ModelSpec::mlp(2, &[], 3).unwrap(),
        ModelSpec::mlp(3, &[4], 2).unwrap(),
        ModelSpec::mlp(4, &[5, 3], 3).unwrap(),
        ModelSpec::mlp(2, &[8], 4).unwrap(),
        ModelSpec::mlp(5, &[6, 6, 4], 3).unwrap(),
        ModelSpec::new(vec![
            Layer::Dense {
                input: 3,
                output: 7,
                bias: false,
            },
            Layer::Relu,
            Layer::Dense {
                input: 7,
                output: 3,
                bias: true,
            },
            Layer::SoftmaxCrossEntropyHead { classes: 3 },
        ])
        .unwrap(),
    ]
}

/// `L(plus) − L(minus)` evaluated by carrying the activation difference
/// through every layer, so the result keeps full relative precision even when
/// the two losses agree in most digits.
pub fn loss_difference(spec: &ModelSpec, plus: &[f64], minus: &[f64], batch: &Batch) -> f64 {
    use gradsamp::nn::Layer;
    let rows = batch.len();
    let mut a = batch.features().to_vec();
    let mut d = vec![0.0; a.len()];
    let mut width = batch.dim();
    let mut offset = 0;
    let mut total = 0.0;
    for layer in spec.layers() {
        match *layer {
            Layer::Dense {
                input,
                output,
                bias,
            } => {
                let (wp, wm) = (
                    &plus[offset..offset + input * output],
                    &minus[offset..offset + input * output],
                );
                offset += input * output;
                let (bp, bm) = if bias {
                    offset += output;
                    (
                        &plus[offset - output..offset],
                        &minus[offset - output..offset],
                    )
                } else {
                    (&[][..], &[][..])
                };
                let mut na = vec![0.0; rows * output];
                let mut nd = vec![0.0; rows * output];
                for r in 0..rows {
                    for o in 0..output {
                        let (mut z, mut dz) = (0.0, 0.0);
                        for i in 0..input {
                            let (x, dx) = (a[r * input + i], d[r * input + i]);
                            z += wm[o * input + i] * x;
                            dz += wp[o * input + i] * dx
                                + (wp[o * input + i] - wm[o * input + i]) * x;
                        }
                        if bias {
                            z += bm[o];
                            dz += bp[o] - bm[o];
                        }
                        na[r * output + o] = z;
                        nd[r * output + o] = dz;
                    }
                }
                a = na;
                d = nd;
                width = output;
            }
            Layer::Relu => {
                for (z, dz) in a.iter_mut().zip(d.iter_mut()) {
                    let zp = *z + *dz;
                    *dz = match (*z > 0.0, zp > 0.0) {
                        (true, true) => *dz,
                        (false, false) => 0.0,
                        _ => zp.max(0.0) - z.max(0.0),
                    };
                    *z = z.max(0.0);
                }
            }
            Layer::SoftmaxCrossEntropyHead { classes } => {
                assert_eq!(width, classes);
                for r in 0..rows {
                    let z = &a[r * classes..(r + 1) * classes];
                    let dz = &d[r * classes..(r + 1) * classes];
                    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
                    let ds: f64 = z
                        .iter()
                        .zip(dz)
                        .map(|(v, dv)| (v - m).exp() * dv.exp_m1())
                        .sum();
                    let y = batch.labels()[r];
                    total += (ds / s).ln_1p() - dz[y];
                }
            }
        }
    }
    total / rows as f64
}

/// Largest per-coordinate relative error between the analytic gradient and
/// central finite differences with step `h`.
pub fn gradient_check(spec: &ModelSpec, params: &ParamVector, batch: &Batch, h: f64) -> f64 {
    let (_, grad) = gradsamp::nn::loss_and_grad(spec, params, batch).unwrap();
    let mut worst: f64 = 0.0;
    for (i, &g) in grad.iter().enumerate() {
        let mut plus = params.values().to_vec();
        let mut minus = params.values().to_vec();
        plus[i] += h;
        minus[i] -= h;
        let step = plus[i] - minus[i];
        let fd = loss_difference(spec, &plus, &minus, batch) / step;
        let scale = g.abs().max(fd.abs());
        let rel = if scale == 0.0 {
            0.0
        } else {
            (g - fd).abs() / scale
        };
        worst = worst.max(rel);
    }
    worst
}
