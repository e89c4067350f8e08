//! Central finite-difference check of analytic gradients.
//!
//! The probe loss is `L = Σ w ⊙ y` with fixed random weights `w`, evaluated
//! in training mode. Errors are reported per tensor as
//! `‖g_analytic − g_numeric‖₂ / max(‖g_analytic‖₂, ‖g_numeric‖₂)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::Model;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub label: String,
    pub rel_error: f64,
}

fn probe(model: &mut Model<f64>, x: &Tensor<f64>, w: &[f64]) -> Result<f64> {
    let y = model.forward_train(x)?;
    Ok(y.data().iter().zip(w).map(|(a, b)| a * b).sum())
}

pub fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Checks the input gradient and every parameter tensor of `model`.
pub fn check_model(model: &mut Model<f64>, x: &Tensor<f64>, seed: u64, h: f64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_len = model.forward_train(x)?.data().len();
    let w: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    model.zero_grads();
    let y = model.forward_train(x)?;
    let dx = model.backward(&Tensor::new(y.shape().to_vec(), w.clone())?)?;

    let mut report = Vec::new();
    let mut xp = x.clone();
    let mut num = vec![0.0; x.data().len()];
    for i in 0..num.len() {
        let v = xp.data()[i];
        xp.data_mut()[i] = v + h;
        let lp = probe(model, &xp, &w)?;
        xp.data_mut()[i] = v - h;
        let lm = probe(model, &xp, &w)?;
        xp.data_mut()[i] = v;
        num[i] = (lp - lm) / (2.0 * h);
    }
    report.push(GradCheck {
        label: "input".into(),
        rel_error: rel_error(dx.data(), &num),
    });

    for layer in 0..model.num_layers() {
        for t in 0..model.layer_params(layer).len() {
            let analytic = model.layer_grads(layer)[t].clone();
            let mut num = vec![0.0; analytic.len()];
            for i in 0..num.len() {
                let v = model.layer_params(layer)[t][i];
                model.layer_params_mut(layer)[t][i] = v + h;
                let lp = probe(model, x, &w)?;
                model.layer_params_mut(layer)[t][i] = v - h;
                let lm = probe(model, x, &w)?;
                model.layer_params_mut(layer)[t][i] = v;
                num[i] = (lp - lm) / (2.0 * h);
            }
            report.push(GradCheck {
                label: format!("{} param {t}", model.layer_label(layer)),
                rel_error: rel_error(&analytic, &num),
            });
        }
    }
    Ok(report)
}

/// Small randomized single-layer models (plus one composed autoencoder)
/// covering every layer type, with matching inputs.
pub fn layer_cases(seed: u64) -> Result<Vec<(String, Model<f64>, Tensor<f64>)>> {
    use crate::spec::{Activation as A, ArchitectureSpec, AutoencoderConfig, LayerSpec as L};
    let conv = |filters, kernel, activation| L::Conv {
        filters,
        kernel,
        activation,
    };
    let convt = |filters, kernel, stride, activation| L::ConvTranspose {
        filters,
        kernel,
        stride,
        activation,
    };
    let single = |rank: usize, input: Vec<usize>, layers: Vec<L>| ArchitectureSpec {
        spatial_rank: rank,
        input,
        layers,
        latent_layer: None,
    };
    let specs = vec![
        ("conv 2d", single(2, vec![5, 4, 2], vec![conv(3, [3, 3, 1], A::Relu)])),
        (
            "conv 3d",
            single(3, vec![4, 3, 3, 2], vec![conv(2, [3, 3, 3], A::Sigmoid)]),
        ),
        (
            "conv_transpose 2d",
            single(2, vec![3, 2, 2], vec![convt(2, [3, 3, 1], [2, 2, 1], A::Relu)]),
        ),
        (
            "conv_transpose 3d",
            single(3, vec![2, 2, 2, 2], vec![convt(2, [3, 3, 3], [2, 2, 2], A::None)]),
        ),
        (
            "maxpool 2d",
            single(2, vec![5, 3, 2], vec![L::MaxPool { pool: [2, 2, 1] }]),
        ),
        (
            "maxpool 3d",
            single(3, vec![3, 3, 3, 2], vec![L::MaxPool { pool: [2, 2, 2] }]),
        ),
        ("batchnorm spatial", single(2, vec![3, 2, 2], vec![L::batch_norm()])),
        ("batchnorm flat", single(0, vec![5], vec![L::batch_norm()])),
        (
            "dense relu",
            single(
                0,
                vec![6],
                vec![L::Dense {
                    units: 4,
                    activation: A::Relu,
                }],
            ),
        ),
        (
            "dense sigmoid",
            single(
                0,
                vec![6],
                vec![L::Dense {
                    units: 4,
                    activation: A::Sigmoid,
                }],
            ),
        ),
        (
            "flatten",
            single(
                2,
                vec![3, 2, 2],
                vec![
                    L::Flatten,
                    L::Dense {
                        units: 3,
                        activation: A::None,
                    },
                ],
            ),
        ),
        (
            "reshape",
            single(
                2,
                vec![12],
                vec![L::Reshape { dims: vec![3, 2, 2] }, conv(2, [3, 3, 1], A::None)],
            ),
        ),
        (
            "crop",
            single(3, vec![5, 4, 3, 2], vec![L::Crop { dims: vec![3, 2, 1] }]),
        ),
        (
            "autoencoder",
            AutoencoderConfig {
                grid: vec![6, 3],
                encoder_channels: vec![2],
                deep_channels: 2,
                latent: 3,
                head: A::Sigmoid,
            }
            .build()?,
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, spec) in specs {
        let mut model = Model::<f64>::new(spec, rng.gen())?;
        for l in 0..model.num_layers() {
            let is_bn = matches!(model.spec().layers[l], L::BatchNorm { .. });
            let params = model.layer_params_mut(l);
            if is_bn {
                params[0].iter_mut().for_each(|g| *g = rng.gen_range(0.5..1.5));
                params[1].iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
            } else if params.len() == 2 {
                params[1].iter_mut().for_each(|b| *b = rng.gen_range(-0.2..0.2));
            }
        }
        let mut dims = vec![3];
        dims.extend(model.input_dims());
        let n: usize = dims.iter().product();
        let x = Tensor::new(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        out.push((name.to_string(), model, x));
    }
    Ok(out)
}
