//! Layer descriptors, architecture specs and the shape checker.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::None => "none",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        })
    }
}

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-3;

/// One layer of a sequential model. Spatial extents are `[x, y, z]`; 2D
/// models carry `z = 1` everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Stride-1 convolution with same padding; odd kernel extents only.
    Conv {
        filters: usize,
        kernel: [usize; 3],
        activation: Activation,
    },
    /// Transposed convolution whose output is `input · stride`; taps that
    /// land past the end of an axis are dropped.
    ConvTranspose {
        filters: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        activation: Activation,
    },
    /// Max pooling with window = stride = `pool`, ceil mode.
    MaxPool {
        pool: [usize; 3],
    },
    BatchNorm {
        momentum: f64,
        eps: f64,
    },
    Dense {
        units: usize,
        activation: Activation,
    },
    Flatten,
    /// Target shape in table form (`[x, y, c]` or `[x, y, z, c]`, or `[n]`).
    Reshape {
        dims: Vec<usize>,
    },
    /// Centered crop to the given spatial extents.
    Crop {
        dims: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn batch_norm() -> Self {
        LayerSpec::BatchNorm {
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::ConvTranspose { .. } => "conv_transpose",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Crop { .. } => "crop",
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            LayerSpec::Conv { activation, .. }
            | LayerSpec::ConvTranspose { activation, .. }
            | LayerSpec::Dense { activation, .. } => *activation,
            _ => Activation::None,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = |k: &[usize; 3]| format!("{}x{}x{}", k[0], k[1], k[2]);
        match self {
            LayerSpec::Conv {
                filters,
                kernel,
                activation,
            } => write!(f, "conv {} f={filters} {activation}", k(kernel)),
            LayerSpec::ConvTranspose {
                filters,
                kernel,
                stride,
                activation,
            } => write!(
                f,
                "conv_transpose {} s={} f={filters} {activation}",
                k(kernel),
                k(stride)
            ),
            LayerSpec::MaxPool { pool } => write!(f, "maxpool {}", k(pool)),
            LayerSpec::BatchNorm { momentum, eps } => write!(f, "batchnorm m={momentum} eps={eps}"),
            LayerSpec::Dense { units, activation } => write!(f, "dense {units} {activation}"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Reshape { dims } => write!(f, "reshape {dims:?}"),
            LayerSpec::Crop { dims } => write!(f, "crop {dims:?}"),
        }
    }
}

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `[x, y, z, channels]`, channels fastest, then x, y, z.
    Spatial([usize; 4]),
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match self {
            Shape::Spatial(d) => d.iter().product(),
            Shape::Flat(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        match self {
            Shape::Spatial(d) => d[3],
            Shape::Flat(n) => *n,
        }
    }

    /// Number of spatial positions (1 for flat shapes).
    pub fn positions(&self) -> usize {
        match self {
            Shape::Spatial(d) => d[0] * d[1] * d[2],
            Shape::Flat(_) => 1,
        }
    }

    /// Shape in table form for a model of the given spatial rank.
    pub fn dims(&self, rank: usize) -> Vec<usize> {
        match *self {
            Shape::Flat(n) => vec![n],
            Shape::Spatial([x, y, z, c]) if rank == 2 && z == 1 => vec![x, y, c],
            Shape::Spatial(d) => d.to_vec(),
        }
    }

    pub fn from_dims(dims: &[usize], rank: usize) -> Option<Shape> {
        match (dims.len(), rank) {
            (1, _) => Some(Shape::Flat(dims[0])),
            (3, 2) => Some(Shape::Spatial([dims[0], dims[1], 1, dims[2]])),
            (4, 3) => Some(Shape::Spatial([dims[0], dims[1], dims[2], dims[3]])),
            _ => None,
        }
    }
}

/// Sequential architecture with an optional bottleneck marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    /// 2 or 3 for convolutional models; dense-only models use 0.
    pub spatial_rank: usize,
    /// Per-sample input shape in table form.
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Index of the layer whose output is the latent code.
    pub latent_layer: Option<usize>,
}

impl ArchitectureSpec {
    pub fn input_shape(&self) -> Result<Shape> {
        if !matches!(self.spatial_rank, 0 | 2 | 3) {
            return Err(NnError::invalid(format!(
                "spatial rank {} unsupported",
                self.spatial_rank
            )));
        }
        match Shape::from_dims(&self.input, self.spatial_rank) {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(NnError::invalid(format!(
                "input dims {:?} invalid for spatial rank {}",
                self.input, self.spatial_rank
            ))),
        }
    }

    /// Output shape of every layer, preceded by the input shape.
    pub fn infer_shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = vec![self.input_shape()?];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer_output(layer, shapes[i], self.spatial_rank).map_err(|message| NnError::Build {
                layer: i,
                descriptor: layer.to_string(),
                message,
            })?;
            shapes.push(next);
        }
        if let Some(l) = self.latent_layer {
            if l >= self.layers.len() || !matches!(shapes[l + 1], Shape::Flat(_)) {
                return Err(NnError::invalid(format!(
                    "latent layer {l} is not a flat layer of this model"
                )));
            }
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Shape> {
        Ok(*self.infer_shapes()?.last().expect("input shape present"))
    }

    pub fn latent_size(&self) -> Option<usize> {
        let l = self.latent_layer?;
        self.infer_shapes().ok().map(|s| s[l + 1].len())
    }
}

fn layer_output(layer: &LayerSpec, input: Shape, rank: usize) -> std::result::Result<Shape, String> {
    let spatial = || match input {
        Shape::Spatial(d) => Ok(d),
        Shape::Flat(n) => Err(format!("expects a spatial input, got flat {n}")),
    };
    let positive = |v: &[usize], what: &str| {
        if v.iter().all(|&k| k > 0) {
            Ok(())
        } else {
            Err(format!("{what} must be positive, got {v:?}"))
        }
    };
    match layer {
        LayerSpec::Conv { filters, kernel, .. } => {
            let d = spatial()?;
            positive(kernel, "kernel")?;
            positive(&[*filters], "filters")?;
            if kernel.iter().any(|k| k % 2 == 0) {
                return Err(format!("same padding needs odd kernel extents, got {kernel:?}"));
            }
            Ok(Shape::Spatial([d[0], d[1], d[2], *filters]))
        }
        LayerSpec::ConvTranspose {
            filters,
            kernel,
            stride,
            ..
        } => {
            let d = spatial()?;
            positive(kernel, "kernel")?;
            positive(stride, "stride")?;
            positive(&[*filters], "filters")?;
            Ok(Shape::Spatial([
                d[0] * stride[0],
                d[1] * stride[1],
                d[2] * stride[2],
                *filters,
            ]))
        }
        LayerSpec::MaxPool { pool } => {
            let d = spatial()?;
            positive(pool, "pool")?;
            Ok(Shape::Spatial([
                d[0].div_ceil(pool[0]),
                d[1].div_ceil(pool[1]),
                d[2].div_ceil(pool[2]),
                d[3],
            ]))
        }
        LayerSpec::BatchNorm { momentum, eps } => {
            if !(0.0..1.0).contains(momentum) || !(*eps > 0.0) {
                return Err(format!("momentum {momentum} or eps {eps} out of range"));
            }
            Ok(input)
        }
        LayerSpec::Dense { units, .. } => match input {
            Shape::Flat(_) if *units > 0 => Ok(Shape::Flat(*units)),
            Shape::Flat(_) => Err("units must be positive".into()),
            Shape::Spatial(d) => Err(format!("expects a flat input, got spatial {d:?}")),
        },
        LayerSpec::Flatten => Ok(Shape::Flat(input.len())),
        LayerSpec::Reshape { dims } => {
            let target =
                Shape::from_dims(dims, rank).ok_or_else(|| format!("dims {dims:?} invalid for rank {rank}"))?;
            if target.len() != input.len() {
                return Err(format!("cannot reshape {} values into {dims:?}", input.len()));
            }
            Ok(target)
        }
        LayerSpec::Crop { dims } => {
            let d = spatial()?;
            let full: [usize; 3] = match (dims.len(), rank) {
                (2, 2) => [dims[0], dims[1], 1],
                (3, 3) => [dims[0], dims[1], dims[2]],
                _ => return Err(format!("crop dims {dims:?} invalid for rank {rank}")),
            };
            if (0..3).any(|a| full[a] == 0 || full[a] > d[a]) {
                return Err(format!("cannot crop {:?} to {dims:?}", &d[..3]));
            }
            Ok(Shape::Spatial([full[0], full[1], full[2], d[3]]))
        }
    }
}

/// Convolutional autoencoder recipe. Each entry of `encoder_channels` is a
/// unit of two convolutions, a pooling layer and batch normalization; the
/// decoder mirrors it with transposed convolutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    /// Spatial extents of one field, `[x, y]` or `[x, y, z]`.
    pub grid: Vec<usize>,
    pub encoder_channels: Vec<usize>,
    pub deep_channels: usize,
    pub latent: usize,
    pub head: Activation,
}

pub const LATENT_SIZE: usize = 40;

impl AutoencoderConfig {
    /// Reference 2D autoencoder on a 120×40 grid.
    pub fn reference_2d(head: Activation) -> Self {
        Self::reference(vec![120, 40], head)
    }

    /// Reference 3D autoencoder on a 60×20×4 grid.
    pub fn reference_3d(head: Activation) -> Self {
        Self::reference(vec![60, 20, 4], head)
    }

    pub fn reference(grid: Vec<usize>, head: Activation) -> Self {
        AutoencoderConfig {
            grid,
            encoder_channels: vec![128, 64, 32],
            deep_channels: 32,
            latent: LATENT_SIZE,
            head,
        }
    }

    /// One extra 32-channel unit at the deepest level.
    pub fn plus(mut self) -> Self {
        self.encoder_channels.push(32);
        self
    }

    /// Deepest unit removed.
    pub fn minus(mut self) -> Self {
        self.encoder_channels.pop();
        self
    }

    pub fn build(&self) -> Result<ArchitectureSpec> {
        autoencoder(self)
    }
}

pub fn autoencoder(cfg: &AutoencoderConfig) -> Result<ArchitectureSpec> {
    let rank = cfg.grid.len();
    if !(rank == 2 || rank == 3) || cfg.grid.contains(&0) {
        return Err(NnError::invalid(format!(
            "grid {:?} must be 2D or 3D and nonempty",
            cfg.grid
        )));
    }
    if cfg.encoder_channels.is_empty() || cfg.encoder_channels.contains(&0) || cfg.deep_channels == 0 || cfg.latent == 0
    {
        return Err(NnError::invalid("channel counts and latent size must be positive"));
    }
    let (kernel, step) = if rank == 2 {
        ([3, 3, 1], [2, 2, 1])
    } else {
        ([3, 3, 3], [2, 2, 2])
    };
    let conv = |filters, activation| LayerSpec::Conv {
        filters,
        kernel,
        activation,
    };
    let mut layers = Vec::new();
    let mut extent: Vec<usize> = cfg.grid.clone();
    for &c in &cfg.encoder_channels {
        layers.extend([
            conv(c, Activation::Relu),
            conv(c, Activation::Relu),
            LayerSpec::MaxPool { pool: step },
        ]);
        layers.push(LayerSpec::batch_norm());
        extent = extent.iter().zip(&step).map(|(e, s)| e.div_ceil(*s)).collect();
    }
    let d = cfg.deep_channels;
    layers.extend([conv(d, Activation::Relu), conv(d, Activation::Relu), LayerSpec::Flatten]);
    let deep_len = extent.iter().product::<usize>() * d;
    layers.push(LayerSpec::Dense {
        units: cfg.latent,
        activation: Activation::None,
    });
    let latent_layer = layers.len() - 1;
    let mut reshape = extent.clone();
    reshape.push(d);
    layers.extend([
        LayerSpec::Dense {
            units: deep_len,
            activation: Activation::Relu,
        },
        LayerSpec::Reshape { dims: reshape },
        LayerSpec::batch_norm(),
    ]);
    let rev: Vec<usize> = cfg.encoder_channels.iter().rev().copied().collect();
    for (i, &up) in rev.iter().enumerate() {
        let c = if i == 0 { d } else { rev[i - 1] };
        layers.extend([
            conv(c, Activation::Relu),
            conv(c, Activation::Relu),
            LayerSpec::ConvTranspose {
                filters: up,
                kernel,
                stride: step,
                activation: Activation::Relu,
            },
            LayerSpec::batch_norm(),
        ]);
        extent = extent.iter().zip(&step).map(|(e, s)| e * s).collect();
    }
    let top = cfg.encoder_channels[0];
    layers.extend([
        conv(top, Activation::Relu),
        conv(top, Activation::Relu),
        conv(1, cfg.head),
    ]);
    if extent != cfg.grid {
        layers.push(LayerSpec::Crop { dims: cfg.grid.clone() });
    }
    let mut input = cfg.grid.clone();
    input.push(1);
    let spec = ArchitectureSpec {
        spatial_rank: rank,
        input,
        layers,
        latent_layer: Some(latent_layer),
    };
    spec.infer_shapes()?;
    Ok(spec)
}

/// Dense regressor: hidden ReLU layers each followed by batch normalization,
/// then a linear output layer.
pub fn regressor(inputs: usize, hidden: &[usize], outputs: usize) -> Result<ArchitectureSpec> {
    let mut layers = Vec::new();
    for &h in hidden {
        layers.push(LayerSpec::Dense {
            units: h,
            activation: Activation::Relu,
        });
        layers.push(LayerSpec::batch_norm());
    }
    layers.push(LayerSpec::Dense {
        units: outputs,
        activation: Activation::None,
    });
    let spec = ArchitectureSpec {
        spatial_rank: 0,
        input: vec![inputs],
        layers,
        latent_layer: None,
    };
    spec.infer_shapes()?;
    Ok(spec)
}

pub const FC_HIDDEN: usize = 720;

pub fn ae_2d(head: Activation) -> ArchitectureSpec {
    autoencoder(&AutoencoderConfig::reference_2d(head)).expect("reference 2D autoencoder is shape-consistent")
}

pub fn ae_3d(head: Activation) -> ArchitectureSpec {
    autoencoder(&AutoencoderConfig::reference_3d(head)).expect("reference 3D autoencoder is shape-consistent")
}

pub fn fc(n_par: usize) -> Result<ArchitectureSpec> {
    regressor(n_par, &[FC_HIDDEN; 2], LATENT_SIZE)
}

pub fn fc_plus(n_par: usize) -> Result<ArchitectureSpec> {
    regressor(n_par, &[FC_HIDDEN; 3], LATENT_SIZE)
}

pub fn fc_minus(n_par: usize) -> Result<ArchitectureSpec> {
    regressor(n_par, &[FC_HIDDEN; 1], LATENT_SIZE)
}

/// Architecture variants compared in the architecture study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Minus,
    Reference,
    Plus,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Reference, Variant::Plus, Variant::Minus];

    pub fn suffix(self) -> &'static str {
        match self {
            Variant::Minus => "-",
            Variant::Reference => "",
            Variant::Plus => "+",
        }
    }

    pub fn apply_ae(self, cfg: AutoencoderConfig) -> AutoencoderConfig {
        match self {
            Variant::Minus => cfg.minus(),
            Variant::Reference => cfg,
            Variant::Plus => cfg.plus(),
        }
    }

    /// Hidden layer list with one layer added or removed.
    pub fn apply_hidden(self, hidden: &[usize]) -> Vec<usize> {
        let mut h = hidden.to_vec();
        match self {
            Variant::Minus => {
                h.pop();
            }
            Variant::Reference => {}
            Variant::Plus => h.push(*hidden.last().unwrap_or(&FC_HIDDEN)),
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_layers_are_named() {
        let spec = ArchitectureSpec {
            spatial_rank: 2,
            input: vec![8, 8, 1],
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Conv {
                    filters: 2,
                    kernel: [3, 3, 1],
                    activation: Activation::Relu,
                },
            ],
            latent_layer: None,
        };
        match spec.infer_shapes() {
            Err(NnError::Build { layer, descriptor, .. }) => {
                assert_eq!(layer, 1);
                assert!(descriptor.starts_with("conv"));
            }
            other => panic!("expected build error, got {other:?}"),
        }
    }

    #[test]
    fn even_kernels_rejected() {
        let spec = ArchitectureSpec {
            spatial_rank: 2,
            input: vec![4, 4, 1],
            layers: vec![LayerSpec::Conv {
                filters: 1,
                kernel: [2, 3, 1],
                activation: Activation::None,
            }],
            latent_layer: None,
        };
        assert!(spec.infer_shapes().is_err());
    }

    #[test]
    fn variants_shift_depth() {
        let base = AutoencoderConfig::reference_2d(Activation::Sigmoid);
        let plus = autoencoder(&base.clone().plus()).unwrap();
        let minus = autoencoder(&base.clone().minus()).unwrap();
        let reference = autoencoder(&base).unwrap();
        assert_eq!(plus.layers.len(), reference.layers.len() + 8 + 1);
        assert_eq!(minus.layers.len(), reference.layers.len() - 8);
        for s in [&plus, &minus, &reference] {
            assert_eq!(s.output_shape().unwrap(), Shape::Spatial([120, 40, 1, 1]));
            assert_eq!(s.latent_size(), Some(40));
        }
        assert_eq!(fc_plus(3).unwrap().layers.len(), 7);
        assert_eq!(fc_minus(3).unwrap().layers.len(), 3);
    }
}
