use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::layers::Layer;
use crate::scalar::Scalar;
use crate::spec::{ArchitectureSpec, Shape};
use crate::tensor::Tensor;

/// Sequential model built from an [`ArchitectureSpec`].
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    spec: ArchitectureSpec,
    shapes: Vec<Shape>,
    layers: Vec<Layer<T>>,
}

/// Parameters and running statistics of a whole model.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    params: Vec<Vec<Vec<T>>>,
    stats: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> Model<T> {
    /// Shape-checks `spec` and allocates zero weights (batch-norm scale 1).
    pub fn build(spec: ArchitectureSpec) -> Result<Self> {
        let shapes = spec.infer_shapes()?;
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| Layer::new(l.clone(), shapes[i], shapes[i + 1]))
            .collect();
        Ok(Model { spec, shapes, layers })
    }

    /// Builds and applies Xavier initialization.
    pub fn new(spec: ArchitectureSpec, seed: u64) -> Result<Self> {
        let mut m = Self::build(spec)?;
        m.xavier_init(seed);
        Ok(m)
    }

    /// Uniform Glorot initialization of every weight tensor with limit
    /// `√(6 / (fan_in + fan_out))`; biases zero, batch-norm reset.
    pub fn xavier_init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            if let Some((fi, fo)) = layer.fans() {
                let limit = (6.0 / (fi + fo) as f64).sqrt();
                for w in layer.params[0].iter_mut() {
                    *w = T::of(rng.gen_range(-limit..limit));
                }
                layer.params[1].fill(T::zero());
            } else if !layer.params.is_empty() {
                layer.params[0].fill(T::one());
                layer.params[1].fill(T::zero());
                layer.stats[0].fill(T::zero());
                layer.stats[1].fill(T::one());
            }
        }
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    /// Input shape followed by every layer's output shape.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    /// Output shape of every layer in table form (batch axis omitted).
    pub fn layer_dims(&self) -> Vec<Vec<usize>> {
        self.shapes[1..]
            .iter()
            .map(|s| s.dims(self.spec.spatial_rank))
            .collect()
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.shapes[0].dims(self.spec.spatial_rank)
    }

    pub fn output_dims(&self) -> Vec<usize> {
        self.shapes
            .last()
            .expect("input shape present")
            .dims(self.spec.spatial_rank)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.params).map(Vec::len).sum()
    }

    pub fn num_stats(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.stats).map(Vec::len).sum()
    }

    pub fn latent_size(&self) -> Option<usize> {
        self.spec.latent_layer.map(|l| self.shapes[l + 1].len())
    }

    pub fn layer_params(&self, i: usize) -> &[Vec<T>] {
        &self.layers[i].params
    }

    pub fn layer_params_mut(&mut self, i: usize) -> &mut [Vec<T>] {
        &mut self.layers[i].params
    }

    pub fn layer_grads(&self, i: usize) -> &[Vec<T>] {
        &self.layers[i].grads
    }

    /// Running mean and variance of a batch-norm layer.
    pub fn layer_stats(&self, i: usize) -> &[Vec<T>] {
        &self.layers[i].stats
    }

    pub fn layer_stats_mut(&mut self, i: usize) -> &mut [Vec<T>] {
        &mut self.layers[i].stats
    }

    /// `"layer 4 (batchnorm m=0.99 eps=0.001)"`.
    pub fn layer_label(&self, i: usize) -> String {
        format!("layer {i} ({})", self.layers[i].spec)
    }

    /// Inference forward pass; batch-norm uses running statistics.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(x, 0..self.layers.len())
    }

    /// Latent code of every sample.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let l = self.latent_layer()?;
        self.run(x, 0..l + 1)
    }

    /// Reconstruction from latent codes.
    pub fn decode(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        let l = self.latent_layer()?;
        self.run(h, l + 1..self.layers.len())
    }

    fn latent_layer(&self) -> Result<usize> {
        self.spec
            .latent_layer
            .ok_or_else(|| NnError::invalid("model has no latent layer"))
    }

    /// Inference over a contiguous layer range.
    pub fn run(&self, x: &Tensor<T>, range: Range<usize>) -> Result<Tensor<T>> {
        let expect = self.shapes[range.start];
        self.check_input(x, expect)?;
        let batch = x.batch();
        let mut data = x.data().to_vec();
        for layer in &self.layers[range.clone()] {
            data = layer.infer(&data, batch);
        }
        self.wrap(batch, self.shapes[range.end], data)
    }

    /// Training forward pass: batch statistics, running-stat update and
    /// caches for [`Model::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x, self.shapes[0])?;
        let batch = x.batch();
        let mut data = x.data().to_vec();
        for layer in &mut self.layers {
            data = layer.forward_train(data, batch);
        }
        self.wrap(batch, *self.shapes.last().expect("input shape present"), data)
    }

    /// Accumulates parameter gradients for the last training pass and
    /// returns the gradient with respect to the input.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let dx = self.backward_inner(dy, true)?.expect("input gradient requested");
        self.wrap(dy.batch(), self.shapes[0], dx)
    }

    pub(crate) fn backward_inner(&mut self, dy: &Tensor<T>, want_input_grad: bool) -> Result<Option<Vec<T>>> {
        let out = *self.shapes.last().expect("input shape present");
        self.check_input(dy, out)?;
        let batch = dy.batch();
        let mut g = dy.data().to_vec();
        let n = self.layers.len();
        for i in (0..n).rev() {
            let need = i > 0 || want_input_grad;
            match self.layers[i].backward(g, batch, need) {
                Some(next) => g = next,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    pub fn zero_grads(&mut self) {
        for l in &mut self.layers {
            l.grads.iter_mut().for_each(|g| g.fill(T::zero()));
        }
    }

    /// Drops cached activations of the last training pass.
    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// Layer nearest the output holding a non-finite gradient, i.e. where
    /// backpropagation first produced one.
    pub fn nonfinite_grad_layer(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|l| l.grads.iter().flatten().any(|g| !g.is_finite()))
    }

    /// Every parameter tensor paired with its gradient, in layer order.
    pub fn params_and_grads(&mut self) -> Vec<(&mut [T], &[T])> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params.iter_mut().zip(l.grads.iter()))
            .map(|(p, g)| (p.as_mut_slice(), g.as_slice()))
            .collect()
    }

    /// All parameters in layer order.
    pub fn flat_params(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| &l.params).flatten().copied().collect()
    }

    /// All running statistics in layer order.
    pub fn flat_stats(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| &l.stats).flatten().copied().collect()
    }

    pub fn set_flat_params(&mut self, values: &[T]) -> Result<()> {
        fill_flat(
            self.layers.iter_mut().flat_map(|l| l.params.iter_mut()),
            values,
            "parameter",
        )
    }

    pub fn set_flat_stats(&mut self, values: &[T]) -> Result<()> {
        fill_flat(
            self.layers.iter_mut().flat_map(|l| l.stats.iter_mut()),
            values,
            "statistic",
        )
    }

    pub fn snapshot(&self) -> Snapshot<T> {
        Snapshot {
            params: self.layers.iter().map(|l| l.params.clone()).collect(),
            stats: self.layers.iter().map(|l| l.stats.clone()).collect(),
        }
    }

    pub fn restore(&mut self, s: &Snapshot<T>) {
        for ((l, p), st) in self.layers.iter_mut().zip(&s.params).zip(&s.stats) {
            l.params.clone_from(p);
            l.stats.clone_from(st);
        }
    }

    /// Same model in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut m = Model::<U>::build(self.spec.clone()).expect("spec already validated");
        let conv = |v: Vec<T>| v.into_iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        m.set_flat_params(&conv(self.flat_params())).expect("same spec");
        m.set_flat_stats(&conv(self.flat_stats())).expect("same spec");
        m
    }

    fn check_input(&self, x: &Tensor<T>, expect: Shape) -> Result<()> {
        let dims = expect.dims(self.spec.spatial_rank);
        if x.shape()[1..] != dims[..] {
            return Err(NnError::invalid(format!(
                "expected per-sample shape {dims:?}, got {:?}",
                &x.shape()[1..]
            )));
        }
        if x.batch() == 0 {
            return Err(NnError::invalid("empty batch"));
        }
        Ok(())
    }

    fn wrap(&self, batch: usize, shape: Shape, data: Vec<T>) -> Result<Tensor<T>> {
        let mut dims = vec![batch];
        dims.extend(shape.dims(self.spec.spatial_rank));
        Tensor::new(dims, data)
    }
}

fn fill_flat<'a, T: Scalar>(targets: impl Iterator<Item = &'a mut Vec<T>>, values: &[T], what: &str) -> Result<()> {
    let targets: Vec<&mut Vec<T>> = targets.collect();
    let total: usize = targets.iter().map(|t| t.len()).sum();
    if total != values.len() {
        return Err(NnError::invalid(format!(
            "model holds {total} {what} values, got {}",
            values.len()
        )));
    }
    let mut off = 0;
    for t in targets {
        let n = t.len();
        t.copy_from_slice(&values[off..off + n]);
        off += n;
    }
    Ok(())
}

impl<T: Scalar> PartialEq for Model<T> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.flat_params() == other.flat_params() && self.flat_stats() == other.flat_stats()
    }
}
