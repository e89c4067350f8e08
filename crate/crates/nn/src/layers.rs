//! Forward and backward kernels of every layer type.
//!
//! Parameter layouts (row-major):
//! - conv: weights `[(tap·Cin + ci)·Cout + co]`, tap `= i + Kx·(j + Ky·l)`
//!   for kernel offsets `(i, j, l)` centered on the output position; bias `[Cout]`
//! - conv_transpose: weights `[ci·(K·Cout) + tap·Cout + co]`; input position
//!   `p` feeds output `stride·p + (i, j, l)`; bias `[Cout]`
//! - dense: weights `[in·Out + out]`, bias `[Out]`
//! - batchnorm: `gamma`, `beta`; running `mean`, `var`

use crate::scalar::{matmul, matmul_at, matmul_bt, Scalar};
use crate::spec::{Activation, LayerSpec, Shape};

const NONE: u32 = u32::MAX;
/// Upper bound on the im2col buffer (elements).
const COLS_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, Default)]
struct Cache<T> {
    x: Vec<T>,
    y: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    argmax: Vec<u32>,
}

#[derive(Debug, Clone)]
pub(crate) struct Layer<T> {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub params: Vec<Vec<T>>,
    pub grads: Vec<Vec<T>>,
    pub stats: Vec<Vec<T>>,
    table: Vec<u32>,
    taps: usize,
    cache: Cache<T>,
}

fn spatial(s: Shape) -> [usize; 4] {
    match s {
        Shape::Spatial(d) => d,
        Shape::Flat(n) => [1, 1, 1, n],
    }
}

fn pos(d: &[usize; 4], x: usize, y: usize, z: usize) -> usize {
    x + d[0] * (y + d[1] * z)
}

impl<T: Scalar> Layer<T> {
    pub fn new(spec: LayerSpec, input: Shape, output: Shape) -> Self {
        let (cin, cout) = (input.channels(), output.channels());
        let (params, stats, table, taps) = match &spec {
            LayerSpec::Conv { kernel, .. } => {
                let taps = kernel.iter().product();
                (
                    vec![vec![T::zero(); taps * cin * cout], vec![T::zero(); cout]],
                    vec![],
                    conv_table(spatial(input), kernel),
                    taps,
                )
            }
            LayerSpec::ConvTranspose { kernel, stride, .. } => {
                let taps = kernel.iter().product();
                (
                    vec![vec![T::zero(); cin * taps * cout], vec![T::zero(); cout]],
                    vec![],
                    transpose_table(spatial(input), spatial(output), kernel, stride),
                    taps,
                )
            }
            LayerSpec::Dense { units, .. } => (
                vec![vec![T::zero(); input.len() * units], vec![T::zero(); *units]],
                vec![],
                vec![],
                0,
            ),
            LayerSpec::BatchNorm { .. } => (
                vec![vec![T::one(); cin], vec![T::zero(); cin]],
                vec![vec![T::zero(); cin], vec![T::one(); cin]],
                vec![],
                0,
            ),
            LayerSpec::Crop { .. } => (vec![], vec![], crop_table(spatial(input), spatial(output)), 1),
            _ => (vec![], vec![], vec![], 0),
        };
        let grads = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Layer {
            spec,
            input,
            output,
            params,
            grads,
            stats,
            table,
            taps,
            cache: Cache::default(),
        }
    }

    /// `(fan_in, fan_out)` of the weight tensor.
    pub fn fans(&self) -> Option<(usize, usize)> {
        let (cin, cout) = (self.input.channels(), self.output.channels());
        match self.spec {
            LayerSpec::Conv { .. } | LayerSpec::ConvTranspose { .. } => Some((self.taps * cin, self.taps * cout)),
            LayerSpec::Dense { units, .. } => Some((self.input.len(), units)),
            _ => None,
        }
    }

    pub fn infer(&self, x: &[T], batch: usize) -> Vec<T> {
        match &self.spec {
            LayerSpec::BatchNorm { eps, .. } => {
                let c = self.input.channels();
                let eps = T::of(*eps);
                let scale: Vec<T> = (0..c)
                    .map(|j| self.params[0][j] / (self.stats[1][j] + eps).sqrt())
                    .collect();
                let mut y = x.to_vec();
                for row in y.chunks_mut(c) {
                    for j in 0..c {
                        row[j] = (row[j] - self.stats[0][j]) * scale[j] + self.params[1][j];
                    }
                }
                y
            }
            LayerSpec::MaxPool { pool } => self.max_pool(x, batch, pool, None),
            _ => self.compute(x, batch),
        }
    }

    pub fn forward_train(&mut self, x: Vec<T>, batch: usize) -> Vec<T> {
        match self.spec.clone() {
            LayerSpec::BatchNorm { momentum, eps } => self.bn_train(x, batch, momentum, eps),
            LayerSpec::MaxPool { pool } => {
                let mut argmax = std::mem::take(&mut self.cache.argmax);
                let y = self.max_pool(&x, batch, &pool, Some(&mut argmax));
                self.cache.argmax = argmax;
                y
            }
            LayerSpec::Conv { .. } | LayerSpec::ConvTranspose { .. } | LayerSpec::Dense { .. } => {
                let y = self.compute(&x, batch);
                self.cache.x = x;
                if self.spec.activation() != Activation::None {
                    self.cache.y = y.clone();
                }
                y
            }
            _ => self.compute(&x, batch),
        }
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `need_dx` is set.
    pub fn backward(&mut self, mut dy: Vec<T>, batch: usize, need_dx: bool) -> Option<Vec<T>> {
        activation_grad(self.spec.activation(), &self.cache.y, &mut dy);
        match self.spec.clone() {
            LayerSpec::Conv { .. } => self.conv_backward(&dy, batch, need_dx),
            LayerSpec::ConvTranspose { .. } => self.transpose_backward(&dy, batch, need_dx),
            LayerSpec::Dense { units, .. } => {
                let n_in = self.input.len();
                let x = &self.cache.x;
                accumulate_bias(&mut self.grads[1], &dy, units);
                matmul_at(n_in, batch, units, x, &dy, &mut self.grads[0], true);
                need_dx.then(|| {
                    let mut dx = vec![T::zero(); batch * n_in];
                    matmul_bt(batch, units, n_in, &dy, &self.params[0], &mut dx, false);
                    dx
                })
            }
            LayerSpec::BatchNorm { .. } => Some(self.bn_backward(&dy)),
            LayerSpec::MaxPool { .. } => need_dx.then(|| {
                let mut dx = vec![T::zero(); batch * self.input.len()];
                for (g, &i) in dy.iter().zip(&self.cache.argmax) {
                    dx[i as usize] = dx[i as usize] + *g;
                }
                dx
            }),
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => Some(dy),
            LayerSpec::Crop { .. } => need_dx.then(|| {
                let c = self.input.channels();
                let mut dx = vec![T::zero(); batch * self.input.len()];
                let (si, so) = (self.input.positions(), self.output.positions());
                scatter_cols(&dy, batch, si, so, 1, c, &self.table, &mut dx);
                dx
            }),
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = Cache::default();
    }

    fn compute(&self, x: &[T], batch: usize) -> Vec<T> {
        let mut y = match &self.spec {
            LayerSpec::Conv { .. } => self.conv_forward(x, batch),
            LayerSpec::ConvTranspose { .. } => self.transpose_forward(x, batch),
            LayerSpec::Dense { units, .. } => {
                let mut y = vec![T::zero(); batch * units];
                for row in y.chunks_mut(*units) {
                    row.copy_from_slice(&self.params[1]);
                }
                matmul(batch, self.input.len(), *units, x, &self.params[0], &mut y, true);
                y
            }
            LayerSpec::Crop { .. } => {
                let c = self.input.channels();
                let (si, so) = (self.input.positions(), self.output.positions());
                let mut y = vec![T::zero(); batch * self.output.len()];
                gather_cols(x, batch, si, so, 1, c, &self.table, &mut y);
                y
            }
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => x.to_vec(),
            LayerSpec::BatchNorm { .. } | LayerSpec::MaxPool { .. } => unreachable!("handled by caller"),
        };
        activate(self.spec.activation(), &mut y);
        y
    }

    fn conv_forward(&self, x: &[T], batch: usize) -> Vec<T> {
        let (cin, cout, s, k) = (
            self.input.channels(),
            self.output.channels(),
            self.input.positions(),
            self.taps,
        );
        let kc = k * cin;
        let mut y = vec![T::zero(); batch * s * cout];
        for row in y.chunks_mut(cout) {
            row.copy_from_slice(&self.params[1]);
        }
        let chunk = chunk_samples(s * kc, batch);
        let mut cols = vec![T::zero(); chunk * s * kc];
        for b0 in (0..batch).step_by(chunk) {
            let nb = chunk.min(batch - b0);
            let rows = nb * s;
            let cols = &mut cols[..rows * kc];
            gather_cols(&x[b0 * s * cin..], nb, s, s, k, cin, &self.table, cols);
            let yb = &mut y[b0 * s * cout..(b0 + nb) * s * cout];
            matmul(rows, kc, cout, cols, &self.params[0], yb, true);
        }
        y
    }

    fn conv_backward(&mut self, dz: &[T], batch: usize, need_dx: bool) -> Option<Vec<T>> {
        let (cin, cout, s, k) = (
            self.input.channels(),
            self.output.channels(),
            self.input.positions(),
            self.taps,
        );
        let kc = k * cin;
        accumulate_bias(&mut self.grads[1], dz, cout);
        let chunk = chunk_samples(s * kc, batch);
        let mut cols = vec![T::zero(); chunk * s * kc];
        let mut dcols = if need_dx {
            vec![T::zero(); chunk * s * kc]
        } else {
            vec![]
        };
        let mut dx = if need_dx {
            vec![T::zero(); batch * s * cin]
        } else {
            vec![]
        };
        for b0 in (0..batch).step_by(chunk) {
            let nb = chunk.min(batch - b0);
            let rows = nb * s;
            let cols = &mut cols[..rows * kc];
            gather_cols(&self.cache.x[b0 * s * cin..], nb, s, s, k, cin, &self.table, cols);
            let dzb = &dz[b0 * s * cout..(b0 + nb) * s * cout];
            matmul_at(kc, rows, cout, cols, dzb, &mut self.grads[0], true);
            if need_dx {
                let dcols = &mut dcols[..rows * kc];
                matmul_bt(rows, cout, kc, dzb, &self.params[0], dcols, false);
                scatter_cols(dcols, nb, s, s, k, cin, &self.table, &mut dx[b0 * s * cin..]);
            }
        }
        need_dx.then_some(dx)
    }

    fn transpose_forward(&self, x: &[T], batch: usize) -> Vec<T> {
        let (cin, cout, k) = (self.input.channels(), self.output.channels(), self.taps);
        let (si, so) = (self.input.positions(), self.output.positions());
        let kco = k * cout;
        let mut y = vec![T::zero(); batch * so * cout];
        for row in y.chunks_mut(cout) {
            row.copy_from_slice(&self.params[1]);
        }
        let chunk = chunk_samples(si * kco, batch);
        let mut cols = vec![T::zero(); chunk * si * kco];
        for b0 in (0..batch).step_by(chunk) {
            let nb = chunk.min(batch - b0);
            let rows = nb * si;
            let cols = &mut cols[..rows * kco];
            matmul(
                rows,
                cin,
                kco,
                &x[b0 * si * cin..(b0 + nb) * si * cin],
                &self.params[0],
                cols,
                false,
            );
            scatter_cols(cols, nb, so, si, k, cout, &self.table, &mut y[b0 * so * cout..]);
        }
        y
    }

    fn transpose_backward(&mut self, dz: &[T], batch: usize, need_dx: bool) -> Option<Vec<T>> {
        let (cin, cout, k) = (self.input.channels(), self.output.channels(), self.taps);
        let (si, so) = (self.input.positions(), self.output.positions());
        let kco = k * cout;
        accumulate_bias(&mut self.grads[1], dz, cout);
        let chunk = chunk_samples(si * kco, batch);
        let mut dcols = vec![T::zero(); chunk * si * kco];
        let mut dx = if need_dx {
            vec![T::zero(); batch * si * cin]
        } else {
            vec![]
        };
        for b0 in (0..batch).step_by(chunk) {
            let nb = chunk.min(batch - b0);
            let rows = nb * si;
            let dcols = &mut dcols[..rows * kco];
            gather_cols(&dz[b0 * so * cout..], nb, so, si, k, cout, &self.table, dcols);
            let xb = &self.cache.x[b0 * si * cin..(b0 + nb) * si * cin];
            matmul_at(cin, rows, kco, xb, dcols, &mut self.grads[0], true);
            if need_dx {
                let dxb = &mut dx[b0 * si * cin..(b0 + nb) * si * cin];
                matmul_bt(rows, kco, cin, dcols, &self.params[0], dxb, false);
            }
        }
        need_dx.then_some(dx)
    }

    fn max_pool(&self, x: &[T], batch: usize, pool: &[usize; 3], argmax: Option<&mut Vec<u32>>) -> Vec<T> {
        let (di, dout) = (spatial(self.input), spatial(self.output));
        let c = di[3];
        let (si, so) = (self.input.positions(), self.output.positions());
        let mut y = vec![T::zero(); batch * so * c];
        let mut idx = vec![0u32; batch * so * c];
        for b in 0..batch {
            for oz in 0..dout[2] {
                for oy in 0..dout[1] {
                    for ox in 0..dout[0] {
                        let o = (b * so + pos(&dout, ox, oy, oz)) * c;
                        let mut first = true;
                        for z in oz * pool[2]..((oz + 1) * pool[2]).min(di[2]) {
                            for yy in oy * pool[1]..((oy + 1) * pool[1]).min(di[1]) {
                                for xx in ox * pool[0]..((ox + 1) * pool[0]).min(di[0]) {
                                    let i = (b * si + pos(&di, xx, yy, z)) * c;
                                    for j in 0..c {
                                        if first || x[i + j] > y[o + j] {
                                            y[o + j] = x[i + j];
                                            idx[o + j] = (i + j) as u32;
                                        }
                                    }
                                    first = false;
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(a) = argmax {
            *a = idx;
        }
        y
    }

    fn bn_train(&mut self, x: Vec<T>, batch: usize, momentum: f64, eps: f64) -> Vec<T> {
        let c = self.input.channels();
        let rows = batch * self.input.positions();
        let mut mean = vec![0.0f64; c];
        for row in x.chunks(c) {
            for j in 0..c {
                mean[j] += row[j].as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0f64; c];
        for row in x.chunks(c) {
            for j in 0..c {
                let d = row[j].as_f64() - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= rows as f64);
        let inv: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + eps).sqrt())).collect();
        let meant: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
        let mut xhat = x;
        let mut y = vec![T::zero(); xhat.len()];
        for (xr, yr) in xhat.chunks_mut(c).zip(y.chunks_mut(c)) {
            for j in 0..c {
                xr[j] = (xr[j] - meant[j]) * inv[j];
                yr[j] = xr[j] * self.params[0][j] + self.params[1][j];
            }
        }
        let (m, one_m) = (T::of(momentum), T::of(1.0 - momentum));
        for j in 0..c {
            self.stats[0][j] = m * self.stats[0][j] + one_m * meant[j];
            self.stats[1][j] = m * self.stats[1][j] + one_m * T::of(var[j]);
        }
        self.cache.xhat = xhat;
        self.cache.inv_std = inv;
        y
    }

    fn bn_backward(&mut self, dy: &[T]) -> Vec<T> {
        let c = self.input.channels();
        let rows = dy.len() / c;
        let xhat = &self.cache.xhat;
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for (g, xh) in dy.chunks(c).zip(xhat.chunks(c)) {
            for j in 0..c {
                sum_dy[j] += g[j].as_f64();
                sum_dy_xhat[j] += (g[j] * xh[j]).as_f64();
            }
        }
        for j in 0..c {
            self.grads[0][j] = self.grads[0][j] + T::of(sum_dy_xhat[j]);
            self.grads[1][j] = self.grads[1][j] + T::of(sum_dy[j]);
        }
        let n = rows as f64;
        let a: Vec<T> = (0..c).map(|j| self.params[0][j] * self.cache.inv_std[j]).collect();
        let mean_dy: Vec<T> = sum_dy.iter().map(|s| T::of(s / n)).collect();
        let mean_dyx: Vec<T> = sum_dy_xhat.iter().map(|s| T::of(s / n)).collect();
        let mut dx = vec![T::zero(); dy.len()];
        for ((d, g), xh) in dx.chunks_mut(c).zip(dy.chunks(c)).zip(xhat.chunks(c)) {
            for j in 0..c {
                d[j] = a[j] * (g[j] - mean_dy[j] - xh[j] * mean_dyx[j]);
            }
        }
        dx
    }
}

fn chunk_samples(per_sample: usize, batch: usize) -> usize {
    (COLS_BUDGET / per_sample.max(1)).clamp(1, batch.max(1))
}

/// `table[s·K + k]` = input position read by tap `k` at output position `s`.
fn conv_table(d: [usize; 4], kernel: &[usize; 3]) -> Vec<u32> {
    let half = [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2];
    let taps = kernel.iter().product::<usize>();
    let mut t = Vec::with_capacity(d[0] * d[1] * d[2] * taps);
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                for l in 0..kernel[2] {
                    for j in 0..kernel[1] {
                        for i in 0..kernel[0] {
                            let src = [x + i, y + j, z + l];
                            let inside = (0..3).all(|a| src[a] >= half[a] && src[a] - half[a] < d[a]);
                            t.push(if inside {
                                pos(&d, src[0] - half[0], src[1] - half[1], src[2] - half[2]) as u32
                            } else {
                                NONE
                            });
                        }
                    }
                }
            }
        }
    }
    t
}

/// `table[s·K + k]` = output position written by tap `k` of input position `s`.
fn transpose_table(di: [usize; 4], dout: [usize; 4], kernel: &[usize; 3], stride: &[usize; 3]) -> Vec<u32> {
    let taps = kernel.iter().product::<usize>();
    let mut t = Vec::with_capacity(di[0] * di[1] * di[2] * taps);
    for z in 0..di[2] {
        for y in 0..di[1] {
            for x in 0..di[0] {
                for l in 0..kernel[2] {
                    for j in 0..kernel[1] {
                        for i in 0..kernel[0] {
                            let o = [x * stride[0] + i, y * stride[1] + j, z * stride[2] + l];
                            t.push(if (0..3).all(|a| o[a] < dout[a]) {
                                pos(&dout, o[0], o[1], o[2]) as u32
                            } else {
                                NONE
                            });
                        }
                    }
                }
            }
        }
    }
    t
}

fn crop_table(di: [usize; 4], dout: [usize; 4]) -> Vec<u32> {
    let off = [(di[0] - dout[0]) / 2, (di[1] - dout[1]) / 2, (di[2] - dout[2]) / 2];
    let mut t = Vec::with_capacity(dout[0] * dout[1] * dout[2]);
    for z in 0..dout[2] {
        for y in 0..dout[1] {
            for x in 0..dout[0] {
                t.push(pos(&di, x + off[0], y + off[1], z + off[2]) as u32);
            }
        }
    }
    t
}

/// `cols[(b·R + r)·K + k][..ch] = src[b·S + table[r·K + k]][..ch]`, zero for
/// missing taps. `src` has `S = s_src` positions per sample, `R = s_rows`.
#[allow(clippy::too_many_arguments)]
fn gather_cols<T: Scalar>(
    src: &[T],
    nb: usize,
    s_src: usize,
    s_rows: usize,
    k: usize,
    ch: usize,
    table: &[u32],
    cols: &mut [T],
) {
    for b in 0..nb {
        let base = b * s_src;
        for r in 0..s_rows {
            let row = (b * s_rows + r) * k;
            for kk in 0..k {
                let dst = &mut cols[(row + kk) * ch..(row + kk + 1) * ch];
                match table[r * k + kk] {
                    NONE => dst.fill(T::zero()),
                    p => {
                        let i = (base + p as usize) * ch;
                        dst.copy_from_slice(&src[i..i + ch]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`gather_cols`]: accumulates columns back into `dst`.
#[allow(clippy::too_many_arguments)]
fn scatter_cols<T: Scalar>(
    cols: &[T],
    nb: usize,
    s_dst: usize,
    s_rows: usize,
    k: usize,
    ch: usize,
    table: &[u32],
    dst: &mut [T],
) {
    for b in 0..nb {
        let base = b * s_dst;
        for r in 0..s_rows {
            let row = (b * s_rows + r) * k;
            for kk in 0..k {
                let p = table[r * k + kk];
                if p == NONE {
                    continue;
                }
                let i = (base + p as usize) * ch;
                let src = &cols[(row + kk) * ch..(row + kk + 1) * ch];
                for (d, s) in dst[i..i + ch].iter_mut().zip(src) {
                    *d = *d + *s;
                }
            }
        }
    }
}

fn accumulate_bias<T: Scalar>(db: &mut [T], dz: &[T], c: usize) {
    for row in dz.chunks(c) {
        for (g, v) in db.iter_mut().zip(row) {
            *g = *g + *v;
        }
    }
}

fn activate<T: Scalar>(act: Activation, y: &mut [T]) {
    match act {
        Activation::None => {}
        Activation::Relu => y.iter_mut().for_each(|v| *v = v.max(T::zero())),
        Activation::Sigmoid => y.iter_mut().for_each(|v| *v = T::one() / (T::one() + (-*v).exp())),
    }
}

/// Multiplies `dy` by the activation derivative expressed through outputs.
fn activation_grad<T: Scalar>(act: Activation, y: &[T], dy: &mut [T]) {
    match act {
        Activation::None => {}
        Activation::Relu => {
            for (g, v) in dy.iter_mut().zip(y) {
                if *v <= T::zero() {
                    *g = T::zero();
                }
            }
        }
        Activation::Sigmoid => {
            for (g, v) in dy.iter_mut().zip(y) {
                *g = *g * *v * (T::one() - *v);
            }
        }
    }
}
