//! Equilibrium solve `K U = F` with homogeneous Dirichlet constraints.
//!
//! Small and medium systems use a banded Cholesky factorization of the
//! reduced (free-dof) matrix after reverse Cuthill–McKee reordering. Large
//! systems fall back to Jacobi-preconditioned conjugate gradients.

use sprs::TriMat;

use super::assembly::{BoundaryConditions, SparseSymmetricMatrix};
use crate::error::{Error, Result};

/// Relative residual every accepted solve must meet on the free dofs.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Free-dof count above which `SolverKind::Auto` switches to PCG.
pub const DIRECT_SOLVE_LIMIT: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverKind {
    Auto,
    Cholesky,
    Pcg { max_iterations: usize },
}

/// Nodal displacement vector, one entry per global dof.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub displacement: DisplacementField,
    /// `‖K U − F‖₂ / ‖F‖₂` over free dofs (0 when `F = 0`).
    pub relative_residual: f64,
    /// PCG iterations, or refinement sweeps for the direct path.
    pub iterations: usize,
}

/// Solver plan for a fixed sparsity pattern and constraint set.
///
/// The ordering and bandwidth are computed once; every `solve` reuses them,
/// so one plan serves all iterations of an optimization run.
#[derive(Debug, Clone)]
pub struct EquilibriumSolver {
    num_dofs: usize,
    fixed_mask: Vec<bool>,
    free: Vec<usize>,
    /// free-local index → position in the band ordering
    position: Vec<usize>,
    /// first stored column of each reordered row
    envelope: Vec<usize>,
    bandwidth: usize,
    kind: SolverKind,
}

impl EquilibriumSolver {
    pub fn new(k: &SparseSymmetricMatrix, bcs: &BoundaryConditions, kind: SolverKind) -> Result<Self> {
        let n = k.dim();
        bcs.validate(n)?;
        let mut fixed_mask = vec![false; n];
        for &d in bcs.fixed_dofs() {
            fixed_mask[d] = true;
        }
        let free: Vec<usize> = (0..n).filter(|&d| !fixed_mask[d]).collect();
        let kind = match kind {
            SolverKind::Auto if free.len() > DIRECT_SOLVE_LIMIT => SolverKind::Pcg {
                max_iterations: 20 * free.len(),
            },
            SolverKind::Auto => SolverKind::Cholesky,
            other => other,
        };
        let mut solver = EquilibriumSolver {
            num_dofs: n,
            fixed_mask,
            free,
            position: Vec::new(),
            envelope: Vec::new(),
            bandwidth: 0,
            kind,
        };
        if kind == SolverKind::Cholesky {
            solver.plan_band_ordering(k);
        }
        Ok(solver)
    }

    pub fn kind(&self) -> SolverKind {
        self.kind
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    fn free_local_map(&self) -> Vec<usize> {
        let mut local = vec![usize::MAX; self.num_dofs];
        for (i, &d) in self.free.iter().enumerate() {
            local[d] = i;
        }
        local
    }

    fn plan_band_ordering(&mut self, k: &SparseSymmetricMatrix) {
        let local = self.free_local_map();
        let nf = self.free.len();
        let mut tri = TriMat::new((nf, nf));
        for (i, row) in k.as_csr().outer_iterator().enumerate() {
            let li = local[i];
            if li == usize::MAX {
                continue;
            }
            for (j, _) in row.iter() {
                let lj = local[j];
                if lj != usize::MAX {
                    tri.add_triplet(li, lj, 1u8);
                }
            }
        }
        let graph: sprs::CsMat<u8> = tri.to_csr();
        let ordering = sprs::linalg::reverse_cuthill_mckee(graph.view());
        let order: Vec<usize> = ordering.perm.vec();
        let mut position = vec![0; nf];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new;
        }
        let mut bandwidth = 0;
        let mut envelope: Vec<usize> = (0..nf).collect();
        for (i, row) in graph.outer_iterator().enumerate() {
            for (j, _) in row.iter() {
                let (pi, pj) = (position[i], position[j]);
                bandwidth = bandwidth.max(pi.abs_diff(pj));
                if pj < pi {
                    envelope[pi] = envelope[pi].min(pj);
                }
            }
        }
        self.position = position;
        self.bandwidth = bandwidth;
        self.envelope = envelope;
    }

    pub fn solve(&self, k: &SparseSymmetricMatrix, bcs: &BoundaryConditions) -> Result<EquilibriumSolution> {
        self.solve_with_guess(k, bcs, None)
    }

    /// Solves with an optional starting vector (used by the iterative path).
    pub fn solve_with_guess(
        &self,
        k: &SparseSymmetricMatrix,
        bcs: &BoundaryConditions,
        guess: Option<&[f64]>,
    ) -> Result<EquilibriumSolution> {
        if k.dim() != self.num_dofs {
            return Err(Error::invalid("matrix dimension differs from the solver plan"));
        }
        let mut f = bcs.load_vector(self.num_dofs);
        for (fi, &fixed) in f.iter_mut().zip(&self.fixed_mask) {
            if fixed {
                *fi = 0.0;
            }
        }
        let f_norm = norm(&f);
        if f_norm == 0.0 {
            return Ok(EquilibriumSolution {
                displacement: DisplacementField {
                    values: vec![0.0; self.num_dofs],
                },
                relative_residual: 0.0,
                iterations: 0,
            });
        }
        let (u, iterations) = match self.kind {
            SolverKind::Pcg { max_iterations } => self.pcg(k, &f, f_norm, guess, max_iterations)?,
            _ => self.direct(k, &f, f_norm)?,
        };
        let relative_residual = self.residual(k, &u, &f) / f_norm;
        if !(relative_residual <= RESIDUAL_TOLERANCE) {
            return Err(Error::SolverFailure(format!(
                "relative residual {relative_residual:.3e} exceeds {RESIDUAL_TOLERANCE:.0e}"
            )));
        }
        Ok(EquilibriumSolution {
            displacement: DisplacementField { values: u },
            relative_residual,
            iterations,
        })
    }

    /// `‖(F − K U)_free‖₂`.
    fn residual(&self, k: &SparseSymmetricMatrix, u: &[f64], f: &[f64]) -> f64 {
        let ku = k.mul_vec(u);
        ku.iter()
            .zip(f)
            .zip(&self.fixed_mask)
            .filter(|(_, &fixed)| !fixed)
            .map(|((a, b), _)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    fn direct(&self, k: &SparseSymmetricMatrix, f: &[f64], f_norm: f64) -> Result<(Vec<f64>, usize)> {
        let factor = self.factor(k)?;
        let mut rhs: Vec<f64> = vec![0.0; self.free.len()];
        for (i, &d) in self.free.iter().enumerate() {
            rhs[self.position[i]] = f[d];
        }
        let mut u = vec![0.0; self.num_dofs];
        let mut delta = factor.solve(&rhs);
        self.scatter_add(&delta, &mut u);
        // iterative refinement against the original matrix
        let mut sweeps = 0;
        while sweeps < 3 {
            let ku = k.mul_vec(&u);
            let mut r = vec![0.0; self.free.len()];
            for (i, &d) in self.free.iter().enumerate() {
                r[self.position[i]] = f[d] - ku[d];
            }
            if norm(&r) <= 1e-3 * RESIDUAL_TOLERANCE * f_norm {
                break;
            }
            delta = factor.solve(&r);
            self.scatter_add(&delta, &mut u);
            sweeps += 1;
        }
        Ok((u, sweeps))
    }

    fn scatter_add(&self, banded: &[f64], u: &mut [f64]) {
        for (i, &d) in self.free.iter().enumerate() {
            u[d] += banded[self.position[i]];
        }
    }

    fn factor(&self, k: &SparseSymmetricMatrix) -> Result<BandCholesky> {
        let mut band = BandMatrix::with_envelope(self.envelope.clone());
        let local = self.free_local_map();
        for (i, row) in k.as_csr().outer_iterator().enumerate() {
            let li = local[i];
            if li == usize::MAX {
                continue;
            }
            let pi = self.position[li];
            for (j, &v) in row.iter() {
                let lj = local[j];
                if lj == usize::MAX {
                    continue;
                }
                let pj = self.position[lj];
                if pj <= pi {
                    band.set(pi, pj, v);
                }
            }
        }
        BandCholesky::factor(band)
    }

    fn pcg(
        &self,
        k: &SparseSymmetricMatrix,
        f: &[f64],
        f_norm: f64,
        guess: Option<&[f64]>,
        max_iterations: usize,
    ) -> Result<(Vec<f64>, usize)> {
        let n = self.num_dofs;
        let mut u = match guess {
            Some(g) if g.len() == n => g.to_vec(),
            _ => vec![0.0; n],
        };
        self.zero_fixed(&mut u);
        let diag: Vec<f64> = (0..n)
            .map(|i| if self.fixed_mask[i] { 0.0 } else { k.get(i, i) })
            .collect();
        if let Some(i) = diag
            .iter()
            .enumerate()
            .position(|(i, &d)| !self.fixed_mask[i] && d <= 0.0)
        {
            return Err(Error::SolverFailure(format!("non-positive diagonal at dof {i}")));
        }
        let precond = |r: &[f64]| -> Vec<f64> {
            r.iter()
                .zip(&diag)
                .map(|(ri, &d)| if d > 0.0 { ri / d } else { 0.0 })
                .collect()
        };
        let mut ku = k.mul_vec(&u);
        self.zero_fixed(&mut ku);
        let mut r: Vec<f64> = f.iter().zip(&ku).map(|(a, b)| a - b).collect();
        let mut z = precond(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let target = 1e-2 * RESIDUAL_TOLERANCE * f_norm;
        let mut ap = vec![0.0; n];
        for it in 0..max_iterations {
            if norm(&r) <= target {
                return Ok((u, it));
            }
            k.mul_vec_into(&p, &mut ap);
            self.zero_fixed(&mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::SolverFailure(format!(
                    "PCG breakdown at iteration {it}: pᵀKp = {pap:e}"
                )));
            }
            let alpha = rz / pap;
            for i in 0..n {
                u[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            z = precond(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if norm(&r) <= target {
            return Ok((u, max_iterations));
        }
        Err(Error::SolverFailure(format!(
            "PCG did not converge in {max_iterations} iterations (residual {:.3e})",
            norm(&r) / f_norm
        )))
    }

    fn zero_fixed(&self, v: &mut [f64]) {
        for (vi, &fixed) in v.iter_mut().zip(&self.fixed_mask) {
            if fixed {
                *vi = 0.0;
            }
        }
    }
}

/// One-shot convenience wrapper around [`EquilibriumSolver`].
pub fn solve_equilibrium(k: &SparseSymmetricMatrix, bcs: &BoundaryConditions) -> Result<DisplacementField> {
    let solver = EquilibriumSolver::new(k, bcs, SolverKind::Auto)?;
    Ok(solver.solve(k, bcs)?.displacement)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Lower envelope (skyline) storage: row `i` holds columns
/// `first[i] ..= i` contiguously. Cholesky fill stays inside the envelope.
struct BandMatrix {
    n: usize,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl BandMatrix {
    fn with_envelope(first: Vec<usize>) -> Self {
        let n = first.len();
        let mut start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            start.push(total);
            total += i + 1 - f;
        }
        start.push(total);
        BandMatrix {
            n,
            first,
            start,
            data: vec![0.0; total],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        self.start[i] + (j - self.first[i])
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

struct BandCholesky {
    l: BandMatrix,
}

impl BandCholesky {
    fn factor(mut a: BandMatrix) -> Result<Self> {
        for i in 0..a.n {
            let fi = a.first[i];
            let si = a.start[i];
            for j in fi..=i {
                let fj = a.first[j];
                let sj = a.start[j];
                let k0 = fi.max(fj);
                let len = j - k0;
                let li = si + (k0 - fi);
                let lj = sj + (k0 - fj);
                let dot = dot4(&a.data[li..li + len], &a.data[lj..lj + len]);
                let s = a.data[si + (j - fi)] - dot;
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::SolverFailure(format!(
                            "non-positive pivot {s:e} at reduced row {i}: reduced system is singular"
                        )));
                    }
                    a.data[si + (i - fi)] = s.sqrt();
                } else {
                    a.data[si + (j - fi)] = s / a.data[sj + (j - fj)];
                }
            }
        }
        Ok(BandCholesky { l: a })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..l.n {
            let (fi, si) = (l.first[i], l.start[i]);
            let s = dot4(&l.data[si..si + (i - fi)], &y[fi..i]);
            y[i] = (y[i] - s) / l.data[si + (i - fi)];
        }
        for i in (0..l.n).rev() {
            let (fi, si) = (l.first[i], l.start[i]);
            y[i] /= l.data[si + (i - fi)];
            let yi = y[i];
            for (yk, lv) in y[fi..i].iter_mut().zip(&l.data[si..si + (i - fi)]) {
                *yk -= lv * yi;
            }
        }
        y
    }
}
