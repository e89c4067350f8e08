#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use topo_core::fem::{BoundaryConditions, GridMesh};

/// Isoparametric shape-function gradients in physical coordinates for an
/// element with the given node coordinates.
fn iso_gradients(coords: &[[f64; 3]], xi: &[f64], dim: usize) -> Vec<[f64; 3]> {
    let n = coords.len();
    let refs: Vec<[f64; 3]> = match dim {
        2 => vec![[-1., -1., 0.], [1., -1., 0.], [1., 1., 0.], [-1., 1., 0.]],
        _ => {
            let mut v = Vec::new();
            for z in [-1., 1.] {
                for (x, y) in [(-1., -1.), (1., -1.), (1., 1.), (-1., 1.)] {
                    v.push([x, y, z]);
                }
            }
            v
        }
    };
    let scale = 0.5f64.powi(dim as i32);
    let dref: Vec<[f64; 3]> = refs
        .iter()
        .map(|r| {
            let mut g = [0.0; 3];
            for d in 0..dim {
                let mut prod = scale * r[d];
                for o in 0..dim {
                    if o != d {
                        prod *= 1.0 + xi[o] * r[o];
                    }
                }
                g[d] = prod;
            }
            g
        })
        .collect();
    let mut jac = DMatrix::<f64>::zeros(dim, dim);
    for a in 0..n {
        for i in 0..dim {
            for j in 0..dim {
                jac[(i, j)] += dref[a][i] * coords[a][j];
            }
        }
    }
    let inv = jac.try_inverse().unwrap();
    dref.iter()
        .map(|g| {
            let mut out = [0.0; 3];
            for j in 0..dim {
                out[j] = (0..dim).map(|i| inv[(j, i)] * g[i]).sum();
            }
            out
        })
        .collect()
}

pub fn element_coords(dim: usize, h: f64) -> Vec<[f64; 3]> {
    let base = [[0., 0.], [h, 0.], [h, h], [0., h]];
    if dim == 2 {
        base.iter().map(|p| [p[0], p[1], 0.0]).collect()
    } else {
        let mut v = Vec::new();
        for z in [0.0, h] {
            for p in base {
                v.push([p[0], p[1], z]);
            }
        }
        v
    }
}

/// Strain-displacement matrix, engineering shear, component order
/// xx yy xy (2D) or xx yy zz yz xz xy (3D).
pub fn b_oracle(dim: usize, h: f64, xi: &[f64]) -> DMatrix<f64> {
    let grads = iso_gradients(&element_coords(dim, h), xi, dim);
    let n = grads.len();
    if dim == 2 {
        let mut b = DMatrix::zeros(3, 2 * n);
        for (a, g) in grads.iter().enumerate() {
            b[(0, 2 * a)] = g[0];
            b[(1, 2 * a + 1)] = g[1];
            b[(2, 2 * a)] = g[1];
            b[(2, 2 * a + 1)] = g[0];
        }
        b
    } else {
        let mut b = DMatrix::zeros(6, 3 * n);
        for (a, g) in grads.iter().enumerate() {
            let c = 3 * a;
            b[(0, c)] = g[0];
            b[(1, c + 1)] = g[1];
            b[(2, c + 2)] = g[2];
            b[(3, c + 1)] = g[2];
            b[(3, c + 2)] = g[1];
            b[(4, c)] = g[2];
            b[(4, c + 2)] = g[0];
            b[(5, c)] = g[1];
            b[(5, c + 1)] = g[0];
        }
        b
    }
}

pub fn d_oracle(dim: usize, e: f64, nu: f64) -> DMatrix<f64> {
    if dim == 2 {
        let c = e / (1.0 - nu * nu);
        DMatrix::from_row_slice(3, 3, &[c, c * nu, 0., c * nu, c, 0., 0., 0., c * (1. - nu) / 2.])
    } else {
        let lam = e * nu / ((1. + nu) * (1. - 2. * nu));
        let mu = e / (2. * (1. + nu));
        let mut d = DMatrix::zeros(6, 6);
        for i in 0..3 {
            for j in 0..3 {
                d[(i, j)] = lam;
            }
            d[(i, i)] = lam + 2. * mu;
            d[(i + 3, i + 3)] = mu;
        }
        d
    }
}

/// Element stiffness by 2-point Gauss quadrature per axis.
pub fn stiffness_oracle(dim: usize, nu: f64, h: f64) -> DMatrix<f64> {
    let g = 1.0 / 3f64.sqrt();
    let d = d_oracle(dim, 1.0, nu);
    let pts: Vec<Vec<f64>> = if dim == 2 {
        [[-g, -g], [g, -g], [g, g], [-g, g]]
            .iter()
            .map(|p| p.to_vec())
            .collect()
    } else {
        let mut v = Vec::new();
        for a in [-g, g] {
            for b in [-g, g] {
                for c in [-g, g] {
                    v.push(vec![a, b, c]);
                }
            }
        }
        v
    };
    let det = (h / 2.0).powi(dim as i32);
    let nd = if dim == 2 { 8 } else { 24 };
    let mut k = DMatrix::zeros(nd, nd);
    for p in pts {
        let b = b_oracle(dim, h, &p);
        k += b.transpose() * &d * b * det;
    }
    k
}

/// Dense global stiffness from per-element moduli and an oracle k0.
pub fn dense_stiffness(mesh: &GridMesh, moduli: &[f64], k0: &DMatrix<f64>) -> DMatrix<f64> {
    let n = mesh.num_dofs();
    let mut k = DMatrix::zeros(n, n);
    for e in 0..mesh.num_elements() {
        let dofs = mesh.element_dofs(e);
        for (a, &i) in dofs.iter().enumerate() {
            for (b, &j) in dofs.iter().enumerate() {
                k[(i, j)] += moduli[e] * k0[(a, b)];
            }
        }
    }
    k
}

/// Dense LU solve on the free dofs; fixed dofs get zero.
pub fn dense_solve(k: &DMatrix<f64>, bcs: &BoundaryConditions) -> Vec<f64> {
    let n = k.nrows();
    let free: Vec<usize> = (0..n).filter(|d| !bcs.is_fixed(*d)).collect();
    let f = bcs.load_vector(n);
    let kr = DMatrix::from_fn(free.len(), free.len(), |i, j| k[(free[i], free[j])]);
    let fr = DVector::from_iterator(free.len(), free.iter().map(|&d| f[d]));
    let ur = kr.lu().solve(&fr).expect("nonsingular oracle system");
    let mut u = vec![0.0; n];
    for (i, &d) in free.iter().enumerate() {
        u[d] = ur[i];
    }
    u
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Cantilever: left edge clamped, unit downward load at the bottom-right node.
pub fn cantilever(mesh: &GridMesh) -> BoundaryConditions {
    let [nx, ny, nz] = mesh.dims();
    let dpn = mesh.dof_per_node();
    let mut bcs = BoundaryConditions::new();
    let nzn = if mesh.is_3d() { nz + 1 } else { 1 };
    for k in 0..nzn {
        for j in 0..=ny {
            for a in 0..dpn {
                bcs.fix(dpn * mesh.node_index(0, j, k) + a);
            }
        }
    }
    for k in 0..nzn {
        bcs.add_load(dpn * mesh.node_index(nx, 0, k) + 1, -1.0 / nzn as f64);
    }
    bcs
}
