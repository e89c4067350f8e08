use crate::error::{Error, Result};
use crate::fem::GridMesh;

/// Cone weights `H_ej = max(0, r_min − Δ(e, j))` over element centers,
/// stored as per-element neighbor lists. Distances are in element units.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterWeights {
    r_min: f64,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
    row_sums: Vec<f64>,
}

pub fn build_filter_weights(mesh: &GridMesh, r_min: f64) -> Result<FilterWeights> {
    if !(r_min > 0.0 && r_min.is_finite()) {
        return Err(Error::invalid(format!("filter radius must be positive, got {r_min}")));
    }
    let [nx, ny, nz] = mesh.dims();
    let reach = r_min.ceil() as isize - 1;
    let reach_z = if mesh.is_3d() { reach } else { 0 };
    let mut offsets = Vec::with_capacity(mesh.num_elements() + 1);
    let mut neighbors = Vec::new();
    let mut weights = Vec::new();
    let mut row_sums = Vec::with_capacity(mesh.num_elements());
    offsets.push(0);
    for e in 0..mesh.num_elements() {
        let [i, j, k] = mesh.element_coords(e).map(|v| v as isize);
        let mut sum = 0.0;
        for dk in -reach_z..=reach_z {
            let kk = k + dk;
            if kk < 0 || kk >= nz as isize {
                continue;
            }
            for dj in -reach..=reach {
                let jj = j + dj;
                if jj < 0 || jj >= ny as isize {
                    continue;
                }
                for di in -reach..=reach {
                    let ii = i + di;
                    if ii < 0 || ii >= nx as isize {
                        continue;
                    }
                    let dist = ((di * di + dj * dj + dk * dk) as f64).sqrt();
                    let w = r_min - dist;
                    if w > 0.0 {
                        neighbors.push(mesh.element_index(ii as usize, jj as usize, kk as usize));
                        weights.push(w);
                        sum += w;
                    }
                }
            }
        }
        row_sums.push(sum);
        offsets.push(neighbors.len());
    }
    Ok(FilterWeights {
        r_min,
        offsets,
        neighbors,
        weights,
        row_sums,
    })
}

impl FilterWeights {
    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn len(&self) -> usize {
        self.row_sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_sums.is_empty()
    }

    /// `(j, H_ej)` pairs for element `e`.
    pub fn row(&self, e: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[e]..self.offsets[e + 1];
        self.neighbors[r.clone()]
            .iter()
            .copied()
            .zip(self.weights[r].iter().copied())
    }

    /// `H_ej`, zero outside the radius.
    pub fn weight(&self, e: usize, j: usize) -> f64 {
        self.row(e).find(|&(n, _)| n == j).map_or(0.0, |(_, w)| w)
    }

    pub fn row_sum(&self, e: usize) -> f64 {
        self.row_sums[e]
    }
}

/// Filtered compliance sensitivities for the classical sensitivity filter.
pub fn sensitivity_filter(dc: &[f64], x: &[f64], weights: &FilterWeights, gamma: f64) -> Vec<f64> {
    (0..weights.len())
        .map(|e| {
            let num: f64 = weights.row(e).map(|(j, h)| h * x[j] * dc[j]).sum();
            num / (gamma.max(x[e]) * weights.row_sum(e))
        })
        .collect()
}

/// Physical densities `x̃_e = Σ_j H_ej x_j / Σ_j H_ej`.
pub fn density_filter(x: &[f64], weights: &FilterWeights) -> Vec<f64> {
    (0..weights.len())
        .map(|e| weights.row(e).map(|(j, h)| h * x[j]).sum::<f64>() / weights.row_sum(e))
        .collect()
}

/// Transpose of [`density_filter`]: maps derivatives with respect to the
/// physical densities back onto the design variables.
pub fn chain_rule_backfilter(d_phys: &[f64], weights: &FilterWeights) -> Vec<f64> {
    let scaled: Vec<f64> = d_phys.iter().enumerate().map(|(e, d)| d / weights.row_sum(e)).collect();
    // H is symmetric, so row k of H gathers H_ke for every e in N_k.
    (0..weights.len())
        .map(|k| weights.row(k).map(|(e, h)| h * scaled[e]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cone_weights() {
        let mesh = GridMesh::new(&[5, 5], 1.0).unwrap();
        let w = build_filter_weights(&mesh, 1.5).unwrap();
        let center = mesh.element_index(2, 2, 0);
        assert_eq!(w.weight(center, center), 1.5);
        assert_eq!(w.weight(center, mesh.element_index(3, 2, 0)), 0.5);
        let diag = w.weight(center, mesh.element_index(3, 3, 0));
        assert!((diag - (1.5 - 2f64.sqrt())).abs() < 1e-15);
        assert_eq!(w.weight(center, mesh.element_index(4, 2, 0)), 0.0);
    }

    #[test]
    fn rejects_nonpositive_radius() {
        let mesh = GridMesh::new(&[2, 2], 1.0).unwrap();
        assert!(build_filter_weights(&mesh, 0.0).is_err());
    }

    #[test]
    fn uniform_sensitivity_unchanged() {
        let mesh = GridMesh::new(&[6, 4], 1.0).unwrap();
        let w = build_filter_weights(&mesh, 1.5).unwrap();
        let out = sensitivity_filter(&[-1.0; 24], &[1.0; 24], &w, 1e-3);
        assert!(out.iter().all(|v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn sensitivity_filter_is_local() {
        let mesh = GridMesh::new(&[7, 7], 1.0).unwrap();
        let w = build_filter_weights(&mesh, 1.5).unwrap();
        let e = mesh.element_index(3, 3, 0);
        let mut dc = vec![0.0; 49];
        dc[e] = -2.0;
        let out = sensitivity_filter(&dc, &[0.5; 49], &w, 1e-3);
        for (j, v) in out.iter().enumerate() {
            if *v != 0.0 {
                assert!(w.weight(e, j) > 0.0, "element {j} outside radius");
            }
        }
    }

    #[test]
    fn density_filter_keeps_constants_and_range() {
        let mesh = GridMesh::new(&[4, 4, 2], 1.0).unwrap();
        let w = build_filter_weights(&mesh, 3f64.sqrt()).unwrap();
        let c = density_filter(&[0.3; 32], &w);
        assert!(c.iter().all(|v| (v - 0.3).abs() < 1e-15));
        let x: Vec<f64> = (0..32).map(|e| ((e * 13) % 7) as f64 / 6.0).collect();
        let xf = density_filter(&x, &w);
        let (lo, hi) = x.iter().fold((1.0f64, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(xf.iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn backfilter_of_zero_is_zero() {
        let mesh = GridMesh::new(&[5, 3], 1.0).unwrap();
        let w = build_filter_weights(&mesh, 1.5).unwrap();
        assert!(chain_rule_backfilter(&[0.0; 15], &w).iter().all(|&v| v == 0.0));
    }
}
