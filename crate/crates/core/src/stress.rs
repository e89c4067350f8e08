//! Element stress recovery, Von Mises and dominant-principal (tension /
//! compression) fields, and their per-sample normalization.

use crate::error::{Error, Result};
use crate::fem::{elasticity_matrix, strain_displacement, ElementKind, GridMesh, Material};

/// Cauchy stress in Voigt order `xx, yy, zz, yz, xz, xy`.
///
/// Plane-stress states leave `zz`, `yz` and `xz` at zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StressTensor(pub [f64; 6]);

impl StressTensor {
    pub fn plane(sxx: f64, syy: f64, sxy: f64) -> Self {
        StressTensor([sxx, syy, 0.0, 0.0, 0.0, sxy])
    }

    /// Symmetric 3×3 matrix form.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let [xx, yy, zz, yz, xz, xy] = self.0;
        [[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]]
    }

    /// Principal stresses in descending order.
    pub fn principal(&self) -> [f64; 3] {
        let [xx, yy, zz, yz, xz, xy] = self.0;
        let off = yz * yz + xz * xz + xy * xy;
        let mut eig = if off == 0.0 {
            [xx, yy, zz]
        } else {
            let q = (xx + yy + zz) / 3.0;
            let p2 = (xx - q).powi(2) + (yy - q).powi(2) + (zz - q).powi(2) + 2.0 * off;
            let p = (p2 / 6.0).sqrt();
            let m = self.matrix();
            let mut b = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
                }
            }
            let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
                - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
                + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
            let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
            let e1 = q + 2.0 * p * phi.cos();
            let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
            [e1, 3.0 * q - e1 - e3, e3]
        };
        eig.sort_by(|a, b| b.total_cmp(a));
        eig
    }
}

/// Centroid stresses of every element, computed with modulus `E0`
/// regardless of the element density.
pub fn element_stresses(u: &[f64], mesh: &GridMesh, material: &Material) -> Result<Vec<StressTensor>> {
    if u.len() != mesh.num_dofs() {
        return Err(Error::invalid(format!(
            "displacement length {} does not match {} dofs",
            u.len(),
            mesh.num_dofs()
        )));
    }
    let kind = ElementKind::for_rank(mesh.spatial_rank());
    let d = elasticity_matrix(kind, material.e0, material.nu);
    let b = strain_displacement(kind, mesh.element_size(), &vec![0.0; mesh.spatial_rank()]);
    let ns = kind.stress_components();
    let nd = kind.dofs();
    // DB maps element dofs straight to stress components.
    let mut db = vec![0.0; ns * nd];
    for i in 0..ns {
        for j in 0..nd {
            db[i * nd + j] = (0..ns).map(|m| d[i * ns + m] * b[m * nd + j]).sum();
        }
    }
    Ok((0..mesh.num_elements())
        .map(|e| {
            let dofs = mesh.element_dofs(e);
            let mut s = [0.0; 6];
            for (i, si) in s.iter_mut().take(ns).enumerate() {
                *si = dofs.iter().enumerate().map(|(j, &g)| db[i * nd + j] * u[g]).sum();
            }
            if ns == 3 {
                StressTensor::plane(s[0], s[1], s[2])
            } else {
                StressTensor(s)
            }
        })
        .collect())
}

pub fn von_mises(s: &StressTensor) -> f64 {
    let [xx, yy, zz, yz, xz, xy] = s.0;
    let v = 0.5 * ((xx - yy).powi(2) + (yy - zz).powi(2) + (zz - xx).powi(2)) + 3.0 * (yz * yz + xz * xz + xy * xy);
    v.max(0.0).sqrt()
}

/// Principal stress of largest magnitude, sign kept. Ties favor tension.
pub fn dominant_principal(s: &StressTensor) -> f64 {
    let p = s.principal();
    if p[0].abs() >= p[2].abs() {
        p[0]
    } else {
        p[2]
    }
}

/// Raw (unnormalized) Von Mises and dominant-principal element fields.
pub fn raw_stress_fields(u: &[f64], mesh: &GridMesh, material: &Material) -> Result<(Vec<f64>, Vec<f64>)> {
    let stresses = element_stresses(u, mesh, material)?;
    Ok((
        stresses.iter().map(von_mises).collect(),
        stresses.iter().map(dominant_principal).collect(),
    ))
}

/// Normalized stress fields with the scales that recover raw values.
#[derive(Debug, Clone, PartialEq)]
pub struct StressFields {
    pub vm: Vec<f64>,
    pub tc: Vec<f64>,
    pub vm_scale: f64,
    pub tc_scale: f64,
}

/// Divides each field by its maximum magnitude; an all-zero field keeps
/// scale 1.
pub fn normalize_fields(raw_vm: &[f64], raw_tc: &[f64]) -> Result<StressFields> {
    if raw_vm.is_empty() || raw_tc.is_empty() {
        return Err(Error::invalid("stress fields must be nonempty"));
    }
    let (vm, vm_scale) = scale_by_max_abs(raw_vm);
    let (tc, tc_scale) = scale_by_max_abs(raw_tc);
    Ok(StressFields {
        vm,
        tc,
        vm_scale,
        tc_scale,
    })
}

fn scale_by_max_abs(v: &[f64]) -> (Vec<f64>, f64) {
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = if m > 0.0 { m } else { 1.0 };
    (v.iter().map(|x| (x / scale).clamp(-1.0, 1.0)).collect(), scale)
}

/// Element-wise product `x_e · s_e` (stress masked by density).
pub fn combined_field(x: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    if x.len() != s.len() {
        return Err(Error::invalid(format!(
            "density and stress lengths differ ({} vs {})",
            x.len(),
            s.len()
        )));
    }
    Ok(x.iter().zip(s).map(|(a, b)| a * b).collect())
}
