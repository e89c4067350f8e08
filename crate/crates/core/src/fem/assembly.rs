use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sprs::{CsMat, TriMat};

use super::element::{element_stiffness, ElementKind, ElementMatrix};
use super::mesh::GridMesh;
use crate::error::{Error, Result};

/// Linear isotropic material with SIMP interpolation of the Young's modulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub e0: f64,
    pub emin: f64,
    pub nu: f64,
    pub penal: f64,
}

impl Default for Material {
    fn default() -> Self {
        Material {
            e0: 1.0,
            emin: 1e-9,
            nu: 0.3,
            penal: 3.0,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        if !(self.e0 > 0.0 && self.e0.is_finite()) {
            return Err(Error::invalid(format!("E0 must be positive, got {}", self.e0)));
        }
        if !(self.emin > 0.0 && self.emin < self.e0) {
            return Err(Error::invalid(format!("Emin must lie in (0, E0), got {}", self.emin)));
        }
        if !(0.0..0.5).contains(&self.nu) {
            return Err(Error::invalid(format!("nu must lie in [0, 0.5), got {}", self.nu)));
        }
        if !(self.penal >= 1.0) {
            return Err(Error::invalid(format!("penal must be >= 1, got {}", self.penal)));
        }
        Ok(())
    }

    /// `E(x) = Emin + x^p (E0 - Emin)`.
    pub fn modulus(&self, x: f64) -> f64 {
        self.emin + x.powf(self.penal) * (self.e0 - self.emin)
    }

    /// `dE/dx = p x^(p-1) (E0 - Emin)`.
    pub fn modulus_derivative(&self, x: f64) -> f64 {
        self.penal * x.powf(self.penal - 1.0) * (self.e0 - self.emin)
    }
}

/// Dirichlet-fixed dofs (homogeneous) and nodal point loads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryConditions {
    fixed: Vec<usize>,
    loads: BTreeMap<usize, f64>,
}

impl BoundaryConditions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fix(&mut self, dof: usize) {
        if let Err(pos) = self.fixed.binary_search(&dof) {
            self.fixed.insert(pos, dof);
        }
    }

    /// Adds `value` to the force on `dof`; coincident loads sum.
    pub fn add_load(&mut self, dof: usize, value: f64) {
        *self.loads.entry(dof).or_insert(0.0) += value;
    }

    pub fn fixed_dofs(&self) -> &[usize] {
        &self.fixed
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.fixed.binary_search(&dof).is_ok()
    }

    pub fn loads(&self) -> &BTreeMap<usize, f64> {
        &self.loads
    }

    pub fn validate(&self, num_dofs: usize) -> Result<()> {
        if self.fixed.is_empty() {
            return Err(Error::invalid("no fixed dofs: rigid-body modes remain"));
        }
        if let Some(&d) = self.fixed.last().filter(|&&d| d >= num_dofs) {
            return Err(Error::invalid(format!("fixed dof {d} out of range ({num_dofs} dofs)")));
        }
        if let Some((&d, _)) = self.loads.iter().find(|(&d, _)| d >= num_dofs) {
            return Err(Error::invalid(format!("loaded dof {d} out of range ({num_dofs} dofs)")));
        }
        Ok(())
    }

    pub fn load_vector(&self, num_dofs: usize) -> Vec<f64> {
        let mut f = vec![0.0; num_dofs];
        for (&d, &v) in &self.loads {
            f[d] += v;
        }
        f
    }
}

/// Global stiffness stored with both triangles in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetricMatrix {
    inner: CsMat<f64>,
}

impl SparseSymmetricMatrix {
    pub fn dim(&self) -> usize {
        self.inner.rows()
    }

    pub fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j).copied().unwrap_or(0.0)
    }

    pub fn as_csr(&self) -> &CsMat<f64> {
        &self.inner
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, row) in self.inner.outer_iterator().enumerate() {
            y[i] = row.iter().map(|(j, v)| v * x[j]).sum();
        }
    }

    /// Largest `|K_ij - K_ji|` over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in self.inner.outer_iterator().enumerate() {
            for (j, v) in row.iter() {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Reusable assembly plan: the sparsity pattern and the scatter map from
/// element matrix entries to CSR slots are built once per mesh.
#[derive(Debug, Clone)]
pub struct StiffnessAssembler {
    pattern: CsMat<f64>,
    scatter: Vec<usize>,
    k0: ElementMatrix,
    num_elements: usize,
}

impl StiffnessAssembler {
    pub fn new(mesh: &GridMesh, nu: f64) -> Self {
        let kind = ElementKind::for_rank(mesh.spatial_rank());
        let k0 = element_stiffness(kind, nu, mesh.element_size());
        let n = mesh.num_dofs();
        let kd = mesh.dofs_per_element();
        let mut tri = TriMat::with_capacity((n, n), mesh.num_elements() * kd * kd);
        for e in 0..mesh.num_elements() {
            let dofs = mesh.element_dofs(e);
            for &i in dofs {
                for &j in dofs {
                    tri.add_triplet(i, j, 0.0);
                }
            }
        }
        let pattern: CsMat<f64> = tri.to_csr();
        let mut scatter = Vec::with_capacity(mesh.num_elements() * kd * kd);
        for e in 0..mesh.num_elements() {
            let dofs = mesh.element_dofs(e);
            for &i in dofs {
                for &j in dofs {
                    let idx = pattern.nnz_index(i, j).expect("pattern holds every element coupling");
                    scatter.push(idx.0);
                }
            }
        }
        StiffnessAssembler {
            pattern,
            scatter,
            k0,
            num_elements: mesh.num_elements(),
        }
    }

    pub fn element_matrix(&self) -> &ElementMatrix {
        &self.k0
    }

    /// Assembles `Σ_e E_e k0` for per-element moduli.
    pub fn assemble_moduli(&self, moduli: &[f64]) -> SparseSymmetricMatrix {
        assert_eq!(moduli.len(), self.num_elements);
        let mut mat = self.pattern.clone();
        let data = mat.data_mut();
        data.iter_mut().for_each(|v| *v = 0.0);
        let k0 = self.k0.as_slice();
        let block = k0.len();
        for (e, &modulus) in moduli.iter().enumerate() {
            let slots = &self.scatter[e * block..(e + 1) * block];
            for (&slot, &kv) in slots.iter().zip(k0) {
                data[slot] += modulus * kv;
            }
        }
        SparseSymmetricMatrix { inner: mat }
    }

    pub fn assemble(&self, densities: &[f64], material: &Material) -> Result<SparseSymmetricMatrix> {
        check_densities(densities, self.num_elements)?;
        let moduli: Vec<f64> = densities.iter().map(|&x| material.modulus(x)).collect();
        Ok(self.assemble_moduli(&moduli))
    }
}

pub(crate) fn check_densities(densities: &[f64], num_elements: usize) -> Result<()> {
    if densities.len() != num_elements {
        return Err(Error::invalid(format!(
            "expected {num_elements} densities, got {}",
            densities.len()
        )));
    }
    if let Some((e, x)) = densities.iter().enumerate().find(|(_, x)| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid(format!("density {x} of element {e} outside [0, 1]")));
    }
    Ok(())
}

pub fn assemble_stiffness(mesh: &GridMesh, densities: &[f64], material: &Material) -> Result<SparseSymmetricMatrix> {
    material.validate()?;
    StiffnessAssembler::new(mesh, material.nu).assemble(densities, material)
}

/// Per-element strain energies `u_eᵀ k0 u_e` (unit modulus).
pub fn element_energies(mesh: &GridMesh, k0: &ElementMatrix, u: &[f64]) -> Vec<f64> {
    let mut ue = vec![0.0; mesh.dofs_per_element()];
    (0..mesh.num_elements())
        .map(|e| {
            for (slot, &d) in ue.iter_mut().zip(mesh.element_dofs(e)) {
                *slot = u[d];
            }
            k0.quadratic_form(&ue)
        })
        .collect()
}

/// Per-element compliance contributions `E_e u_eᵀ k0 u_e` and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceBreakdown {
    pub per_element: Vec<f64>,
    pub total: f64,
}

pub fn element_compliance(
    u: &[f64],
    mesh: &GridMesh,
    densities: &[f64],
    material: &Material,
) -> Result<ComplianceBreakdown> {
    check_densities(densities, mesh.num_elements())?;
    if u.len() != mesh.num_dofs() {
        return Err(Error::invalid(format!(
            "displacement length {} does not match {} dofs",
            u.len(),
            mesh.num_dofs()
        )));
    }
    let k0 = element_stiffness(
        ElementKind::for_rank(mesh.spatial_rank()),
        material.nu,
        mesh.element_size(),
    );
    let per_element: Vec<f64> = element_energies(mesh, &k0, u)
        .into_iter()
        .zip(densities)
        .map(|(ce, &x)| material.modulus(x) * ce)
        .collect();
    let total = per_element.iter().sum();
    Ok(ComplianceBreakdown { per_element, total })
}
