//! Unit-modulus element matrices for bilinear quads (plane stress) and
//! trilinear hexahedra.

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ElementMatrix {
    pub fn zeros(n: usize) -> Self {
        ElementMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `uᵀ K u`.
    pub fn quadratic_form(&self, u: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, row) in self.data.chunks_exact(self.n).enumerate() {
            let ku: f64 = row.iter().zip(u).map(|(a, b)| a * b).sum();
            acc += u[i] * ku;
        }
        acc
    }

    pub fn mul_vec(&self, u: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(u).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    /// 4-node bilinear quadrilateral, plane stress, unit thickness.
    Quad4,
    /// 8-node trilinear hexahedron.
    Hex8,
}

impl ElementKind {
    pub fn for_rank(rank: usize) -> Self {
        if rank == 3 {
            ElementKind::Hex8
        } else {
            ElementKind::Quad4
        }
    }

    pub fn nodes(self) -> usize {
        match self {
            ElementKind::Quad4 => 4,
            ElementKind::Hex8 => 8,
        }
    }

    pub fn dofs(self) -> usize {
        match self {
            ElementKind::Quad4 => 8,
            ElementKind::Hex8 => 24,
        }
    }

    /// Number of independent stress components (3 in plane stress, 6 in 3D).
    pub fn stress_components(self) -> usize {
        match self {
            ElementKind::Quad4 => 3,
            ElementKind::Hex8 => 6,
        }
    }
}

/// Stiffness of a full-material element with `E = 1`.
///
/// The quad uses the closed-form plane-stress matrix for square elements,
/// which does not depend on the edge length. The hexahedron is integrated
/// with 2×2×2 Gauss points and scales linearly with `element_size`.
pub fn element_stiffness(kind: ElementKind, nu: f64, element_size: f64) -> ElementMatrix {
    match kind {
        ElementKind::Quad4 => quad4_stiffness(nu),
        ElementKind::Hex8 => hex8_stiffness(nu, element_size),
    }
}

fn quad4_stiffness(nu: f64) -> ElementMatrix {
    let k = [
        0.5 - nu / 6.0,
        0.125 + nu / 8.0,
        -0.25 - nu / 12.0,
        -0.125 + 3.0 * nu / 8.0,
        -0.25 + nu / 12.0,
        -0.125 - nu / 8.0,
        nu / 6.0,
        0.125 - 3.0 * nu / 8.0,
    ];
    const PATTERN: [[usize; 8]; 8] = [
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ];
    let scale = 1.0 / (1.0 - nu * nu);
    let data = PATTERN
        .iter()
        .flat_map(|row| row.iter().map(move |&i| scale * k[i]))
        .collect();
    ElementMatrix { n: 8, data }
}

const HEX_REF: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

const QUAD_REF: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

/// Isotropic constitutive matrix: plane stress (3×3) or 3D (6×6), row-major.
///
/// Shear strains are engineering strains; the component order is
/// `xx, yy, xy` in 2D and `xx, yy, zz, yz, xz, xy` in 3D.
pub fn elasticity_matrix(kind: ElementKind, e: f64, nu: f64) -> Vec<f64> {
    match kind {
        ElementKind::Quad4 => {
            let c = e / (1.0 - nu * nu);
            vec![c, c * nu, 0.0, c * nu, c, 0.0, 0.0, 0.0, c * (1.0 - nu) / 2.0]
        }
        ElementKind::Hex8 => {
            let c = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
            let mut d = vec![0.0; 36];
            for i in 0..3 {
                for j in 0..3 {
                    d[i * 6 + j] = if i == j { c * (1.0 - nu) } else { c * nu };
                }
                d[(i + 3) * 6 + (i + 3)] = c * (1.0 - 2.0 * nu) / 2.0;
            }
            d
        }
    }
}

/// Strain-displacement matrix evaluated at reference coordinates `xi`
/// (row-major, `stress_components × dofs`).
pub fn strain_displacement(kind: ElementKind, element_size: f64, xi: &[f64]) -> Vec<f64> {
    let inv_j = 2.0 / element_size;
    match kind {
        ElementKind::Quad4 => {
            let mut b = vec![0.0; 3 * 8];
            for (a, node) in QUAD_REF.iter().enumerate() {
                let dx = 0.25 * node[0] * (1.0 + xi[1] * node[1]) * inv_j;
                let dy = 0.25 * node[1] * (1.0 + xi[0] * node[0]) * inv_j;
                b[2 * a] = dx;
                b[8 + 2 * a + 1] = dy;
                b[16 + 2 * a] = dy;
                b[16 + 2 * a + 1] = dx;
            }
            b
        }
        ElementKind::Hex8 => {
            let mut b = vec![0.0; 6 * 24];
            for (a, node) in HEX_REF.iter().enumerate() {
                let dx = 0.125 * node[0] * (1.0 + xi[1] * node[1]) * (1.0 + xi[2] * node[2]) * inv_j;
                let dy = 0.125 * node[1] * (1.0 + xi[0] * node[0]) * (1.0 + xi[2] * node[2]) * inv_j;
                let dz = 0.125 * node[2] * (1.0 + xi[0] * node[0]) * (1.0 + xi[1] * node[1]) * inv_j;
                let c = 3 * a;
                b[c] = dx;
                b[24 + c + 1] = dy;
                b[48 + c + 2] = dz;
                b[72 + c + 1] = dz;
                b[72 + c + 2] = dy;
                b[96 + c] = dz;
                b[96 + c + 2] = dx;
                b[120 + c] = dy;
                b[120 + c + 1] = dx;
            }
            b
        }
    }
}

fn hex8_stiffness(nu: f64, h: f64) -> ElementMatrix {
    let d = elasticity_matrix(ElementKind::Hex8, 1.0, nu);
    let g = 1.0 / 3f64.sqrt();
    let det_j = (h / 2.0).powi(3);
    let mut k = ElementMatrix::zeros(24);
    for &a in &[-g, g] {
        for &b in &[-g, g] {
            for &c in &[-g, g] {
                let bm = strain_displacement(ElementKind::Hex8, h, &[a, b, c]);
                // db = D · B (6×24)
                let mut db = vec![0.0; 6 * 24];
                for i in 0..6 {
                    for j in 0..24 {
                        db[i * 24 + j] = (0..6).map(|m| d[i * 6 + m] * bm[m * 24 + j]).sum();
                    }
                }
                for i in 0..24 {
                    for j in 0..24 {
                        let v: f64 = (0..6).map(|m| bm[m * 24 + i] * db[m * 24 + j]).sum();
                        k.data[i * 24 + j] += v * det_j;
                    }
                }
            }
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_asym(k: &ElementMatrix) -> f64 {
        let n = k.size();
        let mut m: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                m = m.max((k.get(i, j) - k.get(j, i)).abs());
            }
        }
        m
    }

    #[test]
    fn symmetric() {
        assert!(max_asym(&element_stiffness(ElementKind::Quad4, 0.3, 1.0)) < 1e-12);
        assert!(max_asym(&element_stiffness(ElementKind::Hex8, 0.3, 1.0)) < 1e-12);
    }

    #[test]
    fn rigid_translations_in_null_space() {
        for kind in [ElementKind::Quad4, ElementKind::Hex8] {
            let k = element_stiffness(kind, 0.3, 1.0);
            let dim = if kind == ElementKind::Hex8 { 3 } else { 2 };
            for axis in 0..dim {
                let u: Vec<f64> = (0..kind.dofs())
                    .map(|i| if i % dim == axis { 1.0 } else { 0.0 })
                    .collect();
                let ku = k.mul_vec(&u);
                assert!(ku.iter().all(|v| v.abs() < 1e-10), "{kind:?} axis {axis}");
            }
        }
    }

    #[test]
    fn rigid_rotation_in_null_space_2d() {
        let k = element_stiffness(ElementKind::Quad4, 0.3, 1.0);
        // small rotation about the element center: u = -y, v = x
        let mut u = vec![0.0; 8];
        for (a, n) in QUAD_REF.iter().enumerate() {
            u[2 * a] = -n[1];
            u[2 * a + 1] = n[0];
        }
        assert!(k.mul_vec(&u).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn hex_scales_with_edge_length() {
        let k1 = element_stiffness(ElementKind::Hex8, 0.3, 1.0);
        let k2 = element_stiffness(ElementKind::Hex8, 0.3, 2.0);
        for (a, b) in k1.as_slice().iter().zip(k2.as_slice()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }
}
