use crate::error::{Error, Result};

/// A regular grid of unit-aspect elements (Q4 in 2D, H8 in 3D).
///
/// Numbering is lexicographic with x fastest, then y, then z, for both
/// nodes and elements. Node `n` owns dofs `n * dof_per_node + axis`.
/// Element-local node order is counter-clockwise starting from the
/// lower-left corner (bottom face first in 3D).
#[derive(Debug, Clone, PartialEq)]
pub struct GridMesh {
    dims: [usize; 3],
    spatial_rank: usize,
    element_size: f64,
    edofs: Vec<usize>,
}

const Q4_CORNERS: [[usize; 3]; 4] = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]];
const H8_CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

impl GridMesh {
    /// Builds a 2D (`dims.len() == 2`) or 3D (`dims.len() == 3`) grid.
    pub fn new(dims: &[usize], element_size: f64) -> Result<Self> {
        if dims.len() != 2 && dims.len() != 3 {
            return Err(Error::invalid(format!(
                "grid must have 2 or 3 axes, got {}",
                dims.len()
            )));
        }
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(Error::invalid(format!("grid axis {axis} has zero elements")));
        }
        if !(element_size > 0.0 && element_size.is_finite()) {
            return Err(Error::invalid(format!(
                "element size must be positive, got {element_size}"
            )));
        }
        let mut full = [1usize; 3];
        full[..dims.len()].copy_from_slice(dims);
        let mut mesh = GridMesh {
            dims: full,
            spatial_rank: dims.len(),
            element_size,
            edofs: Vec::new(),
        };
        mesh.edofs = mesh.build_edofs();
        Ok(mesh)
    }

    fn build_edofs(&self) -> Vec<usize> {
        let ndpn = self.dof_per_node();
        let per_el = self.dofs_per_element();
        let mut edofs = Vec::with_capacity(self.num_elements() * per_el);
        let corners: &[[usize; 3]] = if self.is_3d() { &H8_CORNERS } else { &Q4_CORNERS };
        for e in 0..self.num_elements() {
            let [ix, iy, iz] = self.element_coords(e);
            for c in corners {
                let n = self.node_index(ix + c[0], iy + c[1], iz + c[2]);
                for d in 0..ndpn {
                    edofs.push(n * ndpn + d);
                }
            }
        }
        edofs
    }

    pub fn is_3d(&self) -> bool {
        self.spatial_rank == 3
    }

    pub fn spatial_rank(&self) -> usize {
        self.spatial_rank
    }

    /// Element counts per axis; the unused z axis of a 2D mesh reports 1.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Element counts for the axes actually in use.
    pub fn shape(&self) -> &[usize] {
        &self.dims[..self.spatial_rank]
    }

    pub fn element_size(&self) -> f64 {
        self.element_size
    }

    pub fn node_dims(&self) -> [usize; 3] {
        let [nx, ny, nz] = self.dims;
        if self.is_3d() {
            [nx + 1, ny + 1, nz + 1]
        } else {
            [nx + 1, ny + 1, 1]
        }
    }

    pub fn num_elements(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn num_nodes(&self) -> usize {
        self.node_dims().iter().product()
    }

    pub fn dof_per_node(&self) -> usize {
        self.spatial_rank
    }

    pub fn num_dofs(&self) -> usize {
        self.num_nodes() * self.dof_per_node()
    }

    pub fn nodes_per_element(&self) -> usize {
        if self.is_3d() {
            8
        } else {
            4
        }
    }

    pub fn dofs_per_element(&self) -> usize {
        self.nodes_per_element() * self.dof_per_node()
    }

    pub fn node_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let [nnx, nny, _] = self.node_dims();
        ix + nnx * (iy + nny * iz)
    }

    pub fn node_coords(&self, n: usize) -> [usize; 3] {
        let [nnx, nny, _] = self.node_dims();
        [n % nnx, (n / nnx) % nny, n / (nnx * nny)]
    }

    pub fn node_position(&self, n: usize) -> [f64; 3] {
        let c = self.node_coords(n);
        c.map(|i| i as f64 * self.element_size)
    }

    pub fn element_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    pub fn element_coords(&self, e: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [e % nx, (e / nx) % ny, e / (nx * ny)]
    }

    /// Element centroid in element-index units (centers sit at `i + 0.5`).
    pub fn element_center(&self, e: usize) -> [f64; 3] {
        self.element_coords(e).map(|i| i as f64 + 0.5)
    }

    pub fn element_dofs(&self, e: usize) -> &[usize] {
        let k = self.dofs_per_element();
        &self.edofs[e * k..(e + 1) * k]
    }

    pub fn element_nodes(&self, e: usize) -> Vec<usize> {
        let ndpn = self.dof_per_node();
        self.element_dofs(e).iter().step_by(ndpn).map(|d| d / ndpn).collect()
    }
}
