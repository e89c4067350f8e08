//! Parametric problem families and sampling of their parameter boxes.

mod config;
mod lhs;

pub use config::{BridgeGeometry, Family, FamilyConfig, MbbGeometry, ThetaConvention, CONFIG_VERSION};
pub use lhs::{latin_hypercube, sample_params};

use crate::error::{Error, Result};
use crate::fem::{BoundaryConditions, GridMesh};
use crate::simp::SimpSettings;

/// Design parameters `p` for one family member.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub family: Family,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn new(family: Family, values: Vec<f64>) -> Self {
        ParamVector { family, values }
    }

    /// Checks length and the closed parameter box of the family.
    pub fn validate(&self) -> Result<()> {
        let bounds = self.family.bounds();
        if self.values.len() != bounds.len() {
            return Err(Error::invalid(format!(
                "{} expects {} parameters, got {}",
                self.family,
                bounds.len(),
                self.values.len()
            )));
        }
        for ((v, &(lo, hi)), name) in self.values.iter().zip(bounds).zip(self.family.param_names()) {
            if !(v.is_finite() && *v >= lo && *v <= hi) {
                return Err(Error::invalid(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// A fully discretized optimization problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub family: Family,
    pub params: ParamVector,
    pub mesh: GridMesh,
    pub bcs: BoundaryConditions,
    pub passive_solid: Vec<bool>,
    pub passive_void: Vec<bool>,
    pub settings: SimpSettings,
}

impl ProblemInstance {
    pub fn passive_count(&self) -> usize {
        self.passive_solid
            .iter()
            .zip(&self.passive_void)
            .filter(|(s, v)| **s || **v)
            .count()
    }
}

/// Node index along one axis nearest to physical coordinate `coord`;
/// ties go to the even index.
fn snap(coord: f64, element_size: f64, max_index: usize) -> usize {
    let i = (coord / element_size).round_ties_even();
    (i.max(0.0) as usize).min(max_index)
}

pub fn build_instance(cfg: &FamilyConfig, params: &ParamVector) -> Result<ProblemInstance> {
    if params.family != cfg.family {
        return Err(Error::invalid(format!(
            "parameters for {} given to a {} config",
            params.family, cfg.family
        )));
    }
    match cfg.family {
        Family::Mbb => mbb_instance(cfg, params),
        Family::Bridge => bridge_instance(cfg, params),
    }
}

/// MBB half-beam: left edge fixed in x, bottom-right node fixed in y, one
/// unit load at the node nearest `(x_F, y_F)`.
pub fn mbb_instance(cfg: &FamilyConfig, params: &ParamVector) -> Result<ProblemInstance> {
    cfg.validate()?;
    params.validate()?;
    if cfg.family != Family::Mbb {
        return Err(Error::invalid("mbb_instance needs an mbb config"));
    }
    let geom = cfg.mbb.clone().unwrap_or_default();
    let mesh = GridMesh::new(&cfg.grid, cfg.element_size)?;
    let [nx, ny, _] = mesh.dims();
    let mut bcs = BoundaryConditions::new();
    for j in 0..=ny {
        bcs.fix(2 * mesh.node_index(0, j, 0));
    }
    bcs.fix(2 * mesh.node_index(nx, 0, 0) + 1);

    let (xf, yf, theta) = (params.values[0], params.values[1], params.values[2]);
    let node = mesh.node_index(snap(xf, cfg.element_size, nx), snap(yf, cfg.element_size, ny), 0);
    let (fx, fy) = geom.theta_convention.direction(theta);
    bcs.add_load(2 * node, fx);
    bcs.add_load(2 * node + 1, fy);

    let n = mesh.num_elements();
    Ok(ProblemInstance {
        family: Family::Mbb,
        params: params.clone(),
        mesh,
        bcs,
        passive_solid: vec![false; n],
        passive_void: vec![false; n],
        settings: cfg.simp.clone(),
    })
}

/// Half-bridge: solid deck row, void block under the deck, symmetry plane
/// at z = 0, two support node lines on the ground and two downward unit
/// loads on the deck top, each spread evenly over its z node line.
pub fn bridge_instance(cfg: &FamilyConfig, params: &ParamVector) -> Result<ProblemInstance> {
    cfg.validate()?;
    params.validate()?;
    if cfg.family != Family::Bridge {
        return Err(Error::invalid("bridge_instance needs a bridge config"));
    }
    let geom = cfg.bridge.clone().unwrap_or_default();
    let mesh = GridMesh::new(&cfg.grid, cfg.element_size)?;
    let [nx, ny, nz] = mesh.dims();
    let h = cfg.element_size;

    let mut passive_solid = vec![false; mesh.num_elements()];
    let mut passive_void = vec![false; mesh.num_elements()];
    for e in 0..mesh.num_elements() {
        let [i, j, _] = mesh.element_coords(e);
        if j == geom.deck_row {
            passive_solid[e] = true;
        } else if (geom.void_cols[0]..geom.void_cols[1]).contains(&i)
            && (geom.void_rows[0]..geom.void_rows[1]).contains(&j)
        {
            passive_void[e] = true;
        }
    }

    let mut bcs = BoundaryConditions::new();
    for j in 0..=ny {
        for i in 0..=nx {
            bcs.fix(3 * mesh.node_index(i, j, 0) + 2);
        }
    }
    let axes = geom.support_axes()?;
    for &xs in &params.values[2..4] {
        let i = snap(xs, h, nx);
        for k in 0..=nz {
            let node = mesh.node_index(i, 0, k);
            for &a in &axes {
                bcs.fix(3 * node + a);
            }
        }
    }
    let deck_top = geom.deck_row + 1;
    let share = 1.0 / (nz + 1) as f64;
    for &xf in &params.values[0..2] {
        let i = snap(xf, h, nx);
        for k in 0..=nz {
            bcs.add_load(3 * mesh.node_index(i, deck_top, k) + 1, -share);
        }
    }

    Ok(ProblemInstance {
        family: Family::Bridge,
        params: params.clone(),
        mesh,
        bcs,
        passive_solid,
        passive_void,
        settings: cfg.simp.clone(),
    })
}

/// Reflects a half-bridge field across its z = 0 symmetry plane.
///
/// For a half field with `nz` layers the output has `2·nz` layers: the half
/// occupies layers `nz..2nz` and its mirror image layers `0..nz`, so output
/// layer `k` always equals layer `2nz − 1 − k`.
pub fn mirror_full_bridge<T: Copy>(half: &[T], dims: [usize; 3]) -> Result<Vec<T>> {
    let [nx, ny, nz] = dims;
    if half.len() != nx * ny * nz {
        return Err(Error::invalid(format!(
            "field of length {} does not match {nx}×{ny}×{nz}",
            half.len()
        )));
    }
    let layer = nx * ny;
    let mut out = Vec::with_capacity(2 * half.len());
    for k in (0..nz).rev() {
        out.extend_from_slice(&half[k * layer..(k + 1) * layer]);
    }
    out.extend_from_slice(half);
    Ok(out)
}

/// Inverse of [`mirror_full_bridge`]: returns the `z ≥ 0` half.
pub fn extract_half_bridge<T: Copy>(full: &[T], half_dims: [usize; 3]) -> Result<Vec<T>> {
    let [nx, ny, nz] = half_dims;
    if full.len() != 2 * nx * ny * nz {
        return Err(Error::invalid("mirrored field has the wrong length"));
    }
    Ok(full[nx * ny * nz..].to_vec())
}
