use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::Material;
use crate::simp::{FilterKind, SimpSettings};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// 2D MBB half-beam with a single parametrized point load.
    Mbb,
    /// 3D half-bridge with two deck loads and two movable supports.
    Bridge,
}

impl Family {
    pub fn code(self) -> u8 {
        match self {
            Family::Mbb => 1,
            Family::Bridge => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Family::Mbb),
            2 => Some(Family::Bridge),
            _ => None,
        }
    }

    pub fn n_par(self) -> usize {
        self.param_names().len()
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::Mbb => &["x_F", "y_F", "theta"],
            Family::Bridge => &["x_F1", "x_F2", "x_S1", "x_S2"],
        }
    }

    /// Parameter box in physical units (θ in degrees).
    pub fn bounds(self) -> &'static [(f64, f64)] {
        match self {
            Family::Mbb => &[(0.0, 60.0), (0.0, 20.0), (0.0, 90.0)],
            Family::Bridge => &[(0.0, 60.0), (0.0, 60.0), (0.0, 15.0), (45.0, 60.0)],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Mbb => "mbb",
            Family::Bridge => "bridge",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mbb" => Ok(Family::Mbb),
            "bridge" => Ok(Family::Bridge),
            other => Err(Error::invalid(format!("unknown problem family '{other}'"))),
        }
    }
}

/// Direction convention for the MBB load angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaConvention {
    /// θ = 0 points straight down, θ = 90 points along +x.
    FromDownTowardPlusX,
    /// θ = 0 points along +x, θ = 90 points straight down.
    FromPlusXTowardDown,
}

impl ThetaConvention {
    /// Unit force components `(fx, fy)` for an angle in degrees.
    pub fn direction(self, theta_deg: f64) -> (f64, f64) {
        let t = theta_deg.to_radians();
        match self {
            ThetaConvention::FromDownTowardPlusX => (t.sin(), -t.cos()),
            ThetaConvention::FromPlusXTowardDown => (t.cos(), -t.sin()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbbGeometry {
    pub theta_convention: ThetaConvention,
}

impl Default for MbbGeometry {
    fn default() -> Self {
        MbbGeometry {
            theta_convention: ThetaConvention::FromDownTowardPlusX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeGeometry {
    /// Element row (y index) forming the solid deck.
    pub deck_row: usize,
    /// Half-open element column range `[start, end)` of the void under the deck.
    pub void_cols: [usize; 2],
    /// Half-open element row range of the void.
    pub void_rows: [usize; 2],
    /// Constrained axes at each support node line, e.g. "xyz".
    pub support_dofs: String,
}

impl Default for BridgeGeometry {
    fn default() -> Self {
        BridgeGeometry {
            deck_row: 10,
            void_cols: [15, 45],
            void_rows: [0, 10],
            support_dofs: "xyz".to_string(),
        }
    }
}

impl BridgeGeometry {
    pub fn support_axes(&self) -> Result<Vec<usize>> {
        let mut axes: Vec<usize> = self
            .support_dofs
            .chars()
            .map(|c| match c {
                'x' => Ok(0),
                'y' => Ok(1),
                'z' => Ok(2),
                other => Err(Error::Config(format!("unknown support axis '{other}'"))),
            })
            .collect::<Result<_>>()?;
        axes.sort_unstable();
        axes.dedup();
        if axes.is_empty() {
            return Err(Error::Config("support_dofs must name at least one axis".into()));
        }
        Ok(axes)
    }
}

/// Everything that fixes the geometry and optimizer setup of a family.
///
/// Serialized as TOML; its SHA-256 digest is the geometry hash recorded
/// in datasets and model bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyConfig {
    pub version: u32,
    pub family: Family,
    pub grid: Vec<usize>,
    pub element_size: f64,
    pub simp: SimpSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mbb: Option<MbbGeometry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bridge: Option<BridgeGeometry>,
}

impl FamilyConfig {
    /// Full-size MBB half-beam: 120×40 elements over a 60×20 domain.
    pub fn mbb() -> Self {
        Self::mbb_with_grid(120, 40)
    }

    /// MBB on a coarser or finer grid covering the same 60×20 domain.
    pub fn mbb_with_grid(nelx: usize, nely: usize) -> Self {
        FamilyConfig {
            version: CONFIG_VERSION,
            family: Family::Mbb,
            grid: vec![nelx, nely],
            element_size: 60.0 / nelx as f64,
            simp: SimpSettings {
                volfrac: 0.5,
                r_min: 1.5,
                filter: FilterKind::Sensitivity,
                ..SimpSettings::default()
            },
            mbb: Some(MbbGeometry::default()),
            bridge: None,
        }
    }

    /// Full-size half-bridge: 60×20×4 unit elements.
    pub fn bridge() -> Self {
        FamilyConfig {
            version: CONFIG_VERSION,
            family: Family::Bridge,
            grid: vec![60, 20, 4],
            element_size: 1.0,
            simp: SimpSettings {
                volfrac: 0.12,
                r_min: 3f64.sqrt(),
                filter: FilterKind::Density,
                ..SimpSettings::default()
            },
            mbb: None,
            bridge: Some(BridgeGeometry::default()),
        }
    }

    /// Half-bridge at half resolution (30×10×2 elements of edge 2).
    ///
    /// The coarse deck row is twice as thick, and density filtering spreads
    /// it into neighboring rows, so the full-resolution fraction 0.12 sits
    /// below the reachable minimum; this variant uses 0.2.
    pub fn bridge_reduced() -> Self {
        let mut cfg = Self::bridge();
        cfg.simp.volfrac = 0.2;
        cfg.grid = vec![30, 10, 2];
        cfg.element_size = 2.0;
        cfg.bridge = Some(BridgeGeometry {
            deck_row: 5,
            void_cols: [8, 22],
            void_rows: [0, 5],
            support_dofs: "xyz".to_string(),
        });
        cfg
    }

    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Mbb => Self::mbb(),
            Family::Bridge => Self::bridge(),
        }
    }

    pub fn material(&self) -> Material {
        self.simp.material
    }

    pub fn num_elements(&self) -> usize {
        self.grid.iter().product()
    }

    /// Grid dims padded to three axes (unused axis = 1).
    pub fn dims3(&self) -> [usize; 3] {
        let mut d = [1usize; 3];
        d[..self.grid.len()].copy_from_slice(&self.grid);
        d
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let rank = match self.family {
            Family::Mbb => 2,
            Family::Bridge => 3,
        };
        if self.grid.len() != rank || self.grid.contains(&0) {
            return Err(Error::Config(format!(
                "{} needs a {rank}-axis grid with positive counts, got {:?}",
                self.family, self.grid
            )));
        }
        if !(self.element_size > 0.0) {
            return Err(Error::Config("element_size must be positive".into()));
        }
        self.simp.validate()?;
        match self.family {
            Family::Mbb => {
                if self.mbb.is_none() {
                    return Err(Error::Config("mbb family requires an [mbb] table".into()));
                }
            }
            Family::Bridge => {
                let b = self
                    .bridge
                    .as_ref()
                    .ok_or_else(|| Error::Config("bridge family requires a [bridge] table".into()))?;
                b.support_axes()?;
                let [nx, ny, _] = self.dims3();
                if b.deck_row + 1 > ny || b.void_cols[1] > nx || b.void_rows[1] > ny {
                    return Err(Error::Config("bridge geometry exceeds the grid".into()));
                }
                if b.deck_row >= b.void_rows[0] && b.deck_row < b.void_rows[1] {
                    return Err(Error::Config("deck row overlaps the void region".into()));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("family config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: FamilyConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid family config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    /// SHA-256 over the canonical TOML rendering.
    pub fn geometry_hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_toml().as_bytes()).into()
    }
}
