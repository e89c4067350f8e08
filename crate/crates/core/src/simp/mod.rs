//! SIMP compliance minimization: sensitivities, filtering, the
//! optimality-criteria update and the outer loop.

mod filter;
mod oc;

pub use filter::{build_filter_weights, chain_rule_backfilter, density_filter, sensitivity_filter, FilterWeights};
pub use oc::{oc_candidate, oc_update, oc_update_with, OcSettings, OcStep};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    element_energies, element_stiffness, BoundaryConditions, ElementKind, EquilibriumSolver, GridMesh, Material,
    SolverKind, StiffnessAssembler,
};
use crate::problems::ProblemInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Sensitivity,
    Density,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpSettings {
    pub volfrac: f64,
    pub r_min: f64,
    pub move_limit: f64,
    pub eta: f64,
    pub gamma: f64,
    pub max_iters: usize,
    /// Stop when `max |Δx|` drops below this.
    pub change_tol: f64,
    pub filter: FilterKind,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub lambda_rel_tol: f64,
    pub volume_tol: f64,
    pub material: Material,
}

impl Default for SimpSettings {
    fn default() -> Self {
        let oc = OcSettings::default();
        SimpSettings {
            volfrac: 0.5,
            r_min: 1.5,
            move_limit: oc.move_limit,
            eta: oc.eta,
            gamma: 1e-3,
            max_iters: 200,
            change_tol: 0.01,
            filter: FilterKind::Sensitivity,
            lambda_lo: oc.lambda_lo,
            lambda_hi: oc.lambda_hi,
            lambda_rel_tol: oc.lambda_rel_tol,
            volume_tol: oc.volume_tol,
            material: Material::default(),
        }
    }
}

impl SimpSettings {
    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        if !(self.volfrac > 0.0 && self.volfrac < 1.0) {
            return Err(Error::invalid(format!(
                "volume fraction must lie in (0, 1), got {}",
                self.volfrac
            )));
        }
        if !(self.r_min > 0.0) {
            return Err(Error::invalid(format!("r_min must be positive, got {}", self.r_min)));
        }
        if !(self.move_limit > 0.0) {
            return Err(Error::invalid("move limit must be positive"));
        }
        if !(self.eta > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::invalid("eta and gamma must be positive"));
        }
        if !(self.lambda_lo > 0.0 && self.lambda_lo < self.lambda_hi) {
            return Err(Error::invalid("bisection bracket must satisfy 0 < lo < hi"));
        }
        Ok(())
    }

    pub fn oc_settings(&self) -> OcSettings {
        OcSettings {
            volfrac: self.volfrac,
            move_limit: self.move_limit,
            eta: self.eta,
            lambda_lo: self.lambda_lo,
            lambda_hi: self.lambda_hi,
            lambda_rel_tol: self.lambda_rel_tol,
            volume_tol: self.volume_tol,
        }
    }
}

/// `∂c/∂x_e = −p x_e^(p−1) (E0 − Emin) u_eᵀ k0 u_e`.
pub fn compliance_sensitivity(x: &[f64], u: &[f64], material: &Material, mesh: &GridMesh) -> Vec<f64> {
    let k0 = element_stiffness(
        ElementKind::for_rank(mesh.spatial_rank()),
        material.nu,
        mesh.element_size(),
    );
    sensitivities_from_energies(x, &element_energies(mesh, &k0, u), material)
}

fn sensitivities_from_energies(x: &[f64], energies: &[f64], material: &Material) -> Vec<f64> {
    x.iter()
        .zip(energies)
        .map(|(&xe, &ce)| -material.modulus_derivative(xe) * ce)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub compliance: f64,
    /// Mean physical density after the update.
    pub volume: f64,
    pub change: f64,
    pub relative_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    /// Physical densities (filtered when the density filter is active).
    pub densities: Vec<f64>,
    /// Design variables before any density filtering.
    pub design: Vec<f64>,
    /// Displacements solved on `densities`.
    pub displacement: Vec<f64>,
    /// Compliance of `densities`.
    pub compliance: f64,
    pub history: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
}

impl OptimizationResult {
    pub fn compliance_history(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.compliance).collect()
    }

    pub fn volume(&self) -> f64 {
        mean(&self.densities)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Pins<'a> {
    solid: &'a [bool],
    void: &'a [bool],
}

impl Pins<'_> {
    fn apply(&self, x: &mut [f64]) {
        for ((xe, &s), &v) in x.iter_mut().zip(self.solid).zip(self.void) {
            if s {
                *xe = 1.0;
            } else if v {
                *xe = 0.0;
            }
        }
    }

    fn count(&self) -> (usize, usize) {
        (
            self.solid.iter().filter(|&&s| s).count(),
            self.void.iter().filter(|&&v| v).count(),
        )
    }
}

/// Runs SIMP on `instance` with `settings` (which override the instance
/// defaults).
pub fn optimize(instance: &ProblemInstance, settings: &SimpSettings) -> Result<OptimizationResult> {
    settings.validate()?;
    let mesh = &instance.mesh;
    let n = mesh.num_elements();
    if instance.passive_solid.len() != n || instance.passive_void.len() != n {
        return Err(Error::invalid("passive masks do not match the mesh"));
    }
    if instance.bcs.fixed_dofs().is_empty() {
        return Err(Error::invalid("problem has no constrained dofs"));
    }
    let material = settings.material;
    let pins = Pins {
        solid: &instance.passive_solid,
        void: &instance.passive_void,
    };
    let (n_solid, n_void) = pins.count();
    let n_active = n - n_solid - n_void;
    if n_active == 0 {
        return Err(Error::invalid("every element is passive"));
    }
    let start = (settings.volfrac * n as f64 - n_solid as f64) / n_active as f64;
    if !(0.0..=1.0).contains(&start) {
        return Err(Error::invalid(format!(
            "volume fraction {} unreachable with {n_solid} solid and {n_void} void passive elements",
            settings.volfrac
        )));
    }

    let weights = build_filter_weights(mesh, settings.r_min)?;
    let assembler = StiffnessAssembler::new(mesh, material.nu);
    let physical = |x: &[f64]| -> Vec<f64> {
        match settings.filter {
            FilterKind::Sensitivity => x.to_vec(),
            FilterKind::Density => {
                let mut xt = density_filter(x, &weights);
                pins.apply(&mut xt);
                xt
            }
        }
    };

    let mut x = vec![start; n];
    pins.apply(&mut x);
    let mut x_phys = physical(&x);

    let k = assembler.assemble(&x_phys, &material)?;
    let solver = EquilibriumSolver::new(&k, &instance.bcs, SolverKind::Auto)?;
    let oc = settings.oc_settings();
    let dv_design = match settings.filter {
        FilterKind::Sensitivity => vec![1.0; n],
        FilterKind::Density => chain_rule_backfilter(&vec![1.0; n], &weights),
    };

    let mut history = Vec::new();
    let mut converged = false;
    let mut u: Option<Vec<f64>> = None;
    let mut k = Some(k);
    for iter in 0..settings.max_iters {
        let kmat = match k.take() {
            Some(m) => m,
            None => assembler.assemble(&x_phys, &material)?,
        };
        let sol = solve_at(&solver, &kmat, &instance.bcs, u.as_deref(), iter)?;
        let energies = element_energies(mesh, assembler.element_matrix(), &sol.values);
        let compliance: f64 = x_phys
            .iter()
            .zip(&energies)
            .map(|(&xe, &ce)| material.modulus(xe) * ce)
            .sum();
        let dc_phys = sensitivities_from_energies(&x_phys, &energies, &material);
        let dc = match settings.filter {
            FilterKind::Sensitivity => sensitivity_filter(&dc_phys, &x, &weights, settings.gamma),
            FilterKind::Density => chain_rule_backfilter(&dc_phys, &weights),
        };
        let step = oc_update_with(&x, &dc, &dv_design, &oc, |cand| {
            let mut c = cand.to_vec();
            pins.apply(&mut c);
            mean(&physical(&c))
        })
        .map_err(|e| match e {
            Error::OptimizerFailure { message, .. } => Error::OptimizerFailure {
                iteration: iter,
                message,
            },
            other => other,
        })?;
        let mut x_new = step.x_new;
        pins.apply(&mut x_new);
        let change = x_new.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        x = x_new;
        x_phys = physical(&x);
        history.push(IterationRecord {
            compliance,
            volume: mean(&x_phys),
            change,
            relative_residual: sol.residual,
        });
        log::debug!(
            "iter {iter:3} c={compliance:.5} vol={:.5} change={change:.4}",
            mean(&x_phys)
        );
        u = Some(sol.values);
        if !compliance.is_finite() {
            return Err(Error::OptimizerFailure {
                iteration: iter,
                message: format!("compliance became {compliance}"),
            });
        }
        if change < settings.change_tol {
            converged = true;
            break;
        }
    }

    let kmat = assembler.assemble(&x_phys, &material)?;
    let iterations = history.len();
    let sol = solve_at(&solver, &kmat, &instance.bcs, u.as_deref(), iterations)?;
    let energies = element_energies(mesh, assembler.element_matrix(), &sol.values);
    let compliance = x_phys
        .iter()
        .zip(&energies)
        .map(|(&xe, &ce)| material.modulus(xe) * ce)
        .sum();
    Ok(OptimizationResult {
        densities: x_phys,
        design: x,
        displacement: sol.values,
        compliance,
        history,
        iterations,
        converged,
    })
}

/// Runs [`optimize`] with the instance's own settings.
pub fn optimize_instance(instance: &ProblemInstance) -> Result<OptimizationResult> {
    optimize(instance, &instance.settings)
}

struct Solved {
    values: Vec<f64>,
    residual: f64,
}

fn solve_at(
    solver: &EquilibriumSolver,
    k: &crate::fem::SparseSymmetricMatrix,
    bcs: &BoundaryConditions,
    guess: Option<&[f64]>,
    iteration: usize,
) -> Result<Solved> {
    match solver.solve_with_guess(k, bcs, guess) {
        Ok(s) => Ok(Solved {
            values: s.displacement.values,
            residual: s.relative_residual,
        }),
        Err(Error::SolverFailure(msg)) => Err(Error::SolverFailure(format!("iteration {iteration}: {msg}"))),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{build_instance, Family, FamilyConfig, ParamVector};

    #[test]
    fn zero_iterations_returns_uniform_start() {
        let cfg = FamilyConfig::mbb_with_grid(12, 4);
        let inst = build_instance(&cfg, &ParamVector::new(Family::Mbb, vec![30.0, 20.0, 0.0])).unwrap();
        let settings = SimpSettings {
            max_iters: 0,
            ..cfg.simp.clone()
        };
        let res = optimize(&inst, &settings).unwrap();
        assert!(res.densities.iter().all(|&x| x == 0.5));
        assert_eq!(res.iterations, 0);
        assert!(!res.converged);
        assert!(res.compliance > 0.0);
    }

    #[test]
    fn sensitivity_vanishes_at_zero_density_and_zero_displacement() {
        let mesh = GridMesh::new(&[2, 1], 1.0).unwrap();
        let mut u = vec![0.0; mesh.num_dofs()];
        u[mesh.element_dofs(1)[2]] = 0.3;
        let dc = compliance_sensitivity(&[0.0, 0.6], &u, &Material::default(), &mesh);
        assert_eq!(dc[0], 0.0);
        assert!(dc[1] < 0.0);
        let dc = compliance_sensitivity(&[0.7, 0.6], &vec![0.0; mesh.num_dofs()], &Material::default(), &mesh);
        assert!(dc.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn small_mbb_respects_volume_and_bounds() {
        let cfg = FamilyConfig::mbb_with_grid(30, 10);
        let inst = build_instance(&cfg, &ParamVector::new(Family::Mbb, vec![30.0, 20.0, 0.0])).unwrap();
        let settings = SimpSettings {
            max_iters: 30,
            ..cfg.simp.clone()
        };
        let res = optimize(&inst, &settings).unwrap();
        assert!((res.volume() - 0.5).abs() <= 1e-4);
        assert!(res.densities.iter().all(|&x| (0.0..=1.0).contains(&x)));
        for r in &res.history {
            assert!((r.volume - 0.5).abs() <= 1e-4);
            assert!(r.change <= 0.2 + 1e-12);
        }
        let first = res.history[0].compliance;
        assert!(res.compliance < first);
    }

    #[test]
    fn rejects_unconstrained_problem() {
        let cfg = FamilyConfig::mbb_with_grid(4, 2);
        let mut inst = build_instance(&cfg, &ParamVector::new(Family::Mbb, vec![30.0, 20.0, 0.0])).unwrap();
        inst.bcs = BoundaryConditions::new();
        inst.bcs.add_load(3, 1.0);
        assert!(optimize(&inst, &cfg.simp).is_err());
    }
}
