//! Regular-grid finite elements: meshes, element matrices, SIMP-weighted
//! assembly and the equilibrium solve.

mod assembly;
mod element;
mod mesh;
mod solver;

pub use assembly::{
    assemble_stiffness, element_compliance, element_energies, BoundaryConditions, ComplianceBreakdown, Material,
    SparseSymmetricMatrix, StiffnessAssembler,
};
pub use element::{elasticity_matrix, element_stiffness, strain_displacement, ElementKind, ElementMatrix};
pub use mesh::GridMesh;
pub use solver::{
    solve_equilibrium, DisplacementField, EquilibriumSolution, EquilibriumSolver, SolverKind, DIRECT_SOLVE_LIMIT,
    RESIDUAL_TOLERANCE,
};
