//! Simplicial meshes, P1 spaces, assembly and sparse direct solves.

mod assembly;
mod field;
pub mod geometry;
mod mesh;
pub mod quadrature;
mod sparse;

pub use assembly::{
    assemble, assemble_vector, integrate_boundary, local_dofs, mass_kernel, opposite_vertex,
    stiffness_kernel, FacetPoint, LocalSystem,
};
pub use field::Field;
pub use mesh::{build_structured_mesh, BoundaryFacet, Mesh, SurfaceTag};
pub use sparse::{
    apply_dirichlet, dot, norm, solve_linear, DirichletBC, Factorization, SparseOperator,
    SparsityPattern,
};
