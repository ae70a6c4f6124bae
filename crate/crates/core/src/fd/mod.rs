//! Finite-volume reference solver: assembly, sparse storage and restarted GMRES.

mod assemble;
mod gmres;
mod sparse;

pub use assemble::{
    assemble, relative_residual, resolve_power, Assembler, ResolvedPower, SparseSystem,
};
pub use gmres::{
    gmres, gmres_raw, jacobi_precondition, reference_solve, GmresParams, IdentityPreconditioner,
    Ilu0, Jacobi, Preconditioner, SolveStats, DENSE_LIMIT,
};
pub use sparse::{dense_lu_solve, CsrMatrix};
