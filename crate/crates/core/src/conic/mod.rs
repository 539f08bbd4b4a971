//! Conic programs over rotated second-order cones and the builders for every
//! operating constraint group.

pub mod block;
pub mod program;
pub mod robust;
pub mod solve;

pub use block::{BlockLayout, BlockLimits, BlockVars, Lim, Pcc, PrevSoc};
pub use program::{ConicProgram, Constraint, ConstraintId, RotatedCone, Sense, Var};
pub use robust::{build_robust_program, ConeGap, PrevState, RobustProgram, RobustSpec, WMode};
pub use solve::{solve, Solution, Status, Tolerances};
