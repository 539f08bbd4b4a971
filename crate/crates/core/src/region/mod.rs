//! Per-period feasible power-transfer regions and their time-coupled envelope.

pub mod envelope;
pub mod explore;
pub mod hull;

pub use envelope::{
    add_envelope_constraints, build_envelope, envelope_program, membership, EnvelopeVars, MembershipCertificate,
    RegionEnvelope,
};
pub use explore::{
    expand_facets, explore_all, explore_period, initial_bounds, period_program, support_search, ExploreOptions,
    PeriodRegion, VertexSolution, DEFAULT_MAX_ITER, DEFAULT_TOL_AREA, TOL_VERTEX_PU,
};
pub use hull::{brute_force_hull, convex_hull_2d, Polytope2D};
