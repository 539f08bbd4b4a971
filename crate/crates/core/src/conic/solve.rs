use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use super::program::{ConicProgram, Sense};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub feas: f64,
    pub gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { feas: 1e-7, gap: 1e-7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalTrouble,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    /// Sensitivity of the optimal value to each constraint's right-hand side.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub primal_residual: f64,
    pub gap: f64,
    pub iterations: u32,
    pub detail: String,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    /// Converts a non-optimal status into the matching error for `stage`.
    pub fn require_optimal(self, stage: &str) -> Result<Solution> {
        match self.status {
            Status::Optimal => Ok(self),
            Status::Infeasible => Err(Error::Infeasible { stage: stage.into() }),
            Status::Unbounded => Err(Error::Unbounded { stage: stage.into() }),
            Status::NumericalTrouble => {
                Err(Error::Numerical { stage: stage.into(), detail: self.detail })
            }
        }
    }

    pub fn value(&self, v: super::Var) -> f64 {
        self.x[v.0]
    }
}

enum RowKind {
    Zero,
    Nonneg,
}

/// Solves `program` with Clarabel. Rows are ordered equalities, inequalities,
/// then one second-order cone per rotated cone.
pub fn solve(program: &ConicProgram, tol: &Tolerances) -> Solution {
    let n = program.n_vars();
    let mut rows: Vec<(Vec<(usize, f64)>, f64, RowKind)> = Vec::new();
    // Map from constraint index to (row, sign of dual sensitivity).
    let mut dual_map = vec![(0usize, 0.0f64); program.constraints().len()];

    for (ci, c) in program.constraints().iter().enumerate() {
        if c.sense == Sense::Eq {
            dual_map[ci] = (rows.len(), -1.0);
            rows.push((c.terms.iter().map(|(v, a)| (v.0, *a)).collect(), c.rhs, RowKind::Zero));
        }
    }
    for i in 0..n {
        let (lo, hi) = program.bounds(super::Var(i));
        if lo == hi {
            rows.push((vec![(i, 1.0)], lo, RowKind::Zero));
        }
    }
    let n_zero = rows.len();
    for (ci, c) in program.constraints().iter().enumerate() {
        match c.sense {
            Sense::Le => {
                dual_map[ci] = (rows.len(), -1.0);
                rows.push((c.terms.iter().map(|(v, a)| (v.0, *a)).collect(), c.rhs, RowKind::Nonneg));
            }
            Sense::Ge => {
                dual_map[ci] = (rows.len(), 1.0);
                rows.push((c.terms.iter().map(|(v, a)| (v.0, -*a)).collect(), -c.rhs, RowKind::Nonneg));
            }
            Sense::Eq => {}
        }
    }
    for i in 0..n {
        let (lo, hi) = program.bounds(super::Var(i));
        if lo == hi {
            continue;
        }
        if lo.is_finite() {
            rows.push((vec![(i, -1.0)], -lo, RowKind::Nonneg));
        }
        if hi.is_finite() {
            rows.push((vec![(i, 1.0)], hi, RowKind::Nonneg));
        }
    }
    let n_nonneg = rows.len() - n_zero;

    let mut cones = Vec::new();
    if n_zero > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_zero));
    }
    if n_nonneg > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_nonneg));
    }
    for k in program.cones() {
        // s = (u + w, u − w, 2 z) ∈ SOC, written as s = b − A x with b = 0.
        rows.push((vec![(k.u.0, -1.0), (k.w.0, -1.0)], 0.0, RowKind::Nonneg));
        rows.push((vec![(k.u.0, -1.0), (k.w.0, 1.0)], 0.0, RowKind::Nonneg));
        for z in &k.z {
            rows.push((vec![(z.0, -2.0)], 0.0, RowKind::Nonneg));
        }
        cones.push(SupportedConeT::SecondOrderConeT(2 + k.z.len()));
    }

    let m = rows.len();
    let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::with_capacity(m);
    for (r, (terms, rhs, _)) in rows.iter().enumerate() {
        for &(j, a) in terms {
            if a != 0.0 {
                ii.push(r);
                jj.push(j);
                vv.push(a);
            }
        }
        b.push(*rhs);
    }
    let a_mat = CscMatrix::new_from_triplets(m, n, ii, jj, vv);
    let p_mat = CscMatrix::<f64>::zeros((n, n));
    let mut q = vec![0.0; n];
    let (obj_terms, obj_const) = program.objective();
    for (v, c) in obj_terms {
        q[v.0] += c;
    }

    let mut last = None;
    for attempt in 0..SETTINGS_VARIANTS {
        let sol = run_clarabel(program, &p_mat, &q, &a_mat, &b, &cones, &dual_map, obj_const, tol, attempt);
        if sol.status != Status::NumericalTrouble {
            return sol;
        }
        log::debug!("solver attempt {attempt} ended with {}", sol.detail);
        last = Some(sol);
    }
    last.expect("at least one attempt")
}

const SETTINGS_VARIANTS: usize = 3;

#[allow(clippy::too_many_arguments)]
fn run_clarabel(
    program: &ConicProgram,
    p_mat: &CscMatrix<f64>,
    q: &[f64],
    a_mat: &CscMatrix<f64>,
    b: &[f64],
    cones: &[SupportedConeT<f64>],
    dual_map: &[(usize, f64)],
    obj_const: f64,
    tol: &Tolerances,
    attempt: usize,
) -> Solution {
    let n = program.n_vars();
    let mut builder = DefaultSettingsBuilder::default();
    builder
        .verbose(false)
        .tol_feas(tol.feas * 0.1)
        .tol_gap_abs(tol.gap * 0.1)
        .tol_gap_rel(tol.gap * 0.1)
        .max_iter(400);
    // Retries for degenerate programs: without equilibration, then with
    // stronger regularization and a shorter step.
    match attempt {
        0 => {}
        1 => {
            builder.equilibrate_enable(false);
        }
        _ => {
            builder
                .static_regularization_constant(1e-7)
                .max_step_fraction(0.9)
                .iterative_refinement_max_iter(50);
        }
    }
    let settings = builder.build().expect("static solver settings are valid");

    let mut solver = match DefaultSolver::new(p_mat, q, a_mat, b, cones, settings) {
        Ok(s) => s,
        Err(e) => {
            return Solution {
                status: Status::NumericalTrouble,
                x: vec![0.0; n],
                duals: vec![0.0; dual_map.len()],
                objective: f64::NAN,
                primal_residual: f64::INFINITY,
                gap: f64::INFINITY,
                iterations: 0,
                detail: format!("setup failed: {e}"),
            }
        }
    };
    solver.solve();
    let sol = &solver.solution;
    let x = sol.x.clone();
    let residual = program.max_violation(&x);
    let objective = sol.obj_val + obj_const;
    let gap = (sol.obj_val - sol.obj_val_dual).abs();
    let status = match sol.status {
        SolverStatus::Solved => Status::Optimal,
        SolverStatus::AlmostSolved
            if residual <= tol.feas * 10.0 && gap <= tol.gap * 10.0 * (1.0 + objective.abs()) =>
        {
            Status::Optimal
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Status::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => Status::Unbounded,
        _ => Status::NumericalTrouble,
    };
    let duals = dual_map.iter().map(|&(row, sign)| sign * sol.z[row]).collect();
    Solution {
        status,
        x,
        duals,
        objective,
        primal_residual: residual,
        gap,
        iterations: sol.iterations,
        detail: format!("{:?}", sol.status),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_x_above_three() {
        let mut p = ConicProgram::new();
        let x = p.free_var("x");
        p.add_ge("lb", vec![(x, 1.0)], 3.0);
        p.set_objective(vec![(x, 1.0)], 0.0);
        let s = solve(&p, &Tolerances::default());
        assert_eq!(s.status, Status::Optimal);
        assert!((s.value(x) - 3.0).abs() < 1e-7);
        // Raising the bound raises the optimum one-for-one.
        assert!((s.duals[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rotated_cone_forces_25() {
        let mut p = ConicProgram::new();
        let u = p.add_var("u", 1.0, 1.0);
        let l = p.free_var("l");
        let a = p.add_var("p", 3.0, 3.0);
        let b = p.add_var("q", 4.0, 4.0);
        p.add_rotated_cone(u, l, vec![a, b]);
        p.set_objective(vec![(l, 1.0)], 0.0);
        let s = solve(&p, &Tolerances::default());
        assert_eq!(s.status, Status::Optimal);
        assert!((s.value(l) - 25.0).abs() < 1e-6);
    }

    #[test]
    fn empty_box_is_infeasible() {
        let mut p = ConicProgram::new();
        let x = p.free_var("x");
        p.add_ge("lo", vec![(x, 1.0)], 1.0);
        p.add_le("hi", vec![(x, 1.0)], 0.0);
        p.set_objective(vec![(x, 1.0)], 0.0);
        assert_eq!(solve(&p, &Tolerances::default()).status, Status::Infeasible);
    }

    #[test]
    fn unbounded_below() {
        let mut p = ConicProgram::new();
        let x = p.free_var("x");
        p.add_le("hi", vec![(x, 1.0)], 0.0);
        p.set_objective(vec![(x, 1.0)], 0.0);
        assert_eq!(solve(&p, &Tolerances::default()).status, Status::Unbounded);
    }

    #[test]
    fn equality_dual_sign() {
        // min 2x s.t. x = 5: d obj / d rhs = 2.
        let mut p = ConicProgram::new();
        let x = p.free_var("x");
        p.add_eq("fix", vec![(x, 1.0)], 5.0);
        p.set_objective(vec![(x, 2.0)], 1.0);
        let s = solve(&p, &Tolerances::default());
        assert!((s.objective - 11.0).abs() < 1e-6);
        assert!((s.duals[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let mut p = ConicProgram::new();
        let u = p.add_var("u", 0.5, 2.0);
        let l = p.free_var("l");
        let a = p.free_var("a");
        p.add_eq("a", vec![(a, 1.0), (u, 1.0)], 2.0);
        p.add_rotated_cone(u, l, vec![a]);
        p.set_objective(vec![(l, 1.0), (u, 0.1)], 0.0);
        let s1 = solve(&p, &Tolerances::default());
        let s2 = solve(&p, &Tolerances::default());
        assert_eq!(s1.x, s2.x);
    }
}
