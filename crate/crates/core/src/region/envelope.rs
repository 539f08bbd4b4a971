//! The inner envelope: per-period vertex sets tied together by simplex
//! weights whose recombined SOC trajectories agree between periods.

use serde::{Deserialize, Serialize};

use super::explore::{support_search, PeriodRegion, VertexSolution};
use super::hull::Polytope2D;
use crate::conic::{solve, BlockLayout, ConicProgram, Status, Tolerances, Var};
use crate::conic::robust::state_len;
use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::scenario::ScenarioSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEnvelope {
    pub s_base: f64,
    pub layout: BlockLayout,
    pub periods: Vec<PeriodRegion>,
    /// Projection of the envelope onto each period's `(P, Q)`, found by
    /// support search over the weights. Contained in the period polytope.
    pub certified: Vec<Polytope2D>,
}

/// Weight variables created by [`add_envelope_constraints`].
#[derive(Debug, Clone)]
pub struct EnvelopeVars {
    /// `mu[t][j]` over the vertices of period `t`.
    pub mu: Vec<Vec<Var>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipCertificate {
    pub feasible: bool,
    /// `mu[t][j]`; empty when infeasible.
    pub mu: Vec<Vec<f64>>,
    /// Largest violation of the reconstruction and coupling equalities.
    pub residual: f64,
}

impl RegionEnvelope {
    pub fn horizon(&self) -> usize {
        self.periods.len()
    }

    pub fn vertices(&self, t: usize) -> &[VertexSolution] {
        &self.periods[t].vertices
    }

    /// `w_t = Σ_j mu_j w^{(j)}` in MW.
    pub fn reconstruct_w(&self, t: usize, mu: &[f64]) -> [f64; 2] {
        let mut w = [0.0; 2];
        for (m, v) in mu.iter().zip(self.vertices(t)) {
            w[0] += m * v.w[0];
            w[1] += m * v.w[1];
        }
        w
    }

    /// Recombined stacked solution `Σ_j mu_j y^{(j)}` of period `t`.
    pub fn recombine_y(&self, t: usize, mu: &[f64]) -> Vec<f64> {
        let verts = self.vertices(t);
        let mut y = vec![0.0; verts[0].y.len()];
        for (m, v) in mu.iter().zip(verts) {
            for (a, b) in y.iter_mut().zip(&v.y) {
                *a += m * b;
            }
        }
        y
    }

    /// Largest violation of the simplex and coupling conditions for `mu`.
    pub fn coupling_residual(&self, mu: &[Vec<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for (t, m) in mu.iter().enumerate() {
            worst = worst.max((m.iter().sum::<f64>() - 1.0).abs());
            worst = worst.max(m.iter().fold(0.0f64, |a, &x| a.max(-x)));
            if t == 0 {
                continue;
            }
            let cur = self.vertices(t);
            let prev = self.vertices(t - 1);
            for i in 0..prev[0].soc_snapshot.len() {
                let lhs: f64 = m.iter().zip(cur).map(|(a, v)| a * v.prev_state[i]).sum();
                let rhs: f64 = mu[t - 1].iter().zip(prev).map(|(a, v)| a * v.soc_snapshot[i]).sum();
                worst = worst.max((lhs - rhs).abs());
            }
        }
        worst
    }
}

/// Checks snapshots and assembles the envelope, including the certified
/// per-period projections.
pub fn build_envelope(
    model: &NetworkModel,
    scenarios: &ScenarioSet,
    periods: Vec<PeriodRegion>,
    tol: &Tolerances,
) -> Result<RegionEnvelope> {
    let layout = BlockLayout::of(model);
    let ylen = layout.len() * (1 + scenarios.len());
    if periods.len() != model.horizon {
        return Err(Error::Shape(format!("{} period regions for horizon {}", periods.len(), model.horizon)));
    }
    for (t, pr) in periods.iter().enumerate() {
        if pr.vertices.is_empty() {
            return Err(Error::EmptyRegion { period: t + 1 });
        }
        let dim = state_len(model, scenarios, t);
        for (j, v) in pr.vertices.iter().enumerate() {
            let prev_ok = t == 0 || v.prev_state.len() == state_len(model, scenarios, t - 1);
            let prev_w = t == 0 || v.prev_weights.len() == periods[t - 1].vertices.len();
            if v.y.len() != ylen || v.soc_snapshot.len() != dim || !prev_ok || !prev_w {
                return Err(Error::MissingSnapshot { period: t + 1, vertex: j });
            }
        }
    }
    let mut env = RegionEnvelope { s_base: model.base.s_mva, layout, periods, certified: Vec::new() };
    env.certified = (0..env.horizon()).map(|t| certified_projection(&env, t, tol)).collect::<Result<_>>()?;
    Ok(env)
}

/// Adds the weights, simplex rows, reconstruction rows for the given
/// per-period `(P, Q)` variables (per-unit) and the SOC coupling rows.
pub fn add_envelope_constraints(prog: &mut ConicProgram, env: &RegionEnvelope, w: &[(Var, Var)]) -> EnvelopeVars {
    let base = env.s_base;
    let mut mu: Vec<Vec<Var>> = Vec::with_capacity(env.horizon());
    for t in 0..env.horizon() {
        let verts = env.vertices(t);
        let m: Vec<Var> = (0..verts.len()).map(|j| prog.add_var(format!("mu[{}][{j}]", t + 1), 0.0, f64::INFINITY)).collect();
        prog.add_eq(format!("mu_simplex[{}]", t + 1), m.iter().map(|&v| (v, 1.0)).collect(), 1.0);
        let (wp, wq) = w[t];
        let mut tp = vec![(wp, -1.0)];
        let mut tq = vec![(wq, -1.0)];
        for (&v, vs) in m.iter().zip(verts) {
            tp.push((v, vs.w[0] / base));
            tq.push((v, vs.w[1] / base));
        }
        prog.add_eq(format!("mu_wp[{}]", t + 1), tp, 0.0);
        prog.add_eq(format!("mu_wq[{}]", t + 1), tq, 0.0);
        if t > 0 {
            let prev = env.vertices(t - 1);
            for i in 0..prev[0].soc_snapshot.len() {
                let mut terms: Vec<(Var, f64)> = m.iter().zip(verts).map(|(&v, vs)| (v, vs.prev_state[i])).collect();
                terms.extend(mu[t - 1].iter().zip(prev).map(|(&v, vs)| (v, -vs.soc_snapshot[i])));
                prog.add_eq(format!("mu_soc{i}[{}]", t + 1), terms, 0.0);
            }
        }
        mu.push(m);
    }
    EnvelopeVars { mu }
}

/// A program holding only the envelope: free `(P, Q)` per period plus weights.
pub fn envelope_program(env: &RegionEnvelope) -> (ConicProgram, Vec<(Var, Var)>, EnvelopeVars) {
    let mut prog = ConicProgram::new();
    let w: Vec<(Var, Var)> = (0..env.horizon())
        .map(|t| (prog.free_var(format!("w_p[{}]", t + 1)), prog.free_var(format!("w_q[{}]", t + 1))))
        .collect();
    let vars = add_envelope_constraints(&mut prog, env, &w);
    (prog, w, vars)
}

fn certified_projection(env: &RegionEnvelope, t: usize, tol: &Tolerances) -> Result<Polytope2D> {
    let (prog, w, _) = envelope_program(env);
    let base = env.s_base;
    let explored = support_search(
        |d| {
            let mut p = prog.clone();
            p.set_objective(vec![(w[t].0, -d[0]), (w[t].1, -d[1])], 0.0);
            let sol = solve(&p, tol);
            match sol.status {
                Status::Optimal => Ok(Some(([sol.value(w[t].0) * base, sol.value(w[t].1) * base], ()))),
                Status::Infeasible => Err(Error::EmptyRegion { period: t + 1 }),
                _ => Ok(None),
            }
        },
        super::explore::TOL_VERTEX_PU * base,
        1e-6,
        50,
    )?;
    Ok(explored.polytope)
}

/// Decides whether the schedule `w` (MW, one point per period) lies in the
/// envelope by minimizing the L1 distance to it, which stays well posed for
/// points on the boundary.
pub fn membership(env: &RegionEnvelope, w: &[[f64; 2]], tol: &Tolerances) -> Result<MembershipCertificate> {
    if w.len() != env.horizon() {
        return Err(Error::Shape(format!("{} schedule points for horizon {}", w.len(), env.horizon())));
    }
    let base = env.s_base;
    let (mut prog, wv, vars) = envelope_program(env);
    let mut obj = Vec::new();
    for (t, &(p, q)) in wv.iter().enumerate() {
        for (v, target) in [(p, w[t][0] / base), (q, w[t][1] / base)] {
            let d = prog.add_var(format!("dist_{}[{}]", prog.name(v).to_owned(), t + 1), 0.0, f64::INFINITY);
            prog.add_ge(format!("dist_hi[{}]", t + 1), vec![(d, 1.0), (v, -1.0)], -target);
            prog.add_ge(format!("dist_lo[{}]", t + 1), vec![(d, 1.0), (v, 1.0)], target);
            obj.push((d, 1.0));
        }
    }
    prog.set_objective(obj, 0.0);
    let sol = solve(&prog, tol);
    if sol.status != Status::Optimal {
        return Err(Error::Numerical { stage: "membership".into(), detail: sol.detail });
    }
    let mu: Vec<Vec<f64>> = vars.mu.iter().map(|m| m.iter().map(|&v| sol.value(v).max(0.0)).collect()).collect();
    let mut residual = env.coupling_residual(&mu);
    for (t, m) in mu.iter().enumerate() {
        let r = env.reconstruct_w(t, m);
        residual = residual.max(((r[0] - w[t][0]).abs() + (r[1] - w[t][1]).abs()) / base);
    }
    let feasible = residual <= 10.0 * tol.feas;
    Ok(MembershipCertificate { mu: if feasible { mu } else { Vec::new() }, feasible, residual })
}
