//! Vertex search over a 2-D projection: axis extremes first, then repeated
//! facet pushes until the hull area stops growing.

use serde::{Deserialize, Serialize};

use super::hull::{convex_hull_2d, Polytope2D};
use crate::conic::{build_robust_program, solve, PrevState, RobustProgram, RobustSpec, Tolerances, WMode};
use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::par::par_map;
use crate::params::ScheduleParams;
use crate::scenario::ScenarioSet;

pub const DEFAULT_TOL_AREA: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 20;
pub const TOL_VERTEX_PU: f64 = 1e-6;
pub const AREA_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExploreOptions {
    pub tol_area: f64,
    pub max_iter: usize,
    /// Duplicate threshold in per-unit; scaled by the MVA base for MW points.
    pub tol_vertex: f64,
    pub tolerances: Tolerances,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            tol_area: DEFAULT_TOL_AREA,
            max_iter: DEFAULT_MAX_ITER,
            tol_vertex: TOL_VERTEX_PU,
            tolerances: Tolerances::default(),
        }
    }
}

/// Result of a support search with the payload attached to each hull vertex.
#[derive(Debug, Clone)]
pub struct Explored<P> {
    pub polytope: Polytope2D,
    /// Payloads aligned with `polytope.vertices`.
    pub payloads: Vec<P>,
    /// Hull area after the axis solves and after every expansion round.
    pub areas: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub skipped: usize,
}

/// Runs the search with `oracle(dir)` returning the maximizer of `dir · w`
/// (as a point and payload), `Ok(None)` for a skipped direction, or an error
/// that aborts the search. `tol` is the duplicate distance in point units.
pub fn support_search<P, F>(oracle: F, tol: f64, tol_area: f64, max_iter: usize) -> Result<Explored<P>>
where
    P: Clone + Send,
    F: Fn([f64; 2]) -> Result<Option<([f64; 2], P)>> + Sync + Send,
{
    let mut tried: Vec<[f64; 2]> = Vec::new();
    let mut points: Vec<([f64; 2], P)> = Vec::new();
    let mut skipped = 0;

    let mut run = |dirs: Vec<[f64; 2]>, points: &mut Vec<([f64; 2], P)>, tried: &mut Vec<[f64; 2]>| -> Result<usize> {
        let fresh: Vec<[f64; 2]> = dirs
            .into_iter()
            .filter(|d| tried.iter().all(|t| (t[0] - d[0]).abs() + (t[1] - d[1]).abs() > 1e-9))
            .collect();
        tried.extend(&fresh);
        let results = par_map(&fresh, |&d| oracle(d));
        let mut added = 0;
        for r in results {
            match r? {
                Some((w, payload)) => {
                    if points.iter().all(|(p, _)| (p[0] - w[0]).hypot(p[1] - w[1]) > tol) {
                        points.push((w, payload));
                        added += 1;
                    }
                }
                None => skipped += 1,
            }
        }
        Ok(added)
    };

    run(vec![[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]], &mut points, &mut tried)?;
    if points.is_empty() {
        return Err(Error::Numerical { stage: "region search".into(), detail: "every axis solve was skipped".into() });
    }
    let hull_of = |pts: &[([f64; 2], P)]| convex_hull_2d(&pts.iter().map(|p| p.0).collect::<Vec<_>>(), tol);
    let mut hull = hull_of(&points);
    let mut areas = vec![hull.area];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        if hull.vertices.len() < 2 {
            converged = true;
            break;
        }
        iterations += 1;
        let dirs: Vec<[f64; 2]> = hull.halfspaces.iter().map(|h| [h[0], h[1]]).collect();
        let added = run(dirs, &mut points, &mut tried)?;
        let next = hull_of(&points);
        let (old, new) = (hull.area, next.area);
        areas.push(new);
        hull = next;
        if added == 0 || new - old <= tol_area * new.max(AREA_EPS) {
            converged = true;
            break;
        }
    }
    let payloads = hull
        .vertices
        .iter()
        .map(|v| {
            points
                .iter()
                .min_by(|a, b| {
                    let da = (a.0[0] - v[0]).hypot(a.0[1] - v[1]);
                    let db = (b.0[0] - v[0]).hypot(b.0[1] - v[1]);
                    da.total_cmp(&db)
                })
                .expect("hull vertices come from the point set")
                .1
                .clone()
        })
        .collect();
    Ok(Explored { polytope: hull, payloads, areas, iterations, converged, skipped })
}

/// Stored solution of the period program at one region vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexSolution {
    /// `(P, Q)` in MW / MVar.
    pub w: [f64; 2],
    /// Stacked block values `[x̃_t0, x_t1, …]`, per-unit.
    pub y: Vec<f64>,
    /// Weights over the previous period's vertices (empty at period 1).
    pub prev_weights: Vec<f64>,
    /// SOC state entering the period, per-unit.
    pub prev_state: Vec<f64>,
    /// SOC state at the end of the period, per-unit.
    pub soc_snapshot: Vec<f64>,
    /// Charge then discharge power of every block, per-unit.
    pub power_snapshot: Vec<f64>,
}

/// Search outcome for one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRegion {
    pub period: usize,
    pub polytope: Polytope2D,
    pub vertices: Vec<VertexSolution>,
    pub areas: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub skipped_facets: usize,
}

/// The robust program of a single period with `w_t` free.
pub fn period_program(
    model: &NetworkModel,
    params: &ScheduleParams,
    scenarios: &ScenarioSet,
    t: usize,
    prev: &[VertexSolution],
) -> Result<RobustProgram> {
    let prev_state = if t == 0 {
        PrevState::Initial
    } else {
        if prev.is_empty() {
            return Err(Error::EmptyRegion { period: t });
        }
        PrevState::Weighted(prev.iter().map(|v| v.soc_snapshot.clone()).collect())
    };
    build_robust_program(&RobustSpec {
        model,
        params,
        scenarios,
        first: t,
        last: t + 1,
        w: WMode::Free,
        prev: prev_state,
    })
}

fn vertex_solution(rp: &RobustProgram, sol: &crate::conic::Solution, scenarios: &ScenarioSet, prev: &[VertexSolution], t: usize) -> VertexSolution {
    let nu = rp.nu_values(sol);
    let prev_state = if t == 0 {
        Vec::new()
    } else {
        let dim = prev[0].soc_snapshot.len();
        (0..dim).map(|i| nu.iter().zip(prev).map(|(m, v)| m * v.soc_snapshot[i]).sum()).collect()
    };
    let k = t - rp.first;
    let blocks = std::iter::once(&rp.expected[k]).chain(&rp.extremes[k]);
    let mut power = Vec::new();
    for b in blocks {
        power.extend(b.pc.iter().map(|&v| sol.value(v)));
        power.extend(b.pd.iter().map(|&v| sol.value(v)));
    }
    VertexSolution {
        w: rp.w_value(sol, t),
        y: rp.stacked(sol, t),
        prev_weights: nu,
        prev_state,
        soc_snapshot: rp.end_state(sol, scenarios, t),
        power_snapshot: power,
    }
}

/// Solves `max dir · w_t` on a period program template.
fn facet_solve(
    template: &RobustProgram,
    scenarios: &ScenarioSet,
    prev: &[VertexSolution],
    t: usize,
    dir: [f64; 2],
    tol: &Tolerances,
    strict: bool,
) -> Result<Option<([f64; 2], VertexSolution)>> {
    let mut rp = template.clone();
    let (wp, wq) = rp.w[0];
    rp.program.set_objective(vec![(wp, -dir[0]), (wq, -dir[1])], 0.0);
    let sol = solve(&rp.program, tol);
    match sol.status {
        crate::conic::Status::Optimal => {
            let v = vertex_solution(&rp, &sol, scenarios, prev, t);
            Ok(Some((v.w, v)))
        }
        crate::conic::Status::Infeasible => Err(Error::EmptyRegion { period: t + 1 }),
        _ if strict => Err(Error::Numerical { stage: format!("region period {}", t + 1), detail: sol.detail }),
        _ => {
            log::warn!("period {}: facet direction {:?} skipped ({})", t + 1, dir, sol.detail);
            Ok(None)
        }
    }
}

/// The four axis-extreme vertex solutions of period `t`.
pub fn initial_bounds(
    model: &NetworkModel,
    params: &ScheduleParams,
    scenarios: &ScenarioSet,
    t: usize,
    prev: &[VertexSolution],
    tol: &Tolerances,
) -> Result<Vec<VertexSolution>> {
    let template = period_program(model, params, scenarios, t, prev)?;
    [[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]]
        .iter()
        .map(|&d| {
            facet_solve(&template, scenarios, prev, t, d, tol, true).map(|r| r.expect("strict solves never skip").1)
        })
        .collect()
}

/// One expansion round: pushes every facet of `polytope` outward.
pub fn expand_facets(
    model: &NetworkModel,
    params: &ScheduleParams,
    scenarios: &ScenarioSet,
    polytope: &Polytope2D,
    t: usize,
    prev: &[VertexSolution],
    tol: &Tolerances,
) -> Result<Vec<Option<VertexSolution>>> {
    let template = period_program(model, params, scenarios, t, prev)?;
    let dirs: Vec<[f64; 2]> = polytope.halfspaces.iter().map(|h| [h[0], h[1]]).collect();
    par_map(&dirs, |&d| facet_solve(&template, scenarios, prev, t, d, tol, false).map(|r| r.map(|x| x.1)))
        .into_iter()
        .collect()
}

/// Steps 1–4 for one period, coupled to the previous period's vertex solutions.
pub fn explore_period(
    model: &NetworkModel,
    params: &ScheduleParams,
    scenarios: &ScenarioSet,
    t: usize,
    prev: &[VertexSolution],
    opts: &ExploreOptions,
) -> Result<PeriodRegion> {
    let template = period_program(model, params, scenarios, t, prev)?;
    let tol = opts.tolerances;
    let explored = support_search(
        |d| facet_solve(&template, scenarios, prev, t, d, &tol, false),
        opts.tol_vertex * model.base.s_mva,
        opts.tol_area,
        opts.max_iter,
    )?;
    log::info!(
        "period {}: {} vertices, area {:.6}, {} rounds{}",
        t + 1,
        explored.polytope.vertices.len(),
        explored.polytope.area,
        explored.iterations,
        if explored.converged { "" } else { " (not converged)" }
    );
    Ok(PeriodRegion {
        period: t,
        polytope: explored.polytope,
        vertices: explored.payloads,
        areas: explored.areas,
        iterations: explored.iterations,
        converged: explored.converged,
        skipped_facets: explored.skipped,
    })
}

/// Explores every period in order.
pub fn explore_all(
    model: &NetworkModel,
    params: &ScheduleParams,
    scenarios: &ScenarioSet,
    opts: &ExploreOptions,
) -> Result<Vec<PeriodRegion>> {
    let mut out: Vec<PeriodRegion> = Vec::new();
    for t in 0..model.horizon {
        let prev = out.last().map(|r| r.vertices.as_slice()).unwrap_or(&[]);
        out.push(explore_period(model, params, scenarios, t, prev, opts)?);
    }
    Ok(out)
}
