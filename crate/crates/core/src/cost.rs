//! Per-period cost surfaces over the certified region and the compensation
//! term that makes their sum an upper bound on the true operating cost.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::conic::{build_robust_program, solve, RobustProgram, RobustSpec, Status, Tolerances, Var, WMode};
use crate::error::{Error, Result};
use crate::network::{CostPiece, NetworkModel};
use crate::par::par_map;
use crate::params::ScheduleParams;
use crate::region::{add_envelope_constraints, convex_hull_2d, Polytope2D, RegionEnvelope};
use crate::scenario::ScenarioSet;

pub const DEFAULT_REFINEMENT: usize = 1;
pub const DEFAULT_TOL_ATTAIN: f64 = 1e-5;

/// Attainment tolerance for a cost value `z`.
pub fn tol_attain(z: f64) -> f64 {
    DEFAULT_TOL_ATTAIN * z.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSample {
    /// `(P, Q)` in MW / MVar.
    pub w: [f64; 2],
    /// Minimum period cost in $, NaN when not attained.
    pub z: f64,
    pub attained: bool,
}

/// Convex piecewise-linear interpolant of the period cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSurface {
    pub period: usize,
    pub samples: Vec<CostSample>,
    /// Triangles over `samples` (indices); empty for degenerate domains.
    pub triangles: Vec<[usize; 3]>,
    /// Affine piece `(c_P, c_Q, c_0)` of each triangle, in $/MW, $/MVar, $.
    pub pieces: Vec<[f64; 3]>,
    pub domain: Polytope2D,
}

fn eval_piece(c: &[f64; 3], w: [f64; 2]) -> f64 {
    c[0] * w[0] + c[1] * w[1] + c[2]
}

impl CostSurface {
    /// Surface value: the maximum over the pieces, which equals the piece of
    /// the triangle containing `w`.
    pub fn value(&self, w: [f64; 2]) -> f64 {
        self.pieces.iter().map(|c| eval_piece(c, w)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Pieces with near-duplicates removed.
    pub fn distinct_pieces(&self) -> Vec<[f64; 3]> {
        let mut out: Vec<[f64; 3]> = Vec::new();
        for c in &self.pieces {
            if !out.iter().any(|d| (0..3).all(|k| (c[k] - d[k]).abs() <= 1e-9 * (1.0 + d[k].abs()))) {
                out.push(*c);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidFunction {
    pub surfaces: Vec<CostSurface>,
    /// Compensation cost in $; any sign.
    pub epsilon: f64,
}

/// Sum of the surfaces plus the compensation cost. Every `w_t` must lie in its domain.
pub fn evaluate_bid(bid: &BidFunction, w: &[[f64; 2]]) -> Result<f64> {
    if w.len() != bid.surfaces.len() {
        return Err(Error::Shape(format!("{} schedule points for {} surfaces", w.len(), bid.surfaces.len())));
    }
    let mut total = bid.epsilon;
    for (s, &wt) in bid.surfaces.iter().zip(w) {
        let scale = 1.0 + s.domain.vertices.iter().map(|v| v[0].abs().max(v[1].abs())).fold(0.0, f64::max);
        if !s.domain.contains(wt, 1e-7 * scale) {
            return Err(Error::OutsideDomain { period: s.period + 1, p: wt[0], q: wt[1] });
        }
        total += s.value(wt);
    }
    Ok(total)
}

/// Chord of each generator cost between its physical bounds.
pub fn linearize_generator_costs(model: &NetworkModel) -> Vec<CostPiece> {
    model
        .generators
        .iter()
        .map(|g| {
            let (lo, hi) = (g.p_phys_min, g.p_phys_max);
            let (flo, fhi) = (g.cost(lo), g.cost(hi));
            if hi - lo <= 0.0 {
                return CostPiece { slope: 0.0, intercept: flo };
            }
            let slope = (fhi - flo) / (hi - lo);
            CostPiece { slope, intercept: flo - slope * lo }
        })
        .collect()
}

/// Constant upper bound on one period's cost.
pub fn g_max(model: &NetworkModel) -> f64 {
    let gens: f64 = model.generators.iter().map(|g| g.cost(g.p_phys_min).max(g.cost(g.p_phys_max))).sum();
    let st: f64 = model.storages.iter().map(|s| s.c_charge * s.pc_max + s.c_discharge * s.pd_max).sum();
    gens + st
}

/// The full-horizon robust program intersected with the envelope, with one
/// bounded cost epigraph variable per period.
#[derive(Debug, Clone)]
pub struct CostProgram {
    template: RobustProgram,
    g: Vec<Var>,
    pub g_max: f64,
    pub tol: Tolerances,
}

impl CostProgram {
    pub fn new(
        model: &NetworkModel,
        params: &ScheduleParams,
        scenarios: &ScenarioSet,
        env: &RegionEnvelope,
        tol: &Tolerances,
    ) -> Result<Self> {
        let mut rp = build_robust_program(&RobustSpec::full(model, params, scenarios, WMode::Free))?;
        let w = rp.w.clone();
        add_envelope_constraints(&mut rp.program, env, &w);
        let gmax = g_max(model);
        let mut g = Vec::new();
        for t in 0..model.horizon {
            let gt = rp.program.add_var(format!("g[{}]", t + 1), f64::NEG_INFINITY, gmax);
            let mut terms = rp.period_cost_terms(model, t);
            for term in terms.iter_mut() {
                term.1 = -term.1;
            }
            terms.push((gt, 1.0));
            rp.program.add_ge(format!("g_epi[{}]", t + 1), terms, 0.0);
            g.push(gt);
        }
        Ok(CostProgram { template: rp, g, g_max: gmax, tol: *tol })
    }

    /// Minimum cost of period `t` with `w_t` pinned (MW).
    pub fn cost_at_point(&self, t: usize, w: [f64; 2]) -> CostSample {
        let mut rp = self.template.clone();
        let (p, q) = rp.w[t];
        rp.program.fix(p, w[0] / rp.s_base);
        rp.program.fix(q, w[1] / rp.s_base);
        rp.program.set_objective(vec![(self.g[t], 1.0)], 0.0);
        let sol = solve(&rp.program, &self.tol);
        if sol.status == Status::Optimal {
            CostSample { w, z: sol.objective, attained: true }
        } else {
            log::warn!("period {}: cost sample at {:?} rejected ({:?}, {})", t + 1, w, sol.status, sol.detail);
            CostSample { w, z: f64::NAN, attained: false }
        }
    }
}

/// True minimum expected cost with every period's schedule fixed (MW).
pub fn true_cost(
    model: &NetworkModel,
    params: &ScheduleParams,
    scenarios: &ScenarioSet,
    w: &[[f64; 2]],
    tol: &Tolerances,
) -> Result<f64> {
    let mut rp = build_robust_program(&RobustSpec::full(model, params, scenarios, WMode::Fixed(w.to_vec())))?;
    rp.set_expected_cost_objective(model);
    Ok(solve(&rp.program, tol).require_optimal("true cost")?.objective)
}

/// Sample locations: domain vertices, the centroid, then `refinement` rounds
/// of midpoint subdivision of the centroid fan.
pub fn sample_points(domain: &Polytope2D, refinement: usize) -> Vec<[f64; 2]> {
    let n = domain.vertices.len();
    if domain.degenerate || n < 3 {
        let mut pts = domain.vertices.clone();
        if n == 2 {
            let mut segs = vec![(0usize, 1usize)];
            for _ in 0..refinement {
                let mut next = Vec::new();
                for (a, b) in segs {
                    let m = pts.len();
                    pts.push(mid(pts[a], pts[b]));
                    next.push((a, m));
                    next.push((m, b));
                }
                segs = next;
            }
        }
        return pts;
    }
    let mut pts = domain.vertices.clone();
    pts.push(domain.centroid());
    let c = n;
    let mut tris: Vec<[usize; 3]> = (0..n).map(|i| [c, i, (i + 1) % n]).collect();
    for _ in 0..refinement {
        let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, pts: &mut Vec<[f64; 2]>| {
            let key = (a.min(b), a.max(b));
            *mids.entry(key).or_insert_with(|| {
                pts.push(mid(pts[a], pts[b]));
                pts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(4 * tris.len());
        for [a, b, d] in tris {
            let ab = midpoint(a, b, &mut pts);
            let bd = midpoint(b, d, &mut pts);
            let da = midpoint(d, a, &mut pts);
            next.extend([[a, ab, da], [ab, b, bd], [da, bd, d], [ab, bd, da]]);
        }
        tris = next;
    }
    pts
}

fn mid(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn plane_through(p: [[f64; 3]; 3]) -> Option<[f64; 3]> {
    let det = orient([p[0][0], p[0][1]], [p[1][0], p[1][1]], [p[2][0], p[2][1]]);
    if det.abs() < 1e-12 {
        return None;
    }
    let (x0, y0, z0) = (p[0][0], p[0][1], p[0][2]);
    let (dx1, dy1, dz1) = (p[1][0] - x0, p[1][1] - y0, p[1][2] - z0);
    let (dx2, dy2, dz2) = (p[2][0] - x0, p[2][1] - y0, p[2][2] - z0);
    let cp = (dz1 * dy2 - dz2 * dy1) / det;
    let cq = (dx1 * dz2 - dx2 * dz1) / det;
    Some([cp, cq, z0 - cp * x0 - cq * y0])
}

/// Triangulates the points `idx` (all inside their hull): a fan over the hull,
/// then every remaining point splits the triangles it lies in.
fn triangulate(points: &[[f64; 2]], idx: &[usize], tol: f64) -> Vec<[usize; 3]> {
    let sub: Vec<[f64; 2]> = idx.iter().map(|&i| points[i]).collect();
    let hull = convex_hull_2d(&sub, tol);
    if hull.vertices.len() < 3 || hull.area <= tol * tol {
        return Vec::new();
    }
    let find = |v: [f64; 2]| {
        *idx.iter()
            .min_by(|&&a, &&b| {
                let da = (points[a][0] - v[0]).hypot(points[a][1] - v[1]);
                let db = (points[b][0] - v[0]).hypot(points[b][1] - v[1]);
                da.total_cmp(&db)
            })
            .expect("non-empty")
    };
    let hv: Vec<usize> = hull.vertices.iter().map(|&v| find(v)).collect();
    let mut tris: Vec<[usize; 3]> = (1..hv.len() - 1).map(|k| [hv[0], hv[k], hv[k + 1]]).collect();
    for &i in idx {
        if hv.contains(&i) {
            continue;
        }
        let p = points[i];
        let mut next = Vec::with_capacity(tris.len() + 2);
        for t in tris {
            let [a, b, c] = t;
            let (pa, pb, pc) = (points[a], points[b], points[c]);
            let area = orient(pa, pb, pc);
            let l = [orient(pb, pc, p) / area, orient(pc, pa, p) / area, orient(pa, pb, p) / area];
            let eps = 1e-9;
            if l.iter().any(|&x| x < -eps) || [a, b, c].contains(&i) {
                next.push(t);
                continue;
            }
            // Split across every edge whose opposite coordinate is not ~0.
            let corners = [a, b, c];
            for k in 0..3 {
                if l[k] > eps {
                    let mut nt = corners;
                    nt[k] = i;
                    next.push(nt);
                }
            }
        }
        tris = next;
    }
    tris
}

/// Lower convex envelope of the attained samples: faces, their triangles and pieces.
fn lower_envelope(samples: &[CostSample], domain: &Polytope2D) -> (Vec<[usize; 3]>, Vec<[f64; 3]>) {
    let ok: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].attained).collect();
    let zscale = ok.iter().map(|&i| samples[i].z.abs()).fold(1.0, f64::max);
    let tol_plane = 1e-7 * zscale;
    let wscale = domain.vertices.iter().map(|v| v[0].abs().max(v[1].abs())).fold(1.0, f64::max);
    let pts: Vec<[f64; 2]> = samples.iter().map(|s| s.w).collect();
    let lifted = |i: usize| [samples[i].w[0], samples[i].w[1], samples[i].z];

    if domain.degenerate || domain.area <= 0.0 {
        // Segment or point: lower envelope along the segment direction.
        return (Vec::new(), degenerate_pieces(samples, &ok));
    }

    let mut planes: Vec<[f64; 3]> = Vec::new();
    for (a, &i) in ok.iter().enumerate() {
        for (b, &j) in ok.iter().enumerate().skip(a + 1) {
            for &k in ok.iter().skip(b + 1) {
                let Some(c) = plane_through([lifted(i), lifted(j), lifted(k)]) else { continue };
                if ok.iter().all(|&m| samples[m].z >= eval_piece(&c, pts[m]) - tol_plane)
                    && !planes.iter().any(|d| same_plane(d, &c, &pts, &ok, tol_plane))
                {
                    planes.push(c);
                }
            }
        }
    }
    // Larger faces first; a triangle whose centroid is already covered comes
    // from a near-coplanar duplicate face and is dropped.
    let mut faces: Vec<([f64; 3], Vec<usize>)> = planes
        .into_iter()
        .map(|c| {
            let on = ok.iter().copied().filter(|&m| (samples[m].z - eval_piece(&c, pts[m])).abs() <= 2.0 * tol_plane).collect();
            (c, on)
        })
        .collect();
    faces.sort_by_key(|f| std::cmp::Reverse(f.1.len()));
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut pieces = Vec::new();
    for (c, on) in faces {
        for t in triangulate(&pts, &on, 1e-9 * wscale) {
            let [a, b, d] = t.map(|i| pts[i]);
            let centre = [(a[0] + b[0] + d[0]) / 3.0, (a[1] + b[1] + d[1]) / 3.0];
            if orient(a, b, d).abs() <= 1e-12 * wscale * wscale
                || triangles.iter().any(|u| inside(u.map(|i| pts[i]), centre))
            {
                continue;
            }
            triangles.push(t);
            pieces.push(c);
        }
    }
    (triangles, pieces)
}

fn inside(tri: [[f64; 2]; 3], p: [f64; 2]) -> bool {
    let s = orient(tri[0], tri[1], tri[2]).signum();
    (0..3).all(|k| s * orient(tri[k], tri[(k + 1) % 3], p) > 0.0)
}

fn same_plane(a: &[f64; 3], b: &[f64; 3], pts: &[[f64; 2]], ok: &[usize], tol: f64) -> bool {
    ok.iter().all(|&m| (eval_piece(a, pts[m]) - eval_piece(b, pts[m])).abs() <= tol)
}

fn degenerate_pieces(samples: &[CostSample], ok: &[usize]) -> Vec<[f64; 3]> {
    if ok.is_empty() {
        return Vec::new();
    }
    let o = samples[ok[0]].w;
    let far = ok.iter().map(|&i| samples[i].w).max_by(|a, b| {
        let da = (a[0] - o[0]).hypot(a[1] - o[1]);
        let db = (b[0] - o[0]).hypot(b[1] - o[1]);
        da.total_cmp(&db)
    });
    let far = far.expect("non-empty");
    let len = (far[0] - o[0]).hypot(far[1] - o[1]);
    if len <= 1e-12 {
        return vec![[0.0, 0.0, samples[ok[0]].z]];
    }
    let u = [(far[0] - o[0]) / len, (far[1] - o[1]) / len];
    let mut pts: Vec<(f64, f64)> = ok
        .iter()
        .map(|&i| ((samples[i].w[0] - o[0]) * u[0] + (samples[i].w[1] - o[1]) * u[1], samples[i].z))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull.windows(2)
        .filter(|w| w[1].0 - w[0].0 > 1e-12)
        .map(|w| {
            let s = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            // z = s·(u·(w − o) − x0) + z0
            [s * u[0], s * u[1], w[0].1 - s * w[0].0 - s * (u[0] * o[0] + u[1] * o[1])]
        })
        .collect()
}

/// Samples the period cost over the certified domain and builds its lower
/// convex interpolant.
pub fn build_surface(cp: &CostProgram, env: &RegionEnvelope, t: usize, refinement: usize) -> Result<CostSurface> {
    let domain = env.certified[t].clone();
    let mut pts = sample_points(&domain, refinement);
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let samples = par_map(&pts, |&w| cp.cost_at_point(t, w));
    if samples.iter().all(|s| !s.attained) {
        return Err(Error::Infeasible { stage: format!("cost surface period {}", t + 1) });
    }
    let (triangles, pieces) = lower_envelope(&samples, &domain);
    let (triangles, pieces) = if pieces.is_empty() {
        let z = samples.iter().filter(|s| s.attained).map(|s| s.z).fold(f64::NEG_INFINITY, f64::max);
        (Vec::new(), vec![[0.0, 0.0, z]])
    } else {
        (triangles, pieces)
    };
    Ok(CostSurface { period: t, samples, triangles, pieces, domain })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status")]
pub enum Attainment {
    Attained,
    Overestimating { gap: f64 },
    /// The centroid sample could not be solved.
    Unknown,
}

/// Compares each triangle's piece with the exact cost at its centroid.
pub fn attainment_check(cp: &CostProgram, surface: &CostSurface) -> Result<Vec<Attainment>> {
    attainment_check_with(cp, surface, DEFAULT_TOL_ATTAIN)
}

/// As [`attainment_check`] with the relative tolerance `rel · max(1, |z|)`.
pub fn attainment_check_with(cp: &CostProgram, surface: &CostSurface, rel: f64) -> Result<Vec<Attainment>> {
    let centroids: Vec<[f64; 2]> = surface
        .triangles
        .iter()
        .map(|t| {
            let p = t.map(|i| surface.samples[i].w);
            [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0]
        })
        .collect();
    let exact = par_map(&centroids, |&w| cp.cost_at_point(surface.period, w));
    let mut out = Vec::with_capacity(exact.len());
    for (k, s) in exact.iter().enumerate() {
        if !s.attained {
            out.push(Attainment::Unknown);
            continue;
        }
        let gap = eval_piece(&surface.pieces[k], s.w) - s.z;
        let tol = rel * s.z.abs().max(1.0);
        if gap < -tol {
            return Err(Error::ConvexityViolated { period: surface.period + 1, gap });
        }
        out.push(if gap <= tol { Attainment::Attained } else { Attainment::Overestimating { gap } });
    }
    Ok(out)
}

/// Largest excess of the linearized true cost over the surface sum across
/// the envelope.
pub fn compensation_epsilon(
    model: &NetworkModel,
    params: &ScheduleParams,
    scenarios: &ScenarioSet,
    env: &RegionEnvelope,
    surfaces: &[CostSurface],
    tol: &Tolerances,
) -> Result<f64> {
    if surfaces.len() != model.horizon {
        return Err(Error::Shape(format!("{} surfaces for horizon {}", surfaces.len(), model.horizon)));
    }
    let mut rp = build_robust_program(&RobustSpec::full(model, params, scenarios, WMode::Free))?;
    let w = rp.w.clone();
    add_envelope_constraints(&mut rp.program, env, &w);
    let base = rp.s_base;
    let chords = linearize_generator_costs(model);
    let mut obj: Vec<(Var, f64)> = Vec::new();
    let mut constant = 0.0;
    for (t, surface) in surfaces.iter().enumerate() {
        let blk = &rp.expected[t];
        for (g, c) in chords.iter().enumerate() {
            obj.push((blk.pg[g], -c.slope * base));
            constant -= c.intercept;
        }
        for (n, st) in model.storages.iter().enumerate() {
            obj.push((blk.pc[n], -st.c_charge * base));
            obj.push((blk.pd[n], -st.c_discharge * base));
        }
        let h = rp.program.free_var(format!("h[{}]", t + 1));
        for (k, c) in surface.distinct_pieces().iter().enumerate() {
            rp.program.add_ge(format!("h_piece{k}[{}]", t + 1), vec![(h, 1.0), (w[t].0, -c[0] * base), (w[t].1, -c[1] * base)], c[2]);
        }
        obj.push((h, 1.0));
    }
    rp.program.set_objective(obj, constant);
    let sol = solve(&rp.program, tol);
    match sol.status {
        Status::Optimal => Ok(-sol.objective),
        Status::Unbounded => Err(Error::Unbounded { stage: "compensation cost".into() }),
        Status::Infeasible => Err(Error::Infeasible { stage: "compensation cost".into() }),
        Status::NumericalTrouble => Err(Error::Numerical { stage: "compensation cost".into(), detail: sol.detail }),
    }
}

/// Builds every surface and the compensation cost.
pub fn build_bid(
    model: &NetworkModel,
    params: &ScheduleParams,
    scenarios: &ScenarioSet,
    env: &RegionEnvelope,
    refinement: usize,
    tol: &Tolerances,
) -> Result<(BidFunction, CostProgram)> {
    let cp = CostProgram::new(model, params, scenarios, env, tol)?;
    let surfaces = (0..model.horizon).map(|t| build_surface(&cp, env, t, refinement)).collect::<Result<Vec<_>>>()?;
    let epsilon = compensation_epsilon(model, params, scenarios, env, &surfaces, tol)?;
    Ok((BidFunction { surfaces, epsilon }, cp))
}
