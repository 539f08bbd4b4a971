//! Monte-Carlo intraday validation: envelope sampling, rolling operation
//! under observed DER output, constraint residuals and bid coverage.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::conic::block::{build_coupling, build_cost_epigraph, build_scenario_block};
use crate::conic::robust::{max_expected_gap, relaxation_gaps};
use crate::conic::{
    build_robust_program, solve, BlockLayout, ConicProgram, Pcc, PrevSoc, RobustSpec, Status, Tolerances, WMode,
};
use crate::cost::{evaluate_bid, true_cost, BidFunction};
use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::par::par_map;
use crate::params::ScheduleParams;
use crate::region::{membership, RegionEnvelope};
use crate::scenario::ScenarioSet;

/// Residual threshold for a feasible trace, per-unit.
pub const TOL_ROBUST: f64 = 1e-6;
/// Threshold for ramp and storage power violations, per-unit.
pub const TOL_LIMITS: f64 = 1e-8;
const MAX_REDRAWS: usize = 10;

/// Observed DER output in MW, indexed like the uncertainty box (`r * T + t`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub values: Vec<f64>,
}

impl Realization {
    pub fn get(&self, set: &ScenarioSet, der: usize, t: usize) -> f64 {
        self.values[set.uncertainty.coord(der, t)]
    }

    /// Values of every DER at period `t`.
    pub fn at(&self, set: &ScenarioSet, t: usize) -> Vec<f64> {
        (0..set.uncertainty.n_der).map(|r| self.get(set, r, t)).collect()
    }

    /// Uniform draw inside the box.
    pub fn sample(set: &ScenarioSet, rng: &mut impl Rng) -> Self {
        let bx = &set.uncertainty;
        let values = bx
            .lo
            .iter()
            .zip(&bx.hi)
            .zip(&bx.forecast)
            .map(|((&l, &h), &f)| if l < h { rng.gen_range(l..=h) } else { f })
            .collect();
        Realization { values }
    }
}

/// Tensor-product weights over the extreme scenarios for the output observed
/// up to period `t`. Coordinates of later periods sit at their forecast.
pub fn recombination_weights(set: &ScenarioSet, realization: &Realization, t: usize) -> Result<Vec<f64>> {
    let bx = &set.uncertainty;
    if realization.values.len() != bx.lo.len() {
        return Err(Error::Shape(format!("realization has {} values, box has {}", realization.values.len(), bx.lo.len())));
    }
    for r in 0..bx.n_der {
        for p in 0..=t.min(bx.horizon - 1) {
            let c = bx.coord(r, p);
            let v = realization.values[c];
            let slack = 1e-12 * (1.0 + bx.hi[c].abs());
            if !(v >= bx.lo[c] - slack && v <= bx.hi[c] + slack) {
                return Err(Error::OutsideBox { der: r, period: p + 1 });
            }
        }
    }
    let theta: Vec<f64> = set
        .free_coords
        .iter()
        .map(|&(r, p)| {
            let c = bx.coord(r, p);
            let v = if p <= t { realization.values[c] } else { bx.forecast[c] };
            ((v - bx.lo[c]) / (bx.hi[c] - bx.lo[c])).clamp(0.0, 1.0)
        })
        .collect();
    Ok((0..set.len())
        .map(|s| {
            theta
                .iter()
                .enumerate()
                .map(|(c, &th)| if set.at_hi(s, c) { th } else { 1.0 - th })
                .product()
        })
        .collect())
}

/// Componentwise convex combination of aligned scenario solutions.
pub fn recombine(lambda: &[f64], solutions: &[&[f64]]) -> Result<Vec<f64>> {
    if lambda.len() != solutions.len() || solutions.is_empty() {
        return Err(Error::Shape(format!("{} weights for {} solutions", lambda.len(), solutions.len())));
    }
    let n = solutions[0].len();
    if solutions.iter().any(|x| x.len() != n) {
        return Err(Error::Shape("scenario solutions differ in length".into()));
    }
    let mut out = vec![0.0; n];
    for (l, x) in lambda.iter().zip(solutions) {
        for (o, v) in out.iter_mut().zip(x.iter()) {
            *o += l * v;
        }
    }
    Ok(out)
}

/// Extreme-scenario blocks of a stacked vector `[expected, extreme 0, …]`.
pub fn extreme_blocks<'a>(y: &'a [f64], layout: &BlockLayout) -> Vec<&'a [f64]> {
    y.chunks(layout.len()).skip(1).collect()
}

/// A certified schedule drawn from the envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSample {
    pub index: usize,
    /// One `(P, Q)` per period, MW / MVar.
    pub w: Vec<[f64; 2]>,
    /// Envelope weights reproducing `w`.
    pub mu: Vec<Vec<f64>>,
    pub membership_residual: f64,
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let draw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draw.iter().sum();
    draw.into_iter().map(|x| x / total).collect()
}

/// Envelope weights nearest (L1) to `target`, or `None` when the solve fails.
fn repair_weights(env: &RegionEnvelope, target: &[Vec<f64>], tol: &Tolerances) -> Option<Vec<Vec<f64>>> {
    let (mut prog, _, vars) = crate::region::envelope_program(env);
    let mut obj = Vec::new();
    for (t, m) in vars.mu.iter().enumerate() {
        for (j, &v) in m.iter().enumerate() {
            let d = prog.add_var(format!("dmu[{}][{j}]", t + 1), 0.0, f64::INFINITY);
            prog.add_ge(format!("dmu_hi[{}][{j}]", t + 1), vec![(d, 1.0), (v, -1.0)], -target[t][j]);
            prog.add_ge(format!("dmu_lo[{}][{j}]", t + 1), vec![(d, 1.0), (v, 1.0)], target[t][j]);
            obj.push((d, 1.0));
        }
    }
    prog.set_objective(obj, 0.0);
    let sol = solve(&prog, tol);
    (sol.status == Status::Optimal).then(|| vars.mu.iter().map(|m| m.iter().map(|&v| sol.value(v).max(0.0)).collect()).collect())
}

fn has_coupling(env: &RegionEnvelope) -> bool {
    env.horizon() > 1 && env.periods.iter().any(|p| p.vertices.iter().any(|v| !v.soc_snapshot.is_empty()))
}

/// Draws `n` schedules: symmetric Dirichlet weights per period, repaired
/// onto the coupling conditions, each confirmed by a membership certificate.
pub fn sample_envelope(env: &RegionEnvelope, n: usize, seed: u64, tol: &Tolerances) -> Result<Vec<EnvelopeSample>> {
    let coupled = has_coupling(env);
    let idx: Vec<usize> = (0..n).collect();
    par_map(&idx, |&i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        for _ in 0..MAX_REDRAWS {
            let draw: Vec<Vec<f64>> = (0..env.horizon()).map(|t| dirichlet(&mut rng, env.vertices(t).len())).collect();
            let mu = if coupled {
                match repair_weights(env, &draw, tol) {
                    Some(mu) => mu,
                    None => continue,
                }
            } else {
                draw
            };
            let w: Vec<[f64; 2]> = mu.iter().enumerate().map(|(t, m)| env.reconstruct_w(t, m)).collect();
            let cert = membership(env, &w, tol)?;
            if cert.feasible {
                return Ok(EnvelopeSample { index: i, w, mu, membership_residual: cert.residual });
            }
        }
        Err(Error::Numerical { stage: "envelope sampling".into(), detail: format!("sample {i}: repair failed {MAX_REDRAWS} times") })
    })
    .into_iter()
    .collect()
}

/// Envelope point closest (L1) to the centroids of the certified projections.
pub fn central_schedule(env: &RegionEnvelope, tol: &Tolerances) -> Result<EnvelopeSample> {
    let base = env.s_base;
    let (mut prog, wv, vars) = crate::region::envelope_program(env);
    let mut obj = Vec::new();
    for (t, &(p, q)) in wv.iter().enumerate() {
        let c = env.certified[t].centroid();
        for (k, (v, target)) in [(p, c[0] / base), (q, c[1] / base)].into_iter().enumerate() {
            let d = prog.add_var(format!("dc{k}[{}]", t + 1), 0.0, f64::INFINITY);
            prog.add_ge(format!("dc_hi{k}[{}]", t + 1), vec![(d, 1.0), (v, -1.0)], -target);
            prog.add_ge(format!("dc_lo{k}[{}]", t + 1), vec![(d, 1.0), (v, 1.0)], target);
            obj.push((d, 1.0));
        }
    }
    prog.set_objective(obj, 0.0);
    let sol = solve(&prog, tol).require_optimal("central schedule")?;
    let mu: Vec<Vec<f64>> = vars.mu.iter().map(|m| m.iter().map(|&v| sol.value(v).max(0.0)).collect()).collect();
    let w: Vec<[f64; 2]> = mu.iter().enumerate().map(|(t, m)| env.reconstruct_w(t, m)).collect();
    let cert = membership(env, &w, tol)?;
    Ok(EnvelopeSample { index: 0, w, mu, membership_residual: cert.residual })
}

/// Largest violation per constraint family, per-unit. `cone` is the signed
/// gap `P² + Q² − v·l` (negative when strictly inside).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    pub balance_p: f64,
    pub balance_q: f64,
    pub voltage_drop: f64,
    pub bounds: f64,
    pub pcc: f64,
    pub cone: f64,
    pub cyclic: f64,
    pub complementarity: f64,
    pub ramp: f64,
    pub storage_power: f64,
    pub soc_recursion: f64,
    /// `v·l − (P² + Q²)`, the slack of the relaxed branch cones.
    pub relaxation_gap: f64,
}

impl Residuals {
    fn families(&self) -> [(&'static str, f64); 11] {
        [
            ("balance_p", self.balance_p),
            ("balance_q", self.balance_q),
            ("voltage_drop", self.voltage_drop),
            ("bounds", self.bounds),
            ("pcc", self.pcc),
            ("cone", self.cone.max(0.0)),
            ("cyclic", self.cyclic),
            ("complementarity", self.complementarity),
            ("ramp", self.ramp),
            ("storage_power", self.storage_power),
            ("soc_recursion", self.soc_recursion),
        ]
    }

    /// Worst family and its violation.
    pub fn worst(&self) -> (&'static str, f64) {
        self.families().into_iter().fold(("none", 0.0), |a, b| if b.1 > a.1 { b } else { a })
    }

    pub fn max_violation(&self) -> f64 {
        self.worst().1
    }

    fn merge(&mut self, o: &Residuals) {
        self.balance_p = self.balance_p.max(o.balance_p);
        self.balance_q = self.balance_q.max(o.balance_q);
        self.voltage_drop = self.voltage_drop.max(o.voltage_drop);
        self.bounds = self.bounds.max(o.bounds);
        self.pcc = self.pcc.max(o.pcc);
        self.cone = self.cone.max(o.cone);
        self.cyclic = self.cyclic.max(o.cyclic);
        self.complementarity = self.complementarity.max(o.complementarity);
        self.ramp = self.ramp.max(o.ramp);
        self.storage_power = self.storage_power.max(o.storage_power);
        self.soc_recursion = self.soc_recursion.max(o.soc_recursion);
        self.relaxation_gap = self.relaxation_gap.max(o.relaxation_gap);
    }
}

fn above(x: f64, lo: f64, hi: f64) -> f64 {
    (lo - x).max(x - hi).max(0.0)
}

/// Checks one operating point `x` (a block in layout order, per-unit) at
/// period `t` against the network constraints. `prev` is the decision of the
/// previous period; `der_mw` the realized DER output; `w` the schedule in MW.
pub fn constraint_residuals(
    model: &NetworkModel,
    t: usize,
    x: &[f64],
    prev: Option<&[f64]>,
    der_mw: &[f64],
    w: [f64; 2],
) -> Residuals {
    let base = model.base.s_mva;
    let topo = model.topology();
    let lay = BlockLayout::of(model);
    let mut r = Residuals { cone: f64::NEG_INFINITY, ..Residuals::default() };

    for j in 0..model.n_bus() {
        let mut bp = 0.0;
        let mut bq = 0.0;
        if let Some(b) = topo.incoming[j] {
            let br = &model.branches[b];
            bp += x[lay.p_br(b)] - br.r * x[lay.l_br(b)];
            bq += x[lay.q_br(b)] - br.x * x[lay.l_br(b)];
        }
        for &b in &topo.outgoing[j] {
            bp -= x[lay.p_br(b)];
            bq -= x[lay.q_br(b)];
        }
        for &g in &topo.gens_at[j] {
            bp += x[lay.pg(g)];
            bq += x[lay.qg(g)];
        }
        for &n in &topo.storages_at[j] {
            bp += x[lay.pd(n)] - x[lay.pc(n)];
        }
        if j == topo.root {
            bp += x[0];
            bq += x[1];
        }
        for &d in &topo.ders_at[j] {
            bp -= der_mw[d] / base;
            bq -= model.ders[d].beta.tan() * der_mw[d] / base;
        }
        r.balance_p = r.balance_p.max(bp.abs());
        r.balance_q = r.balance_q.max(bq.abs());
    }

    for (b, br) in model.branches.iter().enumerate() {
        let (i, j) = (topo.branch_parent[b], topo.branch_child[b]);
        let (p, q, l) = (x[lay.p_br(b)], x[lay.q_br(b)], x[lay.l_br(b)]);
        let drop = x[lay.v(j)] - x[lay.v(i)] + 2.0 * br.r * p + 2.0 * br.x * q - (br.r * br.r + br.x * br.x) * l;
        r.voltage_drop = r.voltage_drop.max(drop.abs());
        let gap = p * p + q * q - x[lay.v(i)] * l;
        r.cone = r.cone.max(gap);
        r.relaxation_gap = r.relaxation_gap.max(-gap);
        let (lo, hi) = model.oriented_flow_bounds(b);
        r.bounds = r.bounds.max(above(p, lo / base, hi / base)).max((-l).max(0.0));
    }
    if model.branches.is_empty() {
        r.cone = 0.0;
    }
    for (i, bus) in model.buses.iter().enumerate() {
        r.bounds = r.bounds.max(above(x[lay.v(i)], bus.v_sq_min, bus.v_sq_max));
    }
    for (g, gen) in model.generators.iter().enumerate() {
        let pg = x[lay.pg(g)];
        r.bounds = r.bounds.max(above(pg, gen.p_phys_min / base, gen.p_phys_max / base));
        r.bounds = r.bounds.max(above(x[lay.qg(g)], gen.q_min / base, gen.q_max / base));
        if let Some(p) = prev {
            r.ramp = r.ramp.max(above(pg - p[lay.pg(g)], gen.ramp_down / base, gen.ramp_up / base));
        }
    }
    r.pcc = above(x[0], (w[0] - model.pcc.dp) / base, (w[0] + model.pcc.dp) / base)
        .max(above(x[1], (w[1] - model.pcc.dq) / base, (w[1] + model.pcc.dq) / base));

    for (n, st) in model.storages.iter().enumerate() {
        let (s, pc, pd) = (x[lay.soc(n)], x[lay.pc(n)], x[lay.pd(n)]);
        r.bounds = r.bounds.max(above(s, st.s_phys_min / base, st.s_phys_max / base));
        r.storage_power = r.storage_power.max(above(pc, 0.0, st.pc_max / base)).max(above(pd, 0.0, st.pd_max / base));
        r.complementarity = r.complementarity.max(pc.min(pd).max(0.0));
        let s_prev = prev.map_or(st.s_initial / base, |p| p[lay.soc(n)]);
        r.soc_recursion = r.soc_recursion.max((s - s_prev - st.eta_c * pc + pd / st.eta_d).abs());
        if t + 1 == model.horizon {
            r.cyclic = r.cyclic.max((s - st.s_initial / base).abs());
        }
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    /// Convex combination of the stored scenario solutions.
    Recombine,
    /// Zero-objective feasibility solve per period with storage modes fixed.
    Resolve,
}

impl std::str::FromStr for SimMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recombine" => Ok(SimMode::Recombine),
            "resolve" => Ok(SimMode::Resolve),
            other => Err(Error::validation(format!("unknown mode {other:?}; expected recombine or resolve"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePeriod {
    pub period: usize,
    /// Weights over the extreme scenarios (empty in resolve mode).
    pub lambda: Vec<f64>,
    /// Decision in block layout order, per-unit.
    pub x: Vec<f64>,
    pub residuals: Residuals,
    /// `P_g,t − P_g,t−1` in MW (empty at the first period).
    pub ramp_mw: Vec<f64>,
    pub charge_mw: Vec<f64>,
    pub discharge_mw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntradayTrace {
    pub sample: usize,
    pub stream: usize,
    pub mode: SimMode,
    pub w: Vec<[f64; 2]>,
    pub periods: Vec<TracePeriod>,
    pub feasible: bool,
    /// Why the trace stopped or failed, if it did.
    pub failure: Option<String>,
}

impl IntradayTrace {
    pub fn residuals(&self) -> Residuals {
        let mut r = Residuals::default();
        for p in &self.periods {
            r.merge(&p.residuals);
        }
        r
    }
}

fn resolve_period(
    model: &NetworkModel,
    params: &ScheduleParams,
    t: usize,
    w: [f64; 2],
    der_mw: &[f64],
    prev: Option<&[f64]>,
    tol: &Tolerances,
) -> Result<Vec<f64>> {
    let base = model.base.s_mva;
    let lay = BlockLayout::of(model);
    let mut prog = ConicProgram::new();
    let wp = prog.free_var(format!("w_p[{}]", t + 1));
    let wq = prog.free_var(format!("w_q[{}]", t + 1));
    prog.fix(wp, w[0] / base);
    prog.fix(wq, w[1] / base);
    let limits = params.block_limits(model, t);
    let blk = build_scenario_block(&mut prog, model, t, 0, der_mw, &limits, Pcc::Band(wp, wq));
    let prev_soc: Vec<PrevSoc> = model
        .storages
        .iter()
        .enumerate()
        .map(|(n, st)| PrevSoc::constant(prev.map_or(st.s_initial / base, |p| p[lay.soc(n)])))
        .collect();
    build_coupling(&mut prog, model, t, 0, &blk, &prev_soc, limits.modes.as_deref());
    if t + 1 == model.horizon {
        for (n, st) in model.storages.iter().enumerate() {
            prog.add_eq(format!("cyclic{n}[{}]", t + 1), vec![(blk.soc[n], 1.0)], st.s_initial / base);
        }
    }
    if let Some(p) = prev {
        for (g, gen) in model.generators.iter().enumerate() {
            let last = p[lay.pg(g)];
            let (lo, hi) = prog.bounds(blk.pg[g]);
            prog.set_bounds(blk.pg[g], lo.max(last + gen.ramp_down / base), hi.min(last + gen.ramp_up / base));
        }
    }
    prog.set_objective(Vec::new(), 0.0);
    let sol = solve(&prog, tol).require_optimal(&format!("resolve period {}", t + 1))?;
    Ok(blk.flatten().iter().map(|&v| sol.value(v)).collect())
}

/// Operates the feeder period by period against `realization`, using only
/// the output observed so far. A failing period ends the trace.
#[allow(clippy::too_many_arguments)]
pub fn rolling_simulate(
    model: &NetworkModel,
    params: &ScheduleParams,
    set: &ScenarioSet,
    env: &RegionEnvelope,
    sample: &EnvelopeSample,
    realization: &Realization,
    mode: SimMode,
    tol: &Tolerances,
) -> IntradayTrace {
    let base = model.base.s_mva;
    let lay = BlockLayout::of(model);
    let mut trace = IntradayTrace {
        sample: sample.index,
        stream: 0,
        mode,
        w: sample.w.clone(),
        periods: Vec::new(),
        feasible: true,
        failure: None,
    };
    let mut prev: Option<Vec<f64>> = None;
    for t in 0..model.horizon {
        let der = realization.at(set, t);
        let step = match mode {
            SimMode::Recombine => recombination_weights(set, realization, t).and_then(|lambda| {
                let y = env.recombine_y(t, &sample.mu[t]);
                recombine(&lambda, &extreme_blocks(&y, &lay)).map(|x| (lambda, x))
            }),
            SimMode::Resolve => {
                resolve_period(model, params, t, sample.w[t], &der, prev.as_deref(), tol).map(|x| (Vec::new(), x))
            }
        };
        let (lambda, x) = match step {
            Ok(v) => v,
            Err(e) => {
                trace.feasible = false;
                trace.failure = Some(format!("period {}: {e}", t + 1));
                return trace;
            }
        };
        let residuals = constraint_residuals(model, t, &x, prev.as_deref(), &der, sample.w[t]);
        let ramp_mw = match &prev {
            Some(p) => (0..lay.n_gen).map(|g| (x[lay.pg(g)] - p[lay.pg(g)]) * base).collect(),
            None => Vec::new(),
        };
        if residuals.max_violation() > TOL_ROBUST && trace.failure.is_none() {
            let (fam, v) = residuals.worst();
            trace.feasible = false;
            trace.failure = Some(format!("period {}: {fam} residual {v:.3e}", t + 1));
        }
        trace.periods.push(TracePeriod {
            period: t + 1,
            lambda,
            charge_mw: (0..lay.n_storage).map(|n| x[lay.pc(n)] * base).collect(),
            discharge_mw: (0..lay.n_storage).map(|n| x[lay.pd(n)] * base).collect(),
            x: x.clone(),
            residuals,
            ramp_mw,
        });
        prev = Some(x);
    }
    trace
}

/// Per-sample bid against the true cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub sample: usize,
    pub bid_usd: f64,
    pub true_usd: f64,
    /// `true − Σ_t ẑ_t`, the excess the compensation cost has to absorb.
    pub excess_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n: usize,
    pub epsilon: f64,
    /// `min(bid − z)` over the samples.
    pub min_margin: f64,
    pub max_excess: f64,
    /// Whether `ε ≥ max_excess − 1e−6`.
    pub epsilon_covers: bool,
    /// Samples with `bid − z < −1e−6·max(1, z)` or a failed cost solve.
    pub failures: Vec<usize>,
    pub rows: Vec<CoverageRow>,
}

/// Compares the bid with the true minimum cost at every sample.
pub fn cost_coverage_check(
    model: &NetworkModel,
    params: &ScheduleParams,
    set: &ScenarioSet,
    bid: &BidFunction,
    samples: &[EnvelopeSample],
    tol: &Tolerances,
) -> CoverageReport {
    let results = par_map(samples, |s| -> Result<CoverageRow> {
        let bid_usd = evaluate_bid(bid, &s.w)?;
        let true_usd = true_cost(model, params, set, &s.w, tol)?;
        Ok(CoverageRow { sample: s.index, bid_usd, true_usd, excess_usd: true_usd - (bid_usd - bid.epsilon) })
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (s, r) in samples.iter().zip(results) {
        match r {
            Ok(row) => {
                if row.bid_usd - row.true_usd < -1e-6 * row.true_usd.abs().max(1.0) {
                    failures.push(row.sample);
                }
                rows.push(row);
            }
            Err(e) => {
                log::warn!("coverage sample {}: {e}", s.index);
                failures.push(s.index);
            }
        }
    }
    let min_margin = rows.iter().map(|r| r.bid_usd - r.true_usd).fold(f64::INFINITY, f64::min);
    let max_excess = rows.iter().map(|r| r.excess_usd).fold(f64::NEG_INFINITY, f64::max);
    CoverageReport {
        n: samples.len(),
        epsilon: bid.epsilon,
        min_margin,
        max_excess,
        epsilon_covers: rows.is_empty() || bid.epsilon >= max_excess - 1e-6,
        failures,
        rows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidateOptions {
    pub samples: usize,
    pub realizations: usize,
    pub seed: u64,
    pub mode: SimMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LimitStats {
    /// Largest `|ΔP_g|` in MW.
    pub max_ramp_mw: f64,
    pub ramp_violations: usize,
    pub max_charge_mw: f64,
    pub max_discharge_mw: f64,
    pub storage_power_violations: usize,
    /// Periods where a storage both charges and discharges.
    pub simultaneous: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub mode: SimMode,
    pub n_samples: usize,
    pub n_realizations: usize,
    pub n_traces: usize,
    pub feasible_traces: usize,
    pub feasibility_rate: f64,
    pub max_residual: f64,
    pub max_residual_family: String,
    /// Worst violation of every family over all traces, per-unit.
    pub family_max: BTreeMap<String, f64>,
    pub limits: LimitStats,
    /// Largest slack of a relaxed branch cone in any traced decision.
    pub max_relaxation_gap: f64,
    pub coverage: Option<CoverageReport>,
    /// One line per infeasible trace.
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.feasible_traces == self.n_traces && self.coverage.as_ref().is_none_or(|c| c.failures.is_empty())
    }
}

/// Realization stream `k` of sample `i`, reproducible from the seed alone.
pub fn realization_stream(set: &ScenarioSet, seed: u64, sample: usize, k: usize, per_sample: usize) -> Realization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    rng.set_stream((sample * per_sample + k) as u64);
    Realization::sample(set, &mut rng)
}

/// Samples the envelope, simulates every sample against fresh realizations
/// and, when a bid is given, checks its coverage on the same samples.
pub fn validate(
    model: &NetworkModel,
    params: &ScheduleParams,
    set: &ScenarioSet,
    env: &RegionEnvelope,
    bid: Option<&BidFunction>,
    opts: &ValidateOptions,
    tol: &Tolerances,
) -> Result<(ValidationReport, Vec<IntradayTrace>)> {
    let samples = sample_envelope(env, opts.samples, opts.seed, tol)?;
    let traces: Vec<IntradayTrace> = par_map(&samples, |s| {
        (0..opts.realizations)
            .map(|k| {
                let real = realization_stream(set, opts.seed, s.index, k, opts.realizations);
                let mut tr = rolling_simulate(model, params, set, env, s, &real, opts.mode, tol);
                tr.stream = k;
                tr
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();

    let mut total = Residuals::default();
    let mut limits = LimitStats::default();
    let mut failures = Vec::new();
    let base = model.base.s_mva;
    for tr in &traces {
        if let Some(f) = &tr.failure {
            failures.push(format!("sample {} stream {}: {f}", tr.sample, tr.stream));
        }
        for p in &tr.periods {
            total.merge(&p.residuals);
            if p.residuals.ramp > TOL_LIMITS {
                limits.ramp_violations += 1;
            }
            if p.residuals.storage_power > TOL_LIMITS {
                limits.storage_power_violations += 1;
            }
            limits.max_ramp_mw = p.ramp_mw.iter().fold(limits.max_ramp_mw, |a, d| a.max(d.abs()));
            limits.max_charge_mw = p.charge_mw.iter().fold(limits.max_charge_mw, |a, &d| a.max(d));
            limits.max_discharge_mw = p.discharge_mw.iter().fold(limits.max_discharge_mw, |a, &d| a.max(d));
            limits.simultaneous += p
                .charge_mw
                .iter()
                .zip(&p.discharge_mw)
                .filter(|(c, d)| c.min(**d) > TOL_LIMITS * base)
                .count();
        }
    }
    let coverage = bid.map(|b| cost_coverage_check(model, params, set, b, &samples, tol));
    let feasible = traces.iter().filter(|t| t.feasible).count();
    let (fam, worst) = total.worst();
    let report = ValidationReport {
        seed: opts.seed,
        mode: opts.mode,
        n_samples: samples.len(),
        n_realizations: opts.realizations,
        n_traces: traces.len(),
        feasible_traces: feasible,
        feasibility_rate: if traces.is_empty() { 1.0 } else { feasible as f64 / traces.len() as f64 },
        max_residual: worst,
        max_residual_family: fam.to_string(),
        family_max: total.families().iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        limits,
        max_relaxation_gap: total.relaxation_gap,
        coverage,
        failures,
    };
    Ok((report, traces))
}

/// Minimum expected cost of the forecast-only dispatch with storage modes and
/// corridors taken from `params` and the PCC exchange left free.
pub fn deterministic_dispatch(model: &NetworkModel, params: &ScheduleParams, tol: &Tolerances) -> Result<f64> {
    let base = model.base.s_mva;
    let mut prog = ConicProgram::new();
    let mut prev: Vec<PrevSoc> = model.storages.iter().map(|st| PrevSoc::constant(st.s_initial / base)).collect();
    let mut obj = Vec::new();
    for t in 0..model.horizon {
        let wp = prog.free_var(format!("w_p[{}]", t + 1));
        let wq = prog.free_var(format!("w_q[{}]", t + 1));
        let der: Vec<f64> = model.ders.iter().map(|d| d.forecast[t]).collect();
        let limits = params.block_limits(model, t);
        let blk = build_scenario_block(&mut prog, model, t, 0, &der, &limits, Pcc::Schedule(wp, wq));
        build_coupling(&mut prog, model, t, 0, &blk, &prev, limits.modes.as_deref());
        for (g, gen) in model.generators.iter().enumerate() {
            let (c, _) = build_cost_epigraph(&mut prog, gen, blk.pg[g], base, &format!("c_g{g}[{}]", t + 1));
            obj.push((c, 1.0));
        }
        for (n, st) in model.storages.iter().enumerate() {
            obj.push((blk.pc[n], st.c_charge * base));
            obj.push((blk.pd[n], st.c_discharge * base));
            if t + 1 == model.horizon {
                prog.add_eq(format!("cyclic{n}[{}]", t + 1), vec![(blk.soc[n], 1.0)], st.s_initial / base);
            }
        }
        prev = blk.soc.iter().map(|&v| PrevSoc::var(v)).collect();
    }
    prog.set_objective(obj, 0.0);
    Ok(solve(&prog, tol).require_optimal("deterministic dispatch")?.objective)
}

/// Robust expected-cost optimum with the schedule left free.
pub fn robust_objective(model: &NetworkModel, params: &ScheduleParams, set: &ScenarioSet, tol: &Tolerances) -> Result<f64> {
    let mut rp = build_robust_program(&RobustSpec::full(model, params, set, WMode::Free))?;
    rp.set_expected_cost_objective(model);
    Ok(solve(&rp.program, tol).require_optimal("robust dispatch")?.objective)
}

/// Largest expected-block cone slack of a cost-minimizing robust solve, with
/// the schedule fixed to `w` or left free when `w` is `None`. Among the
/// cost-optimal points the one with the least total branch current is taken,
/// since free PCC exchange can otherwise cover fictitious losses at no cost.
pub fn relaxation_diagnostic(
    model: &NetworkModel,
    params: &ScheduleParams,
    set: &ScenarioSet,
    w: Option<&[[f64; 2]]>,
    tol: &Tolerances,
) -> Result<f64> {
    let mode = w.map_or(WMode::Free, |w| WMode::Fixed(w.to_vec()));
    let mut rp = build_robust_program(&RobustSpec::full(model, params, set, mode))?;
    let cost: Vec<_> = rp.periods().flat_map(|t| rp.period_cost_terms(model, t)).collect();
    rp.program.set_objective(cost.clone(), 0.0);
    let z = solve(&rp.program, tol).require_optimal("relaxation diagnostic")?.objective;
    rp.program.add_le("cost_cap", cost, z + 1e-7 * z.abs().max(1.0));
    let currents = rp.expected.iter().chain(rp.extremes.iter().flatten()).flat_map(|b| b.l_br.iter().map(|&v| (v, 1.0)));
    rp.program.set_objective(currents.collect(), 0.0);
    let sol = solve(&rp.program, tol).require_optimal("relaxation diagnostic (least current)")?;
    Ok(max_expected_gap(&relaxation_gaps(model, &rp, &sol)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{enumerate_vertices, UncertaintyBox};

    fn set_of(lo: Vec<f64>, hi: Vec<f64>, horizon: usize) -> ScenarioSet {
        let forecast = lo.iter().zip(&hi).map(|(a, b)| (a + b) / 2.0).collect();
        let n_der = lo.len() / horizon;
        enumerate_vertices(&UncertaintyBox { n_der, horizon, lo, hi, forecast }, 64).unwrap()
    }

    #[test]
    fn midpoint_splits_evenly() {
        let set = set_of(vec![10.0], vec![20.0], 1);
        let l = recombination_weights(&set, &Realization { values: vec![15.0] }, 0).unwrap();
        assert_eq!(l, vec![0.5, 0.5]);
        let l = recombination_weights(&set, &Realization { values: vec![20.0] }, 0).unwrap();
        assert_eq!(l, vec![0.0, 1.0]);
    }

    #[test]
    fn two_ders_product_rule() {
        let set = set_of(vec![0.0, 0.0], vec![1.0, 1.0], 1);
        let obs = [0.25, 0.75];
        let l = recombination_weights(&set, &Realization { values: obs.to_vec() }, 0).unwrap();
        let want = [0.1875, 0.5625, 0.0625, 0.1875];
        for (a, b) in l.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        for (r, &o) in obs.iter().enumerate() {
            let rec: f64 = l.iter().enumerate().map(|(s, w)| w * set.value(s, r, 0)).sum();
            assert!((rec - o).abs() <= 1e-12);
        }
    }

    #[test]
    fn outside_box_is_rejected() {
        let set = set_of(vec![10.0], vec![20.0], 1);
        let e = recombination_weights(&set, &Realization { values: vec![21.0] }, 0).unwrap_err();
        assert!(matches!(e, Error::OutsideBox { der: 0, period: 1 }));
    }

    #[test]
    fn future_coordinates_stay_at_forecast() {
        let set = set_of(vec![0.0, 0.0], vec![1.0, 1.0], 2);
        let a = recombination_weights(&set, &Realization { values: vec![0.2, 0.9] }, 0).unwrap();
        let b = recombination_weights(&set, &Realization { values: vec![0.2, 0.1] }, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn recombine_one_hot_and_identical() {
        let x = [1.0, 2.0];
        let y = [3.0, 5.0];
        assert_eq!(recombine(&[0.0, 1.0], &[&x, &y]).unwrap(), y.to_vec());
        let same = recombine(&[0.3, 0.7], &[&x, &x]).unwrap();
        assert!((same[0] - 1.0).abs() < 1e-15 && (same[1] - 2.0).abs() < 1e-15);
        assert!(recombine(&[1.0], &[&x, &y]).is_err());
    }
}
