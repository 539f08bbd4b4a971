//! The robust program: an expected-scenario block and one block per extreme
//! scenario for every period in a window, SOC recursions between periods,
//! cross-scenario cones and the expected-cost objective.

use serde::{Deserialize, Serialize};

use super::block::{
    build_cost_epigraph, build_coupling, build_cross_scenario_cones, build_scenario_block, tag, BlockLayout,
    BlockLimits, BlockVars, Lim, Pcc, PrevSoc,
};
use super::program::{cone_gap, ConicProgram, Var};
use super::solve::Solution;
use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::params::ScheduleParams;
use crate::scenario::ScenarioSet;

/// Day-ahead schedule handling.
#[derive(Debug, Clone)]
pub enum WMode {
    /// `(P, Q)` in MW/MVar for every period of the window.
    Fixed(Vec<[f64; 2]>),
    Free,
}

/// SOC entering the first period of the window.
#[derive(Debug, Clone)]
pub enum PrevState {
    /// Every storage starts at its initial SOC.
    Initial,
    /// A convex combination of the given state vectors (per-unit), with the
    /// weights introduced as program variables.
    Weighted(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
pub struct RobustSpec<'a> {
    pub model: &'a NetworkModel,
    pub params: &'a ScheduleParams,
    pub scenarios: &'a ScenarioSet,
    pub first: usize,
    pub last: usize,
    pub w: WMode,
    pub prev: PrevState,
}

impl<'a> RobustSpec<'a> {
    pub fn full(model: &'a NetworkModel, params: &'a ScheduleParams, scenarios: &'a ScenarioSet, w: WMode) -> Self {
        RobustSpec { model, params, scenarios, first: 0, last: model.horizon, w, prev: PrevState::Initial }
    }
}

/// Layout of the SOC state vector at the end of period `t`: the expected
/// block's SOC followed by the SOC of every history class at `t`.
pub fn state_len(model: &NetworkModel, scenarios: &ScenarioSet, t: usize) -> usize {
    model.storages.len() * (1 + scenarios.history_classes(t).len())
}

#[derive(Debug, Clone)]
pub struct RobustProgram {
    pub program: ConicProgram,
    pub first: usize,
    pub last: usize,
    pub s_base: f64,
    /// `(P, Q)` schedule variables per period of the window.
    pub w: Vec<(Var, Var)>,
    pub expected: Vec<BlockVars>,
    /// `extremes[t - first][s]`.
    pub extremes: Vec<Vec<BlockVars>>,
    /// Weights over the incoming state vectors when the window starts mid-horizon.
    pub nu: Vec<Var>,
    pub cross_cones: usize,
    cost_vars: Vec<Option<Vec<Var>>>,
}

/// Builds the robust program over `spec.first..spec.last`.
pub fn build_robust_program(spec: &RobustSpec) -> Result<RobustProgram> {
    let model = spec.model;
    let set = spec.scenarios;
    let base = model.base.s_mva;
    let ns = model.storages.len();
    if spec.first >= spec.last || spec.last > model.horizon {
        return Err(Error::Shape(format!("period window {}..{} outside horizon {}", spec.first, spec.last, model.horizon)));
    }
    if spec.params.horizon() != model.horizon || spec.params.pg_min.len() != model.generators.len() || spec.params.soc_min.len() != ns {
        return Err(Error::Shape("schedule parameters do not match the network".into()));
    }
    if set.uncertainty.n_der != model.ders.len() || set.uncertainty.horizon != model.horizon {
        return Err(Error::Shape("scenario set does not match the network".into()));
    }
    if let WMode::Fixed(w) = &spec.w {
        if w.len() != spec.last - spec.first {
            return Err(Error::Shape(format!("{} schedule points for {} periods", w.len(), spec.last - spec.first)));
        }
    }

    let mut prog = ConicProgram::new();
    let mut nu = Vec::new();
    let mut prev_expected: Vec<PrevSoc>;
    let mut prev_class: Vec<Vec<PrevSoc>>;
    let init: Vec<PrevSoc> = model.storages.iter().map(|st| PrevSoc::constant(st.s_initial / base)).collect();
    match &spec.prev {
        PrevState::Initial if spec.first == 0 => {
            prev_expected = init.clone();
            prev_class = vec![init.clone(); set.len()];
        }
        PrevState::Initial => {
            return Err(Error::Shape("a window starting after period 1 needs incoming states".into()));
        }
        PrevState::Weighted(states) => {
            if spec.first == 0 {
                return Err(Error::Shape("period 1 anchors to the initial SOC".into()));
            }
            let dim = state_len(model, set, spec.first - 1);
            if states.is_empty() || states.iter().any(|x| x.len() != dim) {
                return Err(Error::Shape(format!("incoming states must be non-empty with length {dim}")));
            }
            nu = (0..states.len()).map(|k| prog.add_var(format!("nu[{}][{k}]", spec.first + 1), 0.0, f64::INFINITY)).collect();
            prog.add_eq(format!("nu_simplex[{}]", spec.first + 1), nu.iter().map(|&v| (v, 1.0)).collect(), 1.0);
            let combo = |idx: usize| PrevSoc {
                terms: nu.iter().zip(states).map(|(&v, st)| (v, st[idx])).collect(),
                constant: 0.0,
            };
            prev_expected = (0..ns).map(combo).collect();
            let classes = set.history_classes(spec.first - 1);
            prev_class = (0..set.len())
                .map(|s| {
                    let rep = set.history_representative(s, spec.first - 1);
                    let c = classes.iter().position(|&r| r == rep).expect("representative is a class");
                    (0..ns).map(|n| combo(ns * (1 + c) + n)).collect()
                })
                .collect();
        }
    }

    let mut w_vars = Vec::new();
    let mut expected = Vec::new();
    let mut extremes = Vec::new();
    let mut cross = 0;
    for t in spec.first..spec.last {
        let k = t - spec.first;
        let wp = prog.free_var(format!("w_p[{}]", t + 1));
        let wq = prog.free_var(format!("w_q[{}]", t + 1));
        if let WMode::Fixed(w) = &spec.w {
            prog.fix(wp, w[k][0] / base);
            prog.fix(wq, w[k][1] / base);
        }
        w_vars.push((wp, wq));
        let limits = spec.params.block_limits(model, t);
        let modes = limits.modes.clone();

        let forecast: Vec<f64> = (0..model.ders.len()).map(|r| set.expected.values[set.uncertainty.coord(r, t)]).collect();
        let blk = build_scenario_block(&mut prog, model, t, 0, &forecast, &limits, Pcc::Schedule(wp, wq));
        build_coupling(&mut prog, model, t, 0, &blk, &prev_expected, modes.as_deref());
        add_cyclic(&mut prog, model, t, 0, &blk);

        let mut row = Vec::with_capacity(set.len());
        for s in 0..set.len() {
            let vals: Vec<f64> = (0..model.ders.len()).map(|r| set.value(s, r, t)).collect();
            let b = build_scenario_block(&mut prog, model, t, s + 1, &vals, &limits, Pcc::Band(wp, wq));
            build_coupling(&mut prog, model, t, s + 1, &b, &prev_class[s], modes.as_deref());
            add_cyclic(&mut prog, model, t, s + 1, &b);
            let rep = set.history_representative(s, t);
            if rep != s {
                for n in 0..ns {
                    prog.add_eq(format!("soc_tie{n}{}", tag(t, s + 1)), vec![(b.soc[n], 1.0), (row_soc(&row, rep, n), -1.0)], 0.0);
                }
            }
            row.push(b);
        }
        cross += build_cross_scenario_cones(&mut prog, model, &row);

        prev_expected = blk.soc.iter().map(|&v| PrevSoc::var(v)).collect();
        prev_class = row.iter().map(|b| b.soc.iter().map(|&v| PrevSoc::var(v)).collect()).collect();
        expected.push(blk);
        extremes.push(row);
    }

    let n_periods = spec.last - spec.first;
    Ok(RobustProgram {
        program: prog,
        first: spec.first,
        last: spec.last,
        s_base: base,
        w: w_vars,
        expected,
        extremes,
        nu,
        cross_cones: cross,
        cost_vars: vec![None; n_periods],
    })
}

fn row_soc(row: &[BlockVars], s: usize, n: usize) -> Var {
    row[s].soc[n]
}

fn add_cyclic(prog: &mut ConicProgram, model: &NetworkModel, t: usize, s: usize, blk: &BlockVars) {
    if t + 1 != model.horizon {
        return;
    }
    for (n, st) in model.storages.iter().enumerate() {
        prog.add_eq(format!("cyclic{n}{}", tag(t, s)), vec![(blk.soc[n], 1.0)], st.s_initial / model.base.s_mva);
    }
}

impl RobustProgram {
    pub fn periods(&self) -> std::ops::Range<usize> {
        self.first..self.last
    }

    /// Linear terms of the expected-scenario cost at period `t` in $, creating
    /// the generator epigraph variables on first use.
    pub fn period_cost_terms(&mut self, model: &NetworkModel, t: usize) -> Vec<(Var, f64)> {
        let k = t - self.first;
        if self.cost_vars[k].is_none() {
            let blk = &self.expected[k];
            let vars = model
                .generators
                .iter()
                .enumerate()
                .map(|(g, gen)| build_cost_epigraph(&mut self.program, gen, blk.pg[g], self.s_base, &format!("c_g{g}[{}]", t + 1)).0)
                .collect();
            self.cost_vars[k] = Some(vars);
        }
        let blk = &self.expected[k];
        let mut terms: Vec<(Var, f64)> = self.cost_vars[k].as_ref().expect("set above").iter().map(|&c| (c, 1.0)).collect();
        for (n, st) in model.storages.iter().enumerate() {
            terms.push((blk.pc[n], st.c_charge * self.s_base));
            terms.push((blk.pd[n], st.c_discharge * self.s_base));
        }
        terms
    }

    /// Sets the expected-cost objective summed over the window.
    pub fn set_expected_cost_objective(&mut self, model: &NetworkModel) {
        let mut terms = Vec::new();
        for t in self.periods() {
            terms.extend(self.period_cost_terms(model, t));
        }
        self.program.set_objective(terms, 0.0);
    }

    pub fn w_value(&self, sol: &Solution, t: usize) -> [f64; 2] {
        let (p, q) = self.w[t - self.first];
        [sol.value(p) * self.s_base, sol.value(q) * self.s_base]
    }

    /// Stacked block values `[x̃_t0, x_t1, …, x_t|S|]` at period `t`, per-unit.
    pub fn stacked(&self, sol: &Solution, t: usize) -> Vec<f64> {
        let k = t - self.first;
        std::iter::once(&self.expected[k])
            .chain(&self.extremes[k])
            .flat_map(|b| b.flatten())
            .map(|v| sol.value(v))
            .collect()
    }

    /// SOC state vector at the end of period `t` (per-unit).
    pub fn end_state(&self, sol: &Solution, scenarios: &ScenarioSet, t: usize) -> Vec<f64> {
        let k = t - self.first;
        let mut out: Vec<f64> = self.expected[k].soc.iter().map(|&v| sol.value(v)).collect();
        for rep in scenarios.history_classes(t) {
            out.extend(self.extremes[k][rep].soc.iter().map(|&v| sol.value(v)));
        }
        out
    }

    pub fn nu_values(&self, sol: &Solution) -> Vec<f64> {
        self.nu.iter().map(|&v| sol.value(v)).collect()
    }
}

/// `v·l − (P² + Q²)` for a branch cone of one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeGap {
    pub period: usize,
    /// 0 for the expected block, `s + 1` for extreme scenario `s`.
    pub scenario: usize,
    pub branch: usize,
    pub gap: f64,
}

/// Relaxation gaps of every own-block branch cone (cross-scenario cones excluded).
pub fn relaxation_gaps(model: &NetworkModel, rp: &RobustProgram, sol: &Solution) -> Vec<ConeGap> {
    let topo = model.topology();
    let mut out = Vec::new();
    for t in rp.periods() {
        let k = t - rp.first;
        for (s, blk) in std::iter::once(&rp.expected[k]).chain(&rp.extremes[k]).enumerate() {
            for b in 0..model.branches.len() {
                let cone = super::program::RotatedCone {
                    u: blk.v[topo.branch_parent[b]],
                    w: blk.l_br[b],
                    z: vec![blk.p_br[b], blk.q_br[b]],
                };
                out.push(ConeGap { period: t, scenario: s, branch: b, gap: cone_gap(&cone, &sol.x) });
            }
        }
    }
    out
}

/// Maximum relaxation gap over the expected blocks only.
pub fn max_expected_gap(gaps: &[ConeGap]) -> f64 {
    gaps.iter().filter(|g| g.scenario == 0).map(|g| g.gap).fold(0.0, f64::max)
}

/// Block limits for one period derived from fixed schedule parameters.
pub(crate) fn fixed_limits(model: &NetworkModel, params: &ScheduleParams, t: usize) -> BlockLimits {
    let base = model.base.s_mva;
    BlockLimits {
        pg_lo: params.pg_min.iter().map(|v| Lim::Const(v[t] / base)).collect(),
        pg_hi: params.pg_max.iter().map(|v| Lim::Const(v[t] / base)).collect(),
        soc_lo: params.soc_min.iter().map(|v| Lim::Const(v[t] / base)).collect(),
        soc_hi: params.soc_max.iter().map(|v| Lim::Const(v[t] / base)).collect(),
        modes: Some(params.modes.iter().map(|m| m[t]).collect()),
    }
}

/// Layout helper re-exported for stacked vectors.
pub fn layout(model: &NetworkModel) -> BlockLayout {
    BlockLayout::of(model)
}
