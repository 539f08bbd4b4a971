//! Single-period constraint groups: the per-scenario operating block, the
//! state-of-charge recursion, cross-scenario cones and cost epigraphs.

use serde::{Deserialize, Serialize};

use super::program::{ConicProgram, ConstraintId, Var};
use crate::network::{Generator, NetworkModel};
use crate::params::Mode;

/// A bound that is either data or a decision variable (per-unit).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lim {
    Const(f64),
    Var(Var),
}

/// Corridor limits and storage modes for one period.
#[derive(Debug, Clone)]
pub struct BlockLimits {
    pub pg_lo: Vec<Lim>,
    pub pg_hi: Vec<Lim>,
    pub soc_lo: Vec<Lim>,
    pub soc_hi: Vec<Lim>,
    /// `None` leaves charge and discharge both free.
    pub modes: Option<Vec<Mode>>,
}

/// How the block's PCC exchange relates to the day-ahead schedule `w_t`.
#[derive(Debug, Clone, Copy)]
pub enum Pcc {
    /// The block's exchange is `w_t` itself.
    Schedule(Var, Var),
    /// The block's exchange stays within the deviation band around `w_t`.
    Band(Var, Var),
}

/// Variable handles of one (period, scenario) block, all per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockVars {
    pub p_pcc: Var,
    pub q_pcc: Var,
    pub pg: Vec<Var>,
    pub qg: Vec<Var>,
    pub p_br: Vec<Var>,
    pub q_br: Vec<Var>,
    pub v: Vec<Var>,
    pub l_br: Vec<Var>,
    pub soc: Vec<Var>,
    pub pc: Vec<Var>,
    pub pd: Vec<Var>,
}

impl BlockVars {
    /// Variables in the fixed stacking order `[P_pcc, Q_pcc, P_g, Q_g, P_ij, Q_ij, v, l, S, Pc, Pd]`.
    pub fn flatten(&self) -> Vec<Var> {
        let mut out = vec![self.p_pcc, self.q_pcc];
        for group in [&self.pg, &self.qg, &self.p_br, &self.q_br, &self.v, &self.l_br, &self.soc, &self.pc, &self.pd] {
            out.extend_from_slice(group);
        }
        out
    }
}

/// Offsets of each group inside a flattened block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub n_gen: usize,
    pub n_branch: usize,
    pub n_bus: usize,
    pub n_storage: usize,
}

impl BlockLayout {
    pub fn of(model: &NetworkModel) -> Self {
        BlockLayout {
            n_gen: model.generators.len(),
            n_branch: model.branches.len(),
            n_bus: model.buses.len(),
            n_storage: model.storages.len(),
        }
    }

    pub fn len(&self) -> usize {
        2 + 2 * self.n_gen + 3 * self.n_branch + self.n_bus + 3 * self.n_storage
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pg(&self, g: usize) -> usize {
        2 + g
    }
    pub fn qg(&self, g: usize) -> usize {
        2 + self.n_gen + g
    }
    pub fn p_br(&self, b: usize) -> usize {
        2 + 2 * self.n_gen + b
    }
    pub fn q_br(&self, b: usize) -> usize {
        2 + 2 * self.n_gen + self.n_branch + b
    }
    pub fn v(&self, i: usize) -> usize {
        2 + 2 * self.n_gen + 2 * self.n_branch + i
    }
    pub fn l_br(&self, b: usize) -> usize {
        2 + 2 * self.n_gen + 2 * self.n_branch + self.n_bus + b
    }
    pub fn soc(&self, n: usize) -> usize {
        2 + 2 * self.n_gen + 3 * self.n_branch + self.n_bus + n
    }
    pub fn pc(&self, n: usize) -> usize {
        self.soc(n) + self.n_storage
    }
    pub fn pd(&self, n: usize) -> usize {
        self.soc(n) + 2 * self.n_storage
    }
}

/// Period and scenario suffix used in canonical variable names.
pub fn tag(t: usize, s: usize) -> String {
    format!("[{}][{}]", t + 1, s)
}

fn apply_lo(prog: &mut ConicProgram, name: String, x: Var, lim: Lim) {
    match lim {
        Lim::Const(c) => {
            let (lo, hi) = prog.bounds(x);
            prog.set_bounds(x, lo.max(c), hi);
        }
        Lim::Var(l) => {
            prog.add_ge(name, vec![(x, 1.0), (l, -1.0)], 0.0);
        }
    }
}

fn apply_hi(prog: &mut ConicProgram, name: String, x: Var, lim: Lim) {
    match lim {
        Lim::Const(c) => {
            let (lo, hi) = prog.bounds(x);
            prog.set_bounds(x, lo, hi.min(c));
        }
        Lim::Var(u) => {
            prog.add_le(name, vec![(x, 1.0), (u, -1.0)], 0.0);
        }
    }
}

/// Emits one operating block: nodal balance, voltage drop, flow bounds, branch
/// cones, corridor and device bounds, PCC band and storage mode fixing.
/// `der_mw` holds each DER's net demand at this period in MW.
#[allow(clippy::too_many_arguments)]
pub fn build_scenario_block(
    prog: &mut ConicProgram,
    model: &NetworkModel,
    t: usize,
    s: usize,
    der_mw: &[f64],
    limits: &BlockLimits,
    pcc: Pcc,
) -> BlockVars {
    let base = model.base.s_mva;
    let topo = model.topology();
    let sfx = tag(t, s);
    let inf = f64::INFINITY;

    let (p_pcc, q_pcc) = match pcc {
        Pcc::Schedule(p, q) => (p, q),
        Pcc::Band(wp, wq) => {
            let p = prog.free_var(format!("P_pcc{sfx}"));
            let q = prog.free_var(format!("Q_pcc{sfx}"));
            let (dp, dq) = (model.pcc.dp / base, model.pcc.dq / base);
            prog.add_le(format!("pcc_p_hi{sfx}"), vec![(p, 1.0), (wp, -1.0)], dp);
            prog.add_ge(format!("pcc_p_lo{sfx}"), vec![(p, 1.0), (wp, -1.0)], -dp);
            prog.add_le(format!("pcc_q_hi{sfx}"), vec![(q, 1.0), (wq, -1.0)], dq);
            prog.add_ge(format!("pcc_q_lo{sfx}"), vec![(q, 1.0), (wq, -1.0)], -dq);
            (p, q)
        }
    };

    let pg: Vec<Var> = (0..model.generators.len())
        .map(|g| prog.add_var(format!("P_g{g}{sfx}"), -inf, inf))
        .collect();
    let qg: Vec<Var> = model
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| prog.add_var(format!("Q_g{g}{sfx}"), gen.q_min / base, gen.q_max / base))
        .collect();
    for g in 0..pg.len() {
        apply_lo(prog, format!("pg_lo{g}{sfx}"), pg[g], limits.pg_lo[g]);
        apply_hi(prog, format!("pg_hi{g}{sfx}"), pg[g], limits.pg_hi[g]);
    }

    let br_name = |b: usize| {
        let br = &model.branches[b];
        format!("{}-{}", br.from, br.to)
    };
    let mut p_br = Vec::new();
    let mut q_br = Vec::new();
    let mut l_br = Vec::new();
    for b in 0..model.branches.len() {
        let (lo, hi) = model.oriented_flow_bounds(b);
        p_br.push(prog.add_var(format!("P_ij{}{sfx}", br_name(b)), lo / base, hi / base));
        q_br.push(prog.free_var(format!("Q_ij{}{sfx}", br_name(b))));
        l_br.push(prog.add_var(format!("l_ij{}{sfx}", br_name(b)), 0.0, inf));
    }
    let v: Vec<Var> = model
        .buses
        .iter()
        .map(|bus| prog.add_var(format!("v{}{sfx}", bus.id), bus.v_sq_min, bus.v_sq_max))
        .collect();

    let mut soc = Vec::new();
    let mut pc = Vec::new();
    let mut pd = Vec::new();
    for (n, st) in model.storages.iter().enumerate() {
        let x = prog.add_var(format!("S{n}{sfx}"), -inf, inf);
        apply_lo(prog, format!("soc_lo{n}{sfx}"), x, limits.soc_lo[n]);
        apply_hi(prog, format!("soc_hi{n}{sfx}"), x, limits.soc_hi[n]);
        soc.push(x);
        pc.push(prog.add_var(format!("Pc{n}{sfx}"), 0.0, st.pc_max / base));
        pd.push(prog.add_var(format!("Pd{n}{sfx}"), 0.0, st.pd_max / base));
        if let Some(modes) = &limits.modes {
            if modes[n] != Mode::Charge {
                prog.add_eq(format!("mode_c{n}{sfx}"), vec![(pc[n], 1.0)], 0.0);
            }
            if modes[n] != Mode::Discharge {
                prog.add_eq(format!("mode_d{n}{sfx}"), vec![(pd[n], 1.0)], 0.0);
            }
        }
    }

    for j in 0..model.n_bus() {
        let id = model.bus_id(j);
        let mut tp = Vec::new();
        let mut tq = Vec::new();
        if let Some(b) = topo.incoming[j] {
            let br = &model.branches[b];
            tp.extend([(p_br[b], 1.0), (l_br[b], -br.r)]);
            tq.extend([(q_br[b], 1.0), (l_br[b], -br.x)]);
        }
        for &b in &topo.outgoing[j] {
            tp.push((p_br[b], -1.0));
            tq.push((q_br[b], -1.0));
        }
        for &g in &topo.gens_at[j] {
            tp.push((pg[g], 1.0));
            tq.push((qg[g], 1.0));
        }
        for &n in &topo.storages_at[j] {
            tp.extend([(pd[n], 1.0), (pc[n], -1.0)]);
        }
        if j == topo.root {
            tp.push((p_pcc, 1.0));
            tq.push((q_pcc, 1.0));
        }
        let mut dp = 0.0;
        let mut dq = 0.0;
        for &r in &topo.ders_at[j] {
            dp += der_mw[r] / base;
            dq += model.ders[r].beta.tan() * der_mw[r] / base;
        }
        prog.add_eq(format!("bal_p{id}{sfx}"), tp, dp);
        prog.add_eq(format!("bal_q{id}{sfx}"), tq, dq);
    }

    for b in 0..model.branches.len() {
        let br = &model.branches[b];
        let (i, j) = (topo.branch_parent[b], topo.branch_child[b]);
        prog.add_eq(
            format!("vdrop{}{sfx}", br_name(b)),
            vec![
                (v[j], 1.0),
                (v[i], -1.0),
                (p_br[b], 2.0 * br.r),
                (q_br[b], 2.0 * br.x),
                (l_br[b], -(br.r * br.r + br.x * br.x)),
            ],
            0.0,
        );
        prog.add_rotated_cone(v[i], l_br[b], vec![p_br[b], q_br[b]]);
    }

    BlockVars { p_pcc, q_pcc, pg, qg, p_br, q_br, v, l_br, soc, pc, pd }
}

/// Previous-period SOC of one storage as `Σ terms + constant` (per-unit).
#[derive(Debug, Clone, Default)]
pub struct PrevSoc {
    pub terms: Vec<(Var, f64)>,
    pub constant: f64,
}

impl PrevSoc {
    pub fn constant(c: f64) -> Self {
        PrevSoc { terms: Vec::new(), constant: c }
    }

    pub fn var(v: Var) -> Self {
        PrevSoc { terms: vec![(v, 1.0)], constant: 0.0 }
    }
}

/// Mode-matched SOC recursion linking `block` to the previous period.
pub fn build_coupling(
    prog: &mut ConicProgram,
    model: &NetworkModel,
    t: usize,
    s: usize,
    block: &BlockVars,
    prev: &[PrevSoc],
    modes: Option<&[Mode]>,
) -> Vec<ConstraintId> {
    let sfx = tag(t, s);
    let mut ids = Vec::new();
    for (n, st) in model.storages.iter().enumerate() {
        let mut terms = vec![(block.soc[n], 1.0)];
        terms.extend(prev[n].terms.iter().map(|&(v, c)| (v, -c)));
        let mode = modes.map(|m| m[n]);
        if mode.is_none() || mode == Some(Mode::Charge) {
            terms.push((block.pc[n], -st.eta_c));
        }
        if mode.is_none() || mode == Some(Mode::Discharge) {
            terms.push((block.pd[n], 1.0 / st.eta_d));
        }
        ids.push(prog.add_eq(format!("soc_rec{n}{sfx}"), terms, prev[n].constant));
    }
    ids
}

/// Four cones per unordered scenario pair and branch:
/// `v_s·l_n` and `v_n·l_s` each dominate `P_s² + P_n²` and `Q_s² + Q_n²`.
pub fn build_cross_scenario_cones(prog: &mut ConicProgram, model: &NetworkModel, blocks: &[BlockVars]) -> usize {
    let topo = model.topology();
    let mut count = 0;
    for s in 0..blocks.len() {
        for n in s + 1..blocks.len() {
            let (a, b) = (&blocks[s], &blocks[n]);
            for br in 0..model.branches.len() {
                let i = topo.branch_parent[br];
                for (u, w) in [(a.v[i], b.l_br[br]), (b.v[i], a.l_br[br])] {
                    prog.add_rotated_cone(u, w, vec![a.p_br[br], b.p_br[br]]);
                    prog.add_rotated_cone(u, w, vec![a.q_br[br], b.q_br[br]]);
                    count += 2;
                }
            }
        }
    }
    count
}

/// Epigraph variable `c ≥ slope·P + intercept` for every cost piece, in $/h.
pub fn build_cost_epigraph(
    prog: &mut ConicProgram,
    gen: &Generator,
    p: Var,
    s_base: f64,
    name: &str,
) -> (Var, Vec<ConstraintId>) {
    let c = prog.free_var(name.to_string());
    let ids = gen
        .pieces()
        .iter()
        .enumerate()
        .map(|(k, piece)| {
            prog.add_ge(format!("{name}_piece{k}"), vec![(c, 1.0), (p, -piece.slope * s_base)], piece.intercept)
        })
        .collect();
    (c, ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{solve, Status, Tolerances};
    use crate::network::{Base, Branch, Bus, PccLimits, RenewableDer};

    fn lossless_pair(load: f64) -> NetworkModel {
        NetworkModel::new(
            Base { s_mva: 10.0, v_kv: 12.47 },
            vec![
                Bus { id: 1, v_sq_min: 0.9, v_sq_max: 1.1 },
                Bus { id: 2, v_sq_min: 0.9, v_sq_max: 1.1 },
            ],
            vec![Branch { from: 1, to: 2, r: 0.0, x: 0.0, p_min: -100.0, p_max: 100.0 }],
            vec![],
            vec![],
            vec![RenewableDer { bus: 2, beta: 0.0, forecast: vec![load], lo: vec![load], hi: vec![load] }],
            PccLimits { bus: 1, dp: 1.0, dq: 1.0 },
            1,
        )
        .unwrap()
    }

    fn no_limits() -> BlockLimits {
        BlockLimits { pg_lo: vec![], pg_hi: vec![], soc_lo: vec![], soc_hi: vec![], modes: None }
    }

    #[test]
    fn conservation_forces_pcc_import() {
        let m = lossless_pair(5.0);
        let mut p = ConicProgram::new();
        let wp = p.free_var("w_p");
        let wq = p.free_var("w_q");
        let blk = build_scenario_block(&mut p, &m, 0, 0, &[5.0], &no_limits(), Pcc::Schedule(wp, wq));
        p.set_objective(vec![(blk.l_br[0], 1.0)], 0.0);
        let sol = solve(&p, &Tolerances::default());
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.value(wp) * 10.0 - 5.0).abs() < 1e-6);
    }

    #[test]
    fn idle_mode_emits_equalities() {
        let mut m = lossless_pair(1.0);
        m.storages.push(crate::network::Storage {
            bus: 2,
            eta_c: 0.9,
            eta_d: 0.9,
            pc_max: 1.0,
            pd_max: 1.0,
            s_phys_min: 0.0,
            s_phys_max: 4.0,
            s_initial: 2.0,
            c_charge: 0.0,
            c_discharge: 0.0,
        });
        let m = m.finalize().unwrap();
        let mut p = ConicProgram::new();
        let wp = p.free_var("w_p");
        let wq = p.free_var("w_q");
        let lim = BlockLimits {
            pg_lo: vec![],
            pg_hi: vec![],
            soc_lo: vec![Lim::Const(0.0)],
            soc_hi: vec![Lim::Const(0.4)],
            modes: Some(vec![Mode::Idle]),
        };
        build_scenario_block(&mut p, &m, 0, 0, &[1.0], &lim, Pcc::Schedule(wp, wq));
        let names: Vec<&str> = p.constraints().iter().map(|c| c.name.as_str()).collect();
        assert!(names.contains(&"mode_c0[1][0]"));
        assert!(names.contains(&"mode_d0[1][0]"));
    }

    #[test]
    fn coupling_recursions() {
        let mut m = lossless_pair(1.0);
        m.storages.push(crate::network::Storage {
            bus: 2,
            eta_c: 0.9,
            eta_d: 0.8,
            pc_max: 5.0,
            pd_max: 5.0,
            s_phys_min: 0.0,
            s_phys_max: 10.0,
            s_initial: 5.0,
            c_charge: 0.0,
            c_discharge: 0.0,
        });
        let m = m.finalize().unwrap();
        let lim = |mode| BlockLimits {
            pg_lo: vec![],
            pg_hi: vec![],
            soc_lo: vec![Lim::Const(-10.0)],
            soc_hi: vec![Lim::Const(10.0)],
            modes: Some(vec![mode]),
        };
        // (mode, fixed power in MW, expected SOC change in MWh)
        for (mode, power, delta) in [(Mode::Charge, 2.0, 1.8), (Mode::Discharge, 2.0, -2.5), (Mode::Idle, 0.0, 0.0)] {
            let mut p = ConicProgram::new();
            let wp = p.free_var("w_p");
            let wq = p.free_var("w_q");
            let blk = build_scenario_block(&mut p, &m, 0, 0, &[1.0], &lim(mode), Pcc::Schedule(wp, wq));
            build_coupling(&mut p, &m, 0, 0, &blk, &[PrevSoc::constant(0.5)], Some(&[mode]));
            match mode {
                Mode::Charge => p.fix(blk.pc[0], power / 10.0),
                Mode::Discharge => p.fix(blk.pd[0], power / 10.0),
                Mode::Idle => {}
            }
            p.set_objective(vec![(blk.l_br[0], 1.0)], 0.0);
            let sol = solve(&p, &Tolerances::default());
            assert_eq!(sol.status, Status::Optimal, "{mode:?}");
            let ds = (sol.value(blk.soc[0]) - 0.5) * 10.0;
            assert!((ds - delta).abs() < 1e-6, "{mode:?}: {ds}");
        }
    }

    #[test]
    fn cross_cone_counts() {
        let m = lossless_pair(1.0);
        for (k, expected) in [(1usize, 0usize), (2, 4), (4, 24)] {
            let mut p = ConicProgram::new();
            let wp = p.free_var("w_p");
            let wq = p.free_var("w_q");
            let blocks: Vec<BlockVars> = (0..k)
                .map(|s| build_scenario_block(&mut p, &m, 0, s + 1, &[1.0], &no_limits(), Pcc::Band(wp, wq)))
                .collect();
            assert_eq!(build_cross_scenario_cones(&mut p, &m, &blocks), expected);
        }
    }

    fn gen_with(pieces: Vec<[f64; 2]>) -> Generator {
        Generator {
            bus: 1,
            p_phys_min: 0.0,
            p_phys_max: 20.0,
            q_min: 0.0,
            q_max: 0.0,
            ramp_down: -1.0,
            ramp_up: 1.0,
            cost_pieces: pieces,
        }
    }

    fn epigraph_at(gen: &Generator, p_mw: f64) -> (f64, Vec<f64>) {
        let mut p = ConicProgram::new();
        let x = p.add_var("P", p_mw, p_mw);
        let (c, ids) = build_cost_epigraph(&mut p, gen, x, 1.0, "c_g0");
        p.set_objective(vec![(c, 1.0)], 0.0);
        let sol = solve(&p, &Tolerances::default());
        let slacks = ids
            .iter()
            .map(|id| {
                let k = p.constraint(*id);
                ConicProgram::eval_terms(&k.terms, &sol.x) - k.rhs
            })
            .collect();
        (sol.value(c), slacks)
    }

    #[test]
    fn epigraph_values() {
        let g = gen_with(vec![[0.0, 0.0], [10.0, 20.0], [20.0, 60.0]]);
        assert!((epigraph_at(&g, 15.0).0 - 40.0).abs() < 1e-6);
        let lin = gen_with(vec![[0.0, 0.0], [20.0, 60.0]]);
        assert!((epigraph_at(&lin, 7.0).0 - 21.0).abs() < 1e-6);
        let (z, slacks) = epigraph_at(&g, 10.0);
        assert!((z - 20.0).abs() < 1e-6);
        assert!(slacks.iter().all(|s| s.abs() < 1e-6), "{slacks:?}");
    }
}
