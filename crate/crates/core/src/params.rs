//! Selection of generator and SOC corridors and the storage-mode partition.
//!
//! The selection maximizes normalized corridor widths around a forecast
//! dispatch. It is solved mode-free first; if the balance duals and the
//! resulting charge/discharge pattern are consistent, the modes are read off
//! the dispatch and the program is re-solved with modes fixed and the
//! corridor rules for charging and discharging enforced. Otherwise every
//! mode partition is tried.

use serde::{Deserialize, Serialize};

use crate::conic::block::{build_coupling, build_scenario_block, BlockLimits, BlockVars, Lim, Pcc, PrevSoc};
use crate::conic::{solve, ConicProgram, ConstraintId, Solution, Tolerances, Var};
use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::par::par_map;

pub const DEFAULT_ZETA: f64 = 1e-3;
pub const TOL_DUAL: f64 = 1e-8;
pub const TOL_MODE: f64 = 1e-6;
pub const DEFAULT_MODE_CAP: usize = 729;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Charge,
    Discharge,
    Idle,
}

/// Corridors per device and period in MW / MWh, indexed `[device][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub horizon: usize,
    pub pg_min: Vec<Vec<f64>>,
    pub pg_max: Vec<Vec<f64>>,
    pub soc_min: Vec<Vec<f64>>,
    pub soc_max: Vec<Vec<f64>>,
    pub modes: Vec<Vec<Mode>>,
}

impl ScheduleParams {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Physical capacities as corridors with every storage idle.
    pub fn physical(model: &NetworkModel) -> Self {
        let t = model.horizon;
        ScheduleParams {
            horizon: t,
            pg_min: model.generators.iter().map(|g| vec![g.p_phys_min; t]).collect(),
            pg_max: model.generators.iter().map(|g| vec![g.p_phys_max; t]).collect(),
            soc_min: model.storages.iter().map(|s| vec![s.s_phys_min; t]).collect(),
            soc_max: model.storages.iter().map(|s| vec![s.s_phys_max; t]).collect(),
            modes: model.storages.iter().map(|_| vec![Mode::Idle; t]).collect(),
        }
    }

    pub fn block_limits(&self, model: &NetworkModel, t: usize) -> BlockLimits {
        crate::conic::robust::fixed_limits(model, self, t)
    }

    /// Violations of the corridor rules, one message each; empty when all hold.
    pub fn check_rules(&self, model: &NetworkModel, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        let t_len = model.horizon;
        for (g, gen) in model.generators.iter().enumerate() {
            for t in 0..t_len {
                let (lo, hi) = (self.pg_min[g][t], self.pg_max[g][t]);
                if lo < gen.p_phys_min - tol || lo > hi + tol || hi > gen.p_phys_max + tol {
                    out.push(format!("generator {g} period {}: corridor [{lo}, {hi}] outside capacity", t + 1));
                }
                if t > 0 {
                    if lo - self.pg_max[g][t - 1] < gen.ramp_down - tol {
                        out.push(format!("generator {g} period {}: ramp-down rule violated", t + 1));
                    }
                    if hi - self.pg_min[g][t - 1] > gen.ramp_up + tol {
                        out.push(format!("generator {g} period {}: ramp-up rule violated", t + 1));
                    }
                }
            }
        }
        for (n, st) in model.storages.iter().enumerate() {
            for t in 0..t_len {
                let (lo, hi) = (self.soc_min[n][t], self.soc_max[n][t]);
                if lo < st.s_phys_min - tol || lo > hi + tol || hi > st.s_phys_max + tol {
                    out.push(format!("storage {n} period {}: SOC corridor [{lo}, {hi}] outside capacity", t + 1));
                }
                let (plo, phi) = if t == 0 {
                    (st.s_initial, st.s_initial)
                } else {
                    (self.soc_min[n][t - 1], self.soc_max[n][t - 1])
                };
                match self.modes[n][t] {
                    Mode::Charge => {
                        if lo < phi - tol {
                            out.push(format!("storage {n} period {}: charging corridor overlaps the previous one", t + 1));
                        }
                        if hi - plo > st.eta_c * st.pc_max + tol {
                            out.push(format!("storage {n} period {}: charging corridor exceeds charge limit", t + 1));
                        }
                    }
                    Mode::Discharge => {
                        if plo < hi - tol {
                            out.push(format!("storage {n} period {}: discharging corridor overlaps the previous one", t + 1));
                        }
                        if st.eta_d * (phi - lo) > st.pd_max + tol {
                            out.push(format!("storage {n} period {}: discharging corridor exceeds discharge limit", t + 1));
                        }
                    }
                    Mode::Idle => {}
                }
            }
        }
        out
    }
}

/// Forecast-scenario dispatch from the selection program, MW / MWh, `[device][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedDispatch {
    pub w: Vec<[f64; 2]>,
    pub pg: Vec<Vec<f64>>,
    pub pc: Vec<Vec<f64>>,
    pub pd: Vec<Vec<f64>>,
    pub soc: Vec<Vec<f64>>,
}

/// Marginal value of active load at each storage bus, `[storage][t]`: the
/// change of the minimized selection objective per MW of extra load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceDuals {
    pub storage: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSelection {
    pub params: ScheduleParams,
    pub expected: ExpectedDispatch,
    pub duals: BalanceDuals,
    /// Value of the corridor objective (maximized).
    pub objective: f64,
    pub used_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCheck {
    /// `[storage][t]`, true when the dual passes.
    pub ok: Vec<Vec<bool>>,
    pub flagged: Vec<(usize, usize)>,
}

impl DualCheck {
    pub fn all_ok(&self) -> bool {
        self.flagged.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Stage<'a> {
    zeta: f64,
    /// Fixed modes with the charging/discharging corridor rules, or mode-free.
    modes: Option<&'a [Vec<Mode>]>,
}

struct SelectionProgram {
    prog: ConicProgram,
    pg_min: Vec<Vec<Var>>,
    pg_max: Vec<Vec<Var>>,
    soc_min: Vec<Vec<Var>>,
    soc_max: Vec<Vec<Var>>,
    blocks: Vec<BlockVars>,
    balance_rows: Vec<Vec<ConstraintId>>,
}

fn build_selection(model: &NetworkModel, stage: Stage) -> SelectionProgram {
    let base = model.base.s_mva;
    let t_len = model.horizon;
    let mut prog = ConicProgram::new();
    let mut obj: Vec<(Var, f64)> = Vec::new();

    let mut pg_min = Vec::new();
    let mut pg_max = Vec::new();
    for (g, gen) in model.generators.iter().enumerate() {
        let (lo, hi) = (gen.p_phys_min / base, gen.p_phys_max / base);
        let mins: Vec<Var> = (0..t_len).map(|t| prog.add_var(format!("Pgmin{g}[{}]", t + 1), lo, hi)).collect();
        let maxs: Vec<Var> = (0..t_len).map(|t| prog.add_var(format!("Pgmax{g}[{}]", t + 1), lo, hi)).collect();
        let width = gen.p_phys_max - gen.p_phys_min;
        for t in 0..t_len {
            prog.add_le(format!("corr_g{g}[{}]", t + 1), vec![(mins[t], 1.0), (maxs[t], -1.0)], 0.0);
            if t > 0 {
                prog.add_ge(format!("ramp_corr_dn{g}[{}]", t + 1), vec![(mins[t], 1.0), (maxs[t - 1], -1.0)], gen.ramp_down / base);
                prog.add_le(format!("ramp_corr_up{g}[{}]", t + 1), vec![(maxs[t], 1.0), (mins[t - 1], -1.0)], gen.ramp_up / base);
            }
            if width > 0.0 {
                obj.push((maxs[t], -base / width));
                obj.push((mins[t], base / width));
            }
        }
        pg_min.push(mins);
        pg_max.push(maxs);
    }

    let mut soc_min = Vec::new();
    let mut soc_max = Vec::new();
    for (n, st) in model.storages.iter().enumerate() {
        let (lo, hi) = (st.s_phys_min / base, st.s_phys_max / base);
        let mins: Vec<Var> = (0..t_len).map(|t| prog.add_var(format!("Smin{n}[{}]", t + 1), lo, hi)).collect();
        let maxs: Vec<Var> = (0..t_len).map(|t| prog.add_var(format!("Smax{n}[{}]", t + 1), lo, hi)).collect();
        let width = st.s_phys_max - st.s_phys_min;
        let init = st.s_initial / base;
        for t in 0..t_len {
            prog.add_le(format!("corr_s{n}[{}]", t + 1), vec![(mins[t], 1.0), (maxs[t], -1.0)], 0.0);
            // Previous corridor as terms + constant; the initial SOC is a point.
            let (prev_lo, prev_hi): (Vec<(Var, f64)>, Vec<(Var, f64)>) =
                if t == 0 { (vec![], vec![]) } else { (vec![(mins[t - 1], 1.0)], vec![(maxs[t - 1], 1.0)]) };
            let pconst = if t == 0 { init } else { 0.0 };
            let neg = |v: &[(Var, f64)]| v.iter().map(|&(x, c)| (x, -c)).collect::<Vec<_>>();
            // Discharge reach: prev max − min ≤ pd_max / eta_d.
            let mut terms = prev_hi.clone();
            terms.push((mins[t], -1.0));
            prog.add_le(format!("reach_d{n}[{}]", t + 1), terms, st.pd_max / st.eta_d / base - pconst);
            // Charge reach: max − prev min ≤ eta_c · pc_max.
            let mut terms = neg(&prev_lo);
            terms.push((maxs[t], 1.0));
            prog.add_le(format!("reach_c{n}[{}]", t + 1), terms, st.eta_c * st.pc_max / base + pconst);
            if let Some(modes) = stage.modes {
                match modes[n][t] {
                    Mode::Charge => {
                        let mut terms = neg(&prev_hi);
                        terms.push((mins[t], 1.0));
                        prog.add_ge(format!("order_c{n}[{}]", t + 1), terms, pconst);
                    }
                    Mode::Discharge => {
                        let mut terms = prev_lo.clone();
                        terms.push((maxs[t], -1.0));
                        prog.add_ge(format!("order_d{n}[{}]", t + 1), terms, -pconst);
                    }
                    Mode::Idle => {}
                }
            }
            if width > 0.0 {
                obj.push((maxs[t], -base / width));
                obj.push((mins[t], base / width));
            }
        }
        soc_min.push(mins);
        soc_max.push(maxs);
    }

    let mut blocks: Vec<BlockVars> = Vec::new();
    let mut balance_rows = Vec::new();
    for t in 0..t_len {
        let wp = prog.free_var(format!("w_p[{}]", t + 1));
        let wq = prog.free_var(format!("w_q[{}]", t + 1));
        let limits = BlockLimits {
            pg_lo: pg_min.iter().map(|v| Lim::Var(v[t])).collect(),
            pg_hi: pg_max.iter().map(|v| Lim::Var(v[t])).collect(),
            soc_lo: soc_min.iter().map(|v| Lim::Var(v[t])).collect(),
            soc_hi: soc_max.iter().map(|v| Lim::Var(v[t])).collect(),
            modes: stage.modes.map(|m| m.iter().map(|row| row[t]).collect()),
        };
        let forecast: Vec<f64> = model.ders.iter().map(|d| d.forecast[t]).collect();
        let first_row = prog.constraints().len();
        let blk = build_scenario_block(&mut prog, model, t, 0, &forecast, &limits, Pcc::Schedule(wp, wq));
        let rows: Vec<ConstraintId> = model
            .storages
            .iter()
            .map(|st| {
                let name = format!("bal_p{}[{}][0]", st.bus, t + 1);
                let idx = (first_row..prog.constraints().len())
                    .find(|&i| prog.constraints()[i].name == name)
                    .expect("balance row exists for every bus");
                ConstraintId(idx)
            })
            .collect();
        balance_rows.push(rows);
        let prev: Vec<PrevSoc> = if t == 0 {
            model.storages.iter().map(|s| PrevSoc::constant(s.s_initial / base)).collect()
        } else {
            blocks[t - 1].soc.iter().map(|&v| PrevSoc::var(v)).collect()
        };
        let modes_t: Option<Vec<Mode>> = stage.modes.map(|m| m.iter().map(|row| row[t]).collect());
        build_coupling(&mut prog, model, t, 0, &blk, &prev, modes_t.as_deref());
        if t + 1 == t_len {
            for (n, st) in model.storages.iter().enumerate() {
                prog.add_eq(format!("cyclic{n}[{}][0]", t + 1), vec![(blk.soc[n], 1.0)], st.s_initial / base);
            }
        }
        if t > 0 {
            for (g, gen) in model.generators.iter().enumerate() {
                let terms = vec![(blk.pg[g], 1.0), (blocks[t - 1].pg[g], -1.0)];
                prog.add_ge(format!("ramp_dn{g}[{}]", t + 1), terms.clone(), gen.ramp_down / base);
                prog.add_le(format!("ramp_up{g}[{}]", t + 1), terms, gen.ramp_up / base);
            }
        }
        if stage.zeta > 0.0 {
            for n in 0..model.storages.len() {
                obj.push((blk.pc[n], stage.zeta * base));
                obj.push((blk.pd[n], stage.zeta * base));
            }
        }
        blocks.push(blk);
    }
    prog.set_objective(obj, 0.0);
    SelectionProgram { prog, pg_min, pg_max, soc_min, soc_max, blocks, balance_rows }
}

fn extract(model: &NetworkModel, sp: &SelectionProgram, sol: &Solution, modes: Vec<Vec<Mode>>) -> ParamSelection {
    let base = model.base.s_mva;
    let grid = |vars: &Vec<Vec<Var>>| -> Vec<Vec<f64>> {
        vars.iter().map(|row| row.iter().map(|&v| sol.value(v) * base).collect()).collect()
    };
    let per_block = |f: &dyn Fn(&BlockVars) -> &Vec<Var>, n: usize| -> Vec<Vec<f64>> {
        (0..n).map(|i| sp.blocks.iter().map(|b| sol.value(f(b)[i]) * base).collect()).collect()
    };
    let ng = model.generators.len();
    let ns = model.storages.len();
    let mut params = ScheduleParams {
        horizon: model.horizon,
        pg_min: grid(&sp.pg_min),
        pg_max: grid(&sp.pg_max),
        soc_min: grid(&sp.soc_min),
        soc_max: grid(&sp.soc_max),
        modes,
    };
    // Snap degenerate capacity ranges onto their point value.
    for (g, gen) in model.generators.iter().enumerate() {
        if gen.p_phys_max == gen.p_phys_min {
            params.pg_min[g] = vec![gen.p_phys_min; model.horizon];
            params.pg_max[g] = vec![gen.p_phys_min; model.horizon];
        }
    }
    let expected = ExpectedDispatch {
        w: sp.blocks.iter().map(|b| [sol.value(b.p_pcc) * base, sol.value(b.q_pcc) * base]).collect(),
        pg: per_block(&|b| &b.pg, ng),
        pc: per_block(&|b| &b.pc, ns),
        pd: per_block(&|b| &b.pd, ns),
        soc: per_block(&|b| &b.soc, ns),
    };
    let duals = BalanceDuals {
        storage: (0..ns)
            .map(|n| (0..model.horizon).map(|t| sol.duals[sp.balance_rows[t][n].0] / base).collect())
            .collect(),
    };
    ParamSelection { params, expected, duals, objective: -sol.objective, used_fallback: false }
}

fn solve_stage(model: &NetworkModel, stage: Stage, modes: Vec<Vec<Mode>>, tol: &Tolerances, name: &str) -> Result<ParamSelection> {
    let sp = build_selection(model, stage);
    let sol = solve(&sp.prog, tol).require_optimal(name)?;
    Ok(extract(model, &sp, &sol, modes))
}

/// Selects corridors and modes. Falls back to mode enumeration when the
/// mode-free solution is not complementary.
pub fn solve_param_selection(model: &NetworkModel, zeta: f64, tol: &Tolerances) -> Result<ParamSelection> {
    solve_param_selection_with_cap(model, zeta, tol, DEFAULT_MODE_CAP)
}

pub fn solve_param_selection_with_cap(model: &NetworkModel, zeta: f64, tol: &Tolerances, cap: usize) -> Result<ParamSelection> {
    solve_param_selection_with(model, &SelectionOptions { zeta, cap, ..SelectionOptions::default() }, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub zeta: f64,
    /// Most negative storage-bus dual still read as complementary.
    pub tol_dual: f64,
    /// Power below which a storage counts as idle when deriving modes, MW.
    pub tol_mode: f64,
    pub cap: usize,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        SelectionOptions { zeta: DEFAULT_ZETA, tol_dual: TOL_DUAL, tol_mode: TOL_MODE, cap: DEFAULT_MODE_CAP }
    }
}

pub fn solve_param_selection_with(model: &NetworkModel, opts: &SelectionOptions, tol: &Tolerances) -> Result<ParamSelection> {
    let (zeta, cap) = (opts.zeta, opts.cap);
    if !(zeta > 0.0) {
        return Err(Error::validation("zeta must be positive"));
    }
    let idle = vec![vec![Mode::Idle; model.horizon]; model.storages.len()];
    let free = solve_stage(model, Stage { zeta, modes: None }, idle, tol, "parameter selection")?;
    if model.storages.is_empty() {
        return Ok(free);
    }
    let duals_ok = check_complementarity_duals(&free.duals, opts.tol_dual).all_ok();
    let modes = derive_mode_sets(&free.expected, opts.tol_mode);
    match (duals_ok, modes) {
        (true, Ok(modes)) => {
            let fixed = solve_stage(model, Stage { zeta, modes: Some(&modes) }, modes.clone(), tol, "parameter selection (modes fixed)");
            match fixed {
                Ok(sel) => Ok(ParamSelection { duals: free.duals, ..sel }),
                Err(e) => {
                    log::warn!("mode-fixed selection failed ({e}); enumerating mode partitions");
                    enumerate_mode_fallback(model, &all_partitions(model, cap)?, tol)
                }
            }
        }
        (ok, modes) => {
            if !ok {
                log::warn!("negative balance duals at storage buses; enumerating mode partitions");
            }
            if let Err(e) = modes {
                log::warn!("{e}; enumerating mode partitions");
            }
            enumerate_mode_fallback(model, &all_partitions(model, cap)?, tol)
        }
    }
}

/// Passes iff every storage-bus balance dual is at least `-tol`.
pub fn check_complementarity_duals(duals: &BalanceDuals, tol: f64) -> DualCheck {
    let ok: Vec<Vec<bool>> = duals.storage.iter().map(|row| row.iter().map(|&d| d >= -tol).collect()).collect();
    let flagged = ok
        .iter()
        .enumerate()
        .flat_map(|(n, row)| row.iter().enumerate().filter(|(_, &b)| !b).map(move |(t, _)| (n, t)))
        .collect();
    DualCheck { ok, flagged }
}

/// Reads the mode of every (storage, period) off the forecast dispatch.
pub fn derive_mode_sets(expected: &ExpectedDispatch, tol: f64) -> Result<Vec<Vec<Mode>>> {
    expected
        .pc
        .iter()
        .zip(&expected.pd)
        .enumerate()
        .map(|(n, (pc, pd))| {
            pc.iter()
                .zip(pd)
                .enumerate()
                .map(|(t, (&c, &d))| match (c > tol, d > tol) {
                    (true, true) => Err(Error::SimultaneousChargeDischarge { storage: n, period: t + 1 }),
                    (true, false) => Ok(Mode::Charge),
                    (false, true) => Ok(Mode::Discharge),
                    (false, false) => Ok(Mode::Idle),
                })
                .collect()
        })
        .collect()
}

/// Every mode partition in lexicographic order, `[candidate][storage][t]`.
pub fn all_partitions(model: &NetworkModel, cap: usize) -> Result<Vec<Vec<Vec<Mode>>>> {
    let cells = model.storages.len() * model.horizon;
    let count = 3u128.checked_pow(cells as u32).unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(Error::ModeCap { candidates: count, cap });
    }
    const ORDER: [Mode; 3] = [Mode::Charge, Mode::Discharge, Mode::Idle];
    Ok((0..count as usize)
        .map(|mut k| {
            let mut flat = vec![Mode::Idle; cells];
            for cell in (0..cells).rev() {
                flat[cell] = ORDER[k % 3];
                k /= 3;
            }
            flat.chunks(model.horizon.max(1)).map(<[Mode]>::to_vec).collect()
        })
        .collect())
}

/// Solves the selection with each candidate's modes fixed and the penalty
/// removed; returns the best (ties by candidate order).
pub fn enumerate_mode_fallback(model: &NetworkModel, candidates: &[Vec<Vec<Mode>>], tol: &Tolerances) -> Result<ParamSelection> {
    let results = par_map(candidates, |modes| {
        solve_stage(model, Stage { zeta: 0.0, modes: Some(modes) }, modes.clone(), tol, "mode candidate").ok()
    });
    let mut best: Option<ParamSelection> = None;
    for sel in results.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| sel.objective > b.objective + 1e-9) {
            best = Some(sel);
        }
    }
    best.map(|b| ParamSelection { used_fallback: true, ..b })
        .ok_or_else(|| Error::Infeasible { stage: "parameter selection (every mode partition)".into() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_tolerance_semantics() {
        let d = BalanceDuals { storage: vec![vec![0.3, 2.0]] };
        assert!(check_complementarity_duals(&d, TOL_DUAL).all_ok());
        let d = BalanceDuals { storage: vec![vec![0.3, -0.5]] };
        let chk = check_complementarity_duals(&d, TOL_DUAL);
        assert_eq!(chk.flagged, vec![(0, 1)]);
        let d = BalanceDuals { storage: vec![vec![-1e-10]] };
        assert!(check_complementarity_duals(&d, 1e-8).all_ok());
    }

    fn dispatch(pc: f64, pd: f64) -> ExpectedDispatch {
        ExpectedDispatch { w: vec![[0.0, 0.0]], pg: vec![], pc: vec![vec![pc]], pd: vec![vec![pd]], soc: vec![vec![0.0]] }
    }

    #[test]
    fn modes_from_dispatch() {
        assert_eq!(derive_mode_sets(&dispatch(2.0, 0.0), TOL_MODE).unwrap(), vec![vec![Mode::Charge]]);
        assert_eq!(derive_mode_sets(&dispatch(0.0, 0.0), TOL_MODE).unwrap(), vec![vec![Mode::Idle]]);
        assert!(matches!(
            derive_mode_sets(&dispatch(1.0, 1.0), TOL_MODE),
            Err(Error::SimultaneousChargeDischarge { storage: 0, period: 1 })
        ));
    }
}
