use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::Path;

use anyhow::{anyhow, Result};
use vpp_core::cost::{attainment_check_with, build_bid, Attainment};
use vpp_core::harness::{validate, IntradayTrace, ValidateOptions, ValidationReport};
use vpp_core::network::{load_network, NetworkModel};
use vpp_core::params::{solve_param_selection_with, ParamSelection, ScheduleParams};
use vpp_core::region::{build_envelope, explore_all};
use vpp_core::scenario::{enumerate_vertices, rank_ders, reduce_box, top_k, ScenarioSet, UncertaintyBox};

use crate::artifacts::{BidFile, ParamsFile, PeriodMeta, RegionMeta};
use crate::config::{PipelineConfig, Scenarios};

/// Tags an error with the pipeline stage it came from.
pub fn stage<T, E: Display>(name: &str, r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| anyhow!("stage {name}: {e}"))
}

pub fn load(path: &Path) -> Result<NetworkModel> {
    stage("load", load_network(path))
}

/// `(der, period, score)` rows sorted by descending score.
pub fn ranking(model: &NetworkModel) -> Vec<(usize, usize, f64)> {
    let bx = UncertaintyBox::from_model(model);
    let mut rows: Vec<(usize, usize, f64)> =
        (0..model.horizon).flat_map(|t| rank_ders(model, &bx, t).into_iter().map(move |(r, s)| (r, t + 1, s))).collect();
    rows.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    rows
}

pub fn uncertain_ders(model: &NetworkModel, choice: Scenarios) -> BTreeSet<usize> {
    match choice {
        Scenarios::Full => (0..model.ders.len()).collect(),
        Scenarios::Top(k) => top_k(model, &UncertaintyBox::from_model(model), k),
    }
}

pub fn scenario_set(model: &NetworkModel, keep: &BTreeSet<usize>, cap: usize) -> Result<ScenarioSet> {
    let bx = stage("scenarios", reduce_box(&UncertaintyBox::from_model(model), keep))?;
    stage("scenarios", enumerate_vertices(&bx, cap))
}

pub fn params(model: &NetworkModel, cfg: &PipelineConfig) -> Result<ParamSelection> {
    let sel = stage("params", solve_param_selection_with(model, &cfg.selection(), &cfg.tolerances()))?;
    for v in sel.params.check_rules(model, 1e-6) {
        log::warn!("corridor rule: {v}");
    }
    Ok(sel)
}

pub fn region(model: &NetworkModel, params: &ScheduleParams, file: ParamsFile, cfg: &PipelineConfig) -> Result<RegionMeta> {
    let keep = uncertain_ders(model, cfg.scenarios);
    let set = scenario_set(model, &keep, cfg.scenario_cap)?;
    log::info!("{} extreme scenarios over {} uncertain DERs", set.len(), keep.len());
    let periods = stage("region", explore_all(model, params, &set, &cfg.explore()))?;
    let env = stage("region", build_envelope(model, &set, periods, &cfg.tolerances()))?;
    let periods = env.periods.iter().zip(&env.certified).map(|(r, c)| PeriodMeta::new(r, c.area)).collect();
    Ok(RegionMeta {
        scenarios: cfg.scenarios.to_string(),
        uncertain_ders: keep.into_iter().collect(),
        n_scenarios: set.len(),
        tol_area: cfg.tol_area,
        periods,
        params: file,
        envelope: env,
    })
}

pub fn cost(model: &NetworkModel, meta: RegionMeta, cfg: &PipelineConfig) -> Result<BidFile> {
    let params = stage("cost", meta.params.to_params(model))?;
    let set = scenario_set(model, &meta.uncertain_ders.iter().copied().collect(), cfg.scenario_cap)?;
    let tol = cfg.tolerances();
    let (bid, cp) = stage("cost", build_bid(model, &params, &set, &meta.envelope, cfg.refinement, &tol))?;
    for s in &bid.surfaces {
        let checks = stage("cost", attainment_check_with(&cp, s, cfg.tol_attain))?;
        let over = checks.iter().filter(|a| matches!(a, Attainment::Overestimating { .. })).count();
        let unknown = checks.iter().filter(|a| matches!(a, Attainment::Unknown)).count();
        log::info!("period {}: {} pieces, {over} overestimating, {unknown} unchecked", s.period + 1, s.pieces.len());
    }
    log::info!("compensation cost {:.6}", bid.epsilon);
    Ok(BidFile { epsilon: bid.epsilon, surfaces: bid.surfaces, region: meta })
}

pub fn validation(model: &NetworkModel, file: &BidFile, cfg: &PipelineConfig) -> Result<(ValidationReport, Vec<IntradayTrace>)> {
    let params = stage("validate", file.region.params.to_params(model))?;
    let set = scenario_set(model, &file.region.uncertain_ders.iter().copied().collect(), cfg.scenario_cap)?;
    let opts = ValidateOptions { samples: cfg.samples, realizations: cfg.realizations, seed: cfg.seed, mode: cfg.mode };
    let bid = file.bid();
    stage("validate", validate(model, &params, &set, &file.region.envelope, Some(&bid), &opts, &cfg.tolerances()))
}
