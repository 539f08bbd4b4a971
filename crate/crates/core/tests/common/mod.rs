#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use vpp_core::conic::Tolerances;
use vpp_core::cost::{build_bid, BidFunction, CostProgram};
use vpp_core::network::{load_network, NetworkModel};
use vpp_core::params::{solve_param_selection, ScheduleParams, DEFAULT_ZETA};
use vpp_core::region::{build_envelope, explore_all, ExploreOptions, RegionEnvelope};
use vpp_core::scenario::{enumerate_vertices, ScenarioSet, UncertaintyBox, DEFAULT_SCENARIO_CAP};

pub fn fixture(name: &str) -> NetworkModel {
    load_network(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap()
}

pub struct Built {
    pub model: NetworkModel,
    pub params: ScheduleParams,
    pub set: ScenarioSet,
    pub env: RegionEnvelope,
    pub bid: BidFunction,
    pub cost: CostProgram,
    pub tol: Tolerances,
}

pub fn build(model: NetworkModel) -> Built {
    let tol = Tolerances::default();
    let params = solve_param_selection(&model, DEFAULT_ZETA, &tol).unwrap().params;
    let set = enumerate_vertices(&UncertaintyBox::from_model(&model), DEFAULT_SCENARIO_CAP).unwrap();
    let regions = explore_all(&model, &params, &set, &ExploreOptions::default()).unwrap();
    let env = build_envelope(&model, &set, regions, &tol).unwrap();
    let (bid, cost) = build_bid(&model, &params, &set, &env, 1, &tol).unwrap();
    Built { model, params, set, env, bid, cost, tol }
}

pub fn three_bus() -> &'static Built {
    static CELL: OnceLock<Built> = OnceLock::new();
    CELL.get_or_init(|| build(fixture("three_bus.json")))
}

pub fn linear_single() -> &'static Built {
    static CELL: OnceLock<Built> = OnceLock::new();
    CELL.get_or_init(|| build(fixture("linear_single.json")))
}

/// The model with every interval collapsed onto its forecast.
pub fn collapsed(mut model: NetworkModel) -> NetworkModel {
    for d in &mut model.ders {
        d.lo = d.forecast.clone();
        d.hi = d.forecast.clone();
    }
    model
}
