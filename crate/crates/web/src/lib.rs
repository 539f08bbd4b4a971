//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Values cross the boundary as JSON strings. Schedules are `[[P, Q], ...]`
//! in MW/MVar, one pair per period.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use vpp_core::conic::Tolerances;
use vpp_core::cost::{build_bid, evaluate_bid, BidFunction};
use vpp_core::harness::{central_schedule, recombination_weights, Realization};
use vpp_core::network::{parse_network, NetworkModel};
use vpp_core::params::{solve_param_selection, ScheduleParams, DEFAULT_ZETA};
use vpp_core::region::{build_envelope, explore_all, membership, ExploreOptions, RegionEnvelope};
use vpp_core::scenario::{enumerate_vertices, ScenarioSet, UncertaintyBox, DEFAULT_SCENARIO_CAP};

const EXAMPLE: &str = include_str!("../../core/fixtures/three_bus.json");

/// The bundled three-bus network.
#[wasm_bindgen]
pub fn example_network() -> String {
    EXAMPLE.to_string()
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodView {
    pub period: usize,
    pub explored: Vec<[f64; 2]>,
    pub certified: Vec<[f64; 2]>,
    pub area: f64,
    pub certified_area: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Interval {
    pub der: usize,
    pub period: usize,
    pub lo: f64,
    pub hi: f64,
    pub forecast: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub horizon: usize,
    pub n_scenarios: usize,
    pub epsilon: f64,
    pub periods: Vec<PeriodView>,
    /// A schedule inside the envelope, used as the page's starting point.
    pub central: Vec<[f64; 2]>,
    /// Every DER output coordinate, uncertain or not.
    pub intervals: Vec<Interval>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub member: bool,
    pub residual: f64,
    /// Bid price in $, present for member schedules.
    pub bid_usd: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct Schedule(Vec<[f64; 2]>);

/// A network with its region and bid computed.
#[wasm_bindgen]
pub struct Plant {
    #[allow(dead_code)]
    model: NetworkModel,
    #[allow(dead_code)]
    params: ScheduleParams,
    set: ScenarioSet,
    env: RegionEnvelope,
    bid: BidFunction,
    summary: Summary,
    tol: Tolerances,
}

fn js<E: std::fmt::Display>(e: E) -> JsError {
    JsError::new(&e.to_string())
}

impl Plant {
    pub fn build(network_json: &str) -> vpp_core::Result<Plant> {
        let tol = Tolerances::default();
        let model = parse_network(network_json)?;
        let params = solve_param_selection(&model, DEFAULT_ZETA, &tol)?.params;
        let bx = UncertaintyBox::from_model(&model);
        let set = enumerate_vertices(&bx, DEFAULT_SCENARIO_CAP)?;
        let regions = explore_all(&model, &params, &set, &ExploreOptions::default())?;
        let env = build_envelope(&model, &set, regions, &tol)?;
        let (bid, _) = build_bid(&model, &params, &set, &env, 1, &tol)?;
        let central = central_schedule(&env, &tol)?.w;
        let periods = env
            .periods
            .iter()
            .zip(&env.certified)
            .map(|(r, c)| PeriodView {
                period: r.period + 1,
                explored: r.polytope.vertices.clone(),
                certified: c.vertices.clone(),
                area: r.polytope.area,
                certified_area: c.area,
            })
            .collect();
        let mut intervals = Vec::new();
        for der in 0..bx.n_der {
            for t in 0..bx.horizon {
                let c = bx.coord(der, t);
                intervals.push(Interval { der, period: t + 1, lo: bx.lo[c], hi: bx.hi[c], forecast: bx.forecast[c] });
            }
        }
        let summary = Summary { horizon: model.horizon, n_scenarios: set.len(), epsilon: bid.epsilon, periods, central, intervals };
        Ok(Plant { model, params, set, env, bid, summary, tol })
    }

    pub fn summary_view(&self) -> &Summary {
        &self.summary
    }

    pub fn evaluate_schedule(&self, w: &[[f64; 2]]) -> vpp_core::Result<Evaluation> {
        let cert = membership(&self.env, w, &self.tol)?;
        let bid_usd = if cert.feasible { evaluate_bid(&self.bid, w).ok() } else { None };
        Ok(Evaluation { member: cert.feasible, residual: cert.residual, bid_usd })
    }

    /// Scenario weights after observing `values` (indexed like `intervals`)
    /// up to the 1-based `period`.
    pub fn weights_after(&self, values: Vec<f64>, period: usize) -> vpp_core::Result<Vec<f64>> {
        if period == 0 || period > self.summary.horizon {
            return Err(vpp_core::Error::Shape(format!("period {period} outside 1..={}", self.summary.horizon)));
        }
        recombination_weights(&self.set, &Realization { values }, period - 1)
    }
}

#[wasm_bindgen]
impl Plant {
    /// Selects parameters, explores the region and builds the bid.
    #[wasm_bindgen(constructor)]
    pub fn new(network_json: &str) -> Result<Plant, JsError> {
        Plant::build(network_json).map_err(js)
    }

    pub fn summary(&self) -> String {
        serde_json::to_string(&self.summary).expect("summary serializes")
    }

    /// Envelope membership and bid price of a schedule.
    pub fn evaluate(&self, schedule_json: &str) -> Result<String, JsError> {
        let Schedule(w) = serde_json::from_str(schedule_json).map_err(js)?;
        let e = self.evaluate_schedule(&w).map_err(js)?;
        Ok(serde_json::to_string(&e).expect("evaluation serializes"))
    }

    /// Recombination weights over the extreme scenarios.
    pub fn weights(&self, values_json: &str, period: usize) -> Result<String, JsError> {
        let values: Vec<f64> = serde_json::from_str(values_json).map_err(js)?;
        let lambda = self.weights_after(values, period).map_err(js)?;
        Ok(serde_json::to_string(&lambda).expect("weights serialize"))
    }
}
