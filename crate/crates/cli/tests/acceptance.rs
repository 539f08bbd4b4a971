//! End-to-end acceptance checks on the shipped fixtures. Prints one PASS or
//! FAIL line per check and exits nonzero if any fails.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpp_core::conic::{build_robust_program, solve, RobustSpec, Status, Tolerances, WMode};
use vpp_core::cost::{build_bid, g_max, BidFunction, CostProgram};
use vpp_core::harness::{
    deterministic_dispatch, relaxation_diagnostic, robust_objective, sample_envelope, validate, SimMode,
    ValidateOptions, ValidationReport,
};
use vpp_core::network::{load_network, NetworkModel};
use vpp_core::params::{solve_param_selection, ScheduleParams, DEFAULT_ZETA};
use vpp_core::region::{
    brute_force_hull, build_envelope, convex_hull_2d, envelope_program, explore_all, ExploreOptions, PeriodRegion,
    RegionEnvelope, TOL_VERTEX_PU,
};
use vpp_core::scenario::{enumerate_vertices, reduce_box, top_k, ScenarioSet, UncertaintyBox, DEFAULT_SCENARIO_CAP};

type Outcome = Result<String, String>;

fn err<E: Display>(e: E) -> String {
    e.to_string()
}

fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn fixture(name: &str) -> NetworkModel {
    load_network(fixture_path(name)).expect("fixture loads")
}

fn collapsed(mut model: NetworkModel) -> NetworkModel {
    for d in &mut model.ders {
        d.lo = d.forecast.clone();
        d.hi = d.forecast.clone();
    }
    model
}

struct Built {
    model: NetworkModel,
    params: ScheduleParams,
    set: ScenarioSet,
    env: RegionEnvelope,
    bid: BidFunction,
    cost: CostProgram,
}

fn build(name: &str) -> Built {
    let model = fixture(name);
    let tol = Tolerances::default();
    let params = solve_param_selection(&model, DEFAULT_ZETA, &tol).expect("parameter selection").params;
    let set = enumerate_vertices(&UncertaintyBox::from_model(&model), DEFAULT_SCENARIO_CAP).expect("scenarios");
    let regions = explore_all(&model, &params, &set, &ExploreOptions::default()).expect("region");
    let env = build_envelope(&model, &set, regions, &tol).expect("envelope");
    let (bid, cost) = build_bid(&model, &params, &set, &env, 1, &tol).expect("bid");
    Built { model, params, set, env, bid, cost }
}

fn three_bus() -> &'static Built {
    static CELL: OnceLock<Built> = OnceLock::new();
    CELL.get_or_init(|| build("three_bus.json"))
}

fn linear_single() -> &'static Built {
    static CELL: OnceLock<Built> = OnceLock::new();
    CELL.get_or_init(|| build("linear_single.json"))
}

/// The 1000 x 10 recombination run on the 3-bus fixture, with its wall time.
fn robustness_run() -> &'static Result<(ValidationReport, Duration), String> {
    static CELL: OnceLock<Result<(ValidationReport, Duration), String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let b = three_bus();
        let opts = ValidateOptions { samples: 1000, realizations: 10, seed: 7, mode: SimMode::Recombine };
        let start = Instant::now();
        let (report, _) =
            validate(&b.model, &b.params, &b.set, &b.env, Some(&b.bid), &opts, &Tolerances::default()).map_err(err)?;
        Ok((report, start.elapsed()))
    })
}

/// Feeder regions with zero, top-1 and full uncertainty.
fn feeder_regions() -> &'static Result<Vec<(String, PeriodRegion)>, String> {
    static CELL: OnceLock<Result<Vec<(String, PeriodRegion)>, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let model = fixture("feeder16.json");
        let params = ScheduleParams::physical(&model);
        let full = UncertaintyBox::from_model(&model);
        let boxes = [
            ("zero", reduce_box(&full, &BTreeSet::new()).map_err(err)?),
            ("top-1", reduce_box(&full, &top_k(&model, &full, 1)).map_err(err)?),
            ("full", full.clone()),
        ];
        boxes
            .into_iter()
            .map(|(name, bx)| {
                let set = enumerate_vertices(&bx, DEFAULT_SCENARIO_CAP).map_err(err)?;
                let mut r = explore_all(&model, &params, &set, &ExploreOptions::default()).map_err(err)?;
                Ok((name.to_string(), r.remove(0)))
            })
            .collect()
    })
}

fn robust_operation() -> Outcome {
    let (rep, elapsed) = robustness_run().as_ref().map_err(Clone::clone)?;
    let detail = format!(
        "{}/{} traces feasible, max residual {:.2e} p.u. ({}), {:.1}s",
        rep.feasible_traces,
        rep.n_traces,
        rep.max_residual,
        rep.max_residual_family,
        elapsed.as_secs_f64()
    );
    let ok = rep.n_traces == 10_000
        && rep.feasible_traces == rep.n_traces
        && rep.max_residual <= 1e-6
        && elapsed.as_secs() <= 300;
    if ok {
        Ok(detail)
    } else {
        Err(format!("{detail}; first failures {:?}", rep.failures.iter().take(3).collect::<Vec<_>>()))
    }
}

fn ramp_and_storage_limits() -> Outcome {
    let (rep, _) = robustness_run().as_ref().map_err(Clone::clone)?;
    let l = &rep.limits;
    let detail = format!(
        "{} ramp and {} charge/discharge violations, largest ramp {:.4} MW, simultaneous {}",
        l.ramp_violations, l.storage_power_violations, l.max_ramp_mw, l.simultaneous
    );
    if l.ramp_violations == 0 && l.storage_power_violations == 0 && rep.n_traces > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bid_coverage() -> Outcome {
    let (rep, _) = robustness_run().as_ref().map_err(Clone::clone)?;
    let c = rep.coverage.as_ref().ok_or("no coverage in the report")?;
    let worst = c
        .rows
        .iter()
        .map(|r| (r.bid_usd - r.true_usd) / r.true_usd.abs().max(1.0))
        .fold(f64::INFINITY, f64::min);
    let detail = format!(
        "{} samples, min margin ${:.4}, scaled {:.3e}, epsilon {:.4} vs max excess {:.4}",
        c.rows.len(),
        c.min_margin,
        worst,
        c.epsilon,
        c.max_excess
    );
    if c.rows.len() == 1000 && c.failures.is_empty() && worst >= -1e-6 && c.epsilon >= c.max_excess - 1e-6 {
        Ok(detail)
    } else {
        Err(format!("{detail}; failures {:?}", c.failures.iter().take(5).collect::<Vec<_>>()))
    }
}

/// A joint schedule through the envelope with period `t` pinned to `w`.
fn joint_schedule(env: &RegionEnvelope, t: usize, w: [f64; 2], tol: &Tolerances) -> Option<Vec<[f64; 2]>> {
    let (mut prog, wv, _) = envelope_program(env);
    prog.fix(wv[t].0, w[0] / env.s_base);
    prog.fix(wv[t].1, w[1] / env.s_base);
    let sol = solve(&prog, tol);
    (sol.status == Status::Optimal)
        .then(|| wv.iter().map(|&(p, q)| [sol.value(p) * env.s_base, sol.value(q) * env.s_base]).collect())
}

fn inner_approximation() -> Outcome {
    let b = three_bus();
    let tol = Tolerances::default();
    let mut schedules = Vec::new();
    for t in 0..b.model.horizon {
        for &v in &b.env.certified[t].vertices {
            schedules.push(joint_schedule(&b.env, t, v, &tol).ok_or(format!("no joint schedule at period {} vertex {v:?}", t + 1))?);
        }
    }
    let n_vertices = schedules.len();
    schedules.extend(sample_envelope(&b.env, 200, 2024, &tol).map_err(err)?.into_iter().map(|s| s.w));
    let mut bad = Vec::new();
    for w in &schedules {
        let rp = build_robust_program(&RobustSpec::full(&b.model, &b.params, &b.set, WMode::Fixed(w.clone()))).map_err(err)?;
        let st = solve(&rp.program, &tol).status;
        if st != Status::Optimal {
            bad.push((w.clone(), st));
        }
    }
    let detail = format!("{n_vertices} vertex schedules + 200 sampled, {} infeasible", bad.len());
    if bad.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}: {:?}", &bad[..bad.len().min(3)]))
    }
}

fn nondecreasing(areas: &[f64]) -> bool {
    areas.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0))
}

fn hull_oracle_and_area_growth() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut mismatches = 0;
    for k in 0..100 {
        let n = rng.gen_range(1..=500);
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                if k % 4 == 0 {
                    [rng.gen_range(-5i32..=5) as f64, rng.gen_range(-5i32..=5) as f64]
                } else {
                    [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)]
                }
            })
            .collect();
        let fast = convex_hull_2d(&pts, TOL_VERTEX_PU).vertices;
        let slow = brute_force_hull(&pts, TOL_VERTEX_PU);
        let same = fast.len() == slow.len()
            && fast.iter().all(|a| slow.iter().any(|b| (a[0] - b[0]).hypot(a[1] - b[1]) <= TOL_VERTEX_PU));
        if !same {
            mismatches += 1;
        }
    }
    let mut runs: Vec<(String, Vec<f64>)> = Vec::new();
    for (name, b) in [("three_bus", three_bus()), ("linear_single", linear_single())] {
        for p in &b.env.periods {
            runs.push((format!("{name} period {}", p.period + 1), p.areas.clone()));
        }
    }
    let toy = fixture("capacity_toy.json");
    let toy_set = enumerate_vertices(&UncertaintyBox::from_model(&toy), DEFAULT_SCENARIO_CAP).map_err(err)?;
    for p in explore_all(&toy, &ScheduleParams::physical(&toy), &toy_set, &ExploreOptions::default()).map_err(err)? {
        runs.push((format!("capacity_toy period {}", p.period + 1), p.areas));
    }
    for (name, p) in feeder_regions().as_ref().map_err(Clone::clone)? {
        runs.push((format!("feeder16 {name}"), p.areas.clone()));
    }
    let shrinking: Vec<&String> = runs.iter().filter(|(_, a)| !nondecreasing(a)).map(|(n, _)| n).collect();
    let detail = format!("{mismatches}/100 hull mismatches, {} of {} area sequences decrease", shrinking.len(), runs.len());
    if mismatches == 0 && shrinking.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}: {shrinking:?}"))
    }
}

fn capacity_rectangle() -> Outcome {
    let model = fixture("capacity_toy.json");
    let set = enumerate_vertices(&UncertaintyBox::from_model(&model), DEFAULT_SCENARIO_CAP).map_err(err)?;
    let regions = explore_all(&model, &ScheduleParams::physical(&model), &set, &ExploreOptions::default()).map_err(err)?;
    let rect = convex_hull_2d(&[[-4.5, -2.5], [1.0, -2.5], [1.0, 3.0], [-4.5, 3.0]], 1e-12);
    let d = regions[0].polytope.hausdorff(&rect) / model.base.s_mva;
    let detail = format!("Hausdorff distance {d:.2e} p.u. over {} vertices", regions[0].polytope.vertices.len());
    if d <= 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn uncertainty_monotonicity() -> Outcome {
    let regions = feeder_regions().as_ref().map_err(Clone::clone)?;
    let tol_area = ExploreOptions::default().tol_area;
    let a: Vec<f64> = regions.iter().map(|(_, r)| r.polytope.area).collect();
    let detail = format!("areas zero {:.4}, top-1 {:.4}, full {:.4}", a[0], a[1], a[2]);
    if a[1] <= a[0] + tol_area && a[2] <= a[1] + tol_area {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_domain_point(rng: &mut ChaCha8Rng, vertices: &[[f64; 2]]) -> [f64; 2] {
    let weights: Vec<f64> = vertices.iter().map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let total: f64 = weights.iter().sum();
    let mut w = [0.0; 2];
    for (v, k) in vertices.iter().zip(&weights) {
        w[0] += v[0] * k / total;
        w[1] += v[1] * k / total;
    }
    w
}

fn cost_convexity() -> Outcome {
    let b = three_bus();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0;
    let mut tests = 0;
    for t in 0..b.model.horizon {
        let verts = &b.env.certified[t].vertices;
        for _ in 0..100 {
            let (w1, w2) = (random_domain_point(&mut rng, verts), random_domain_point(&mut rng, verts));
            let mid = [(w1[0] + w2[0]) / 2.0, (w1[1] + w2[1]) / 2.0];
            let [z1, z2, zm] = [w1, w2, mid].map(|w| b.cost.cost_at_point(t, w));
            tests += 1;
            if !(z1.attained && z2.attained && zm.attained) {
                failures += 1;
                continue;
            }
            let excess = zm.z - 0.5 * (z1.z + z2.z);
            worst = worst.max(excess / zm.z.abs().max(1.0));
            if excess > 1e-5 * zm.z.abs().max(1.0) {
                failures += 1;
            }
        }
    }
    let detail = format!("{tests} midpoint tests, {failures} failures, worst scaled excess {worst:.2e}");
    if failures == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn collapsed_box_equivalence() -> Outcome {
    let tol = Tolerances::default();
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["three_bus.json", "linear_single.json", "capacity_toy.json", "feeder16.json"] {
        let model = collapsed(fixture(name));
        let params = solve_param_selection(&model, DEFAULT_ZETA, &tol).map_err(err)?.params;
        let set = enumerate_vertices(&UncertaintyBox::from_model(&model), DEFAULT_SCENARIO_CAP).map_err(err)?;
        let robust = robust_objective(&model, &params, &set, &tol).map_err(err)?;
        let det = deterministic_dispatch(&model, &params, &tol).map_err(err)?;
        let rel = (robust - det).abs() / det.abs().max(1.0);
        ok &= rel <= 1e-6;
        parts.push(format!("{} {rel:.1e}", name.trim_end_matches(".json")));
    }
    let detail = format!("relative differences: {}", parts.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn zero_compensation_for_linear_costs() -> Outcome {
    let b = linear_single();
    let scale = g_max(&b.model).max(1.0);
    let detail = format!("epsilon {:.3e} against cost scale {scale:.1}", b.bid.epsilon);
    if b.bid.epsilon.abs() <= 1e-5 * scale {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn relaxation_exactness() -> Outcome {
    let tol = Tolerances::default();
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for name in ["three_bus.json", "linear_single.json", "capacity_toy.json", "feeder16.json"] {
        let model = fixture(name);
        let params = solve_param_selection(&model, DEFAULT_ZETA, &tol).map_err(err)?.params;
        let set = enumerate_vertices(&UncertaintyBox::from_model(&model), DEFAULT_SCENARIO_CAP).map_err(err)?;
        let gap = relaxation_diagnostic(&model, &params, &set, None, &tol).map_err(err)?;
        worst = worst.max(gap);
        parts.push(format!("{} {gap:.1e}", name.trim_end_matches(".json")));
    }
    let detail = format!("max cone gap per fixture (p.u.): {}", parts.join(", "));
    if worst <= 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reproducible_artifacts() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let network = fixture_path("three_bus.json");
    let run = |sub: &str| -> Result<PathBuf, String> {
        let out = dir.path().join(sub);
        let st = Command::new(env!("CARGO_BIN_EXE_vpp"))
            .args(["pipeline", "--samples", "100", "--realizations", "3", "--seed", "11", "--network"])
            .arg(&network)
            .arg("--out-dir")
            .arg(&out)
            .output()
            .map_err(err)?;
        if !st.status.success() {
            return Err(format!("pipeline exited with {}: {}", st.status, String::from_utf8_lossy(&st.stderr)));
        }
        Ok(out)
    };
    let (a, b) = (run("a")?, run("b")?);
    let files = ["region.csv", "cost.csv", "ramps.csv", "storage.csv", "coverage.csv"];
    let mut differing = Vec::new();
    let mut bytes = 0;
    for f in files {
        let x = std::fs::read(a.join(f)).map_err(err)?;
        let y = std::fs::read(b.join(f)).map_err(err)?;
        bytes += x.len();
        if x != y {
            differing.push(f);
        }
    }
    let detail = format!("{} CSV files, {bytes} bytes compared, {} differ", files.len(), differing.len());
    if differing.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}: {differing:?}"))
    }
}

fn main() {
    type Check = (&'static str, fn() -> Outcome);
    let checks: [Check; 12] = [
        ("robust nonanticipative operation", robust_operation),
        ("ramp and charge/discharge limits", ramp_and_storage_limits),
        ("bid covers the true cost", bid_coverage),
        ("envelope is an inner approximation", inner_approximation),
        ("hull oracle and area growth", hull_oracle_and_area_growth),
        ("capacity toy rectangle", capacity_rectangle),
        ("uncertainty shrinks the region", uncertainty_monotonicity),
        ("period cost is convex", cost_convexity),
        ("collapsed box matches deterministic dispatch", collapsed_box_equivalence),
        ("linear costs need no compensation", zero_compensation_for_linear_costs),
        ("branch cones are tight", relaxation_exactness),
        ("artifacts are reproducible", reproducible_artifacts),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS  {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
