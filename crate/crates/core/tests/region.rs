use std::collections::BTreeSet;
use std::path::PathBuf;

use vpp_core::conic::{build_robust_program, solve, RobustSpec, Tolerances, WMode};
use vpp_core::network::{load_network, NetworkModel};
use vpp_core::params::{solve_param_selection, ScheduleParams, DEFAULT_ZETA};
use vpp_core::region::{build_envelope, explore_all, membership, convex_hull_2d, ExploreOptions};
use vpp_core::scenario::{enumerate_vertices, reduce_box, top_k, UncertaintyBox, DEFAULT_SCENARIO_CAP};

fn fixture(name: &str) -> NetworkModel {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    load_network(p).unwrap()
}

#[test]
fn capacity_toy_is_the_analytic_rectangle() {
    let model = fixture("capacity_toy.json");
    let params = ScheduleParams::physical(&model);
    let set = enumerate_vertices(&UncertaintyBox::from_model(&model), DEFAULT_SCENARIO_CAP).unwrap();
    let regions = explore_all(&model, &params, &set, &ExploreOptions::default()).unwrap();
    let poly = &regions[0].polytope;
    let rect = convex_hull_2d(&[[-4.5, -2.5], [1.0, -2.5], [1.0, 3.0], [-4.5, 3.0]], 1e-9);
    let d = poly.hausdorff(&rect) / model.base.s_mva;
    assert!(d <= 1e-4, "hausdorff {d} pu, vertices {:?}", poly.vertices);
    assert!(regions[0].areas.windows(2).all(|w| w[1] >= w[0] - 1e-9));
}

#[test]
fn three_bus_envelope_vertices_are_members_and_feasible() {
    let model = fixture("three_bus.json");
    let tol = Tolerances::default();
    let sel = solve_param_selection(&model, DEFAULT_ZETA, &tol).unwrap();
    let set = enumerate_vertices(&UncertaintyBox::from_model(&model), DEFAULT_SCENARIO_CAP).unwrap();
    let regions = explore_all(&model, &sel.params, &set, &ExploreOptions::default()).unwrap();
    for r in &regions {
        assert!(r.polytope.vertices.len() >= 3, "period {} degenerate", r.period);
        assert!(r.areas.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }
    let env = build_envelope(&model, &set, regions, &tol).unwrap();
    for t in 0..model.horizon {
        assert!(env.certified[t].area > 0.0);
        assert!(env.certified[t].area <= env.periods[t].polytope.area * (1.0 + 1e-6) + 1e-9);
    }
    let cert_pts: Vec<Vec<[f64; 2]>> = (0..model.horizon).map(|t| env.certified[t].vertices.clone()).collect();
    for &v in &cert_pts[0] {
        // The certified vertex of period 1 plus some certified point of period 2.
        let mut w = vec![v];
        let mut prog = vpp_core::region::envelope::envelope_program(&env);
        prog.0.fix(prog.1[0].0, v[0] / model.base.s_mva);
        prog.0.fix(prog.1[0].1, v[1] / model.base.s_mva);
        let sol = solve(&prog.0, &tol);
        assert!(sol.is_optimal());
        for t in 1..model.horizon {
            w.push([sol.value(prog.1[t].0) * model.base.s_mva, sol.value(prog.1[t].1) * model.base.s_mva]);
        }
        let cert = membership(&env, &w, &tol).unwrap();
        assert!(cert.feasible, "residual {}", cert.residual);
        let rp = build_robust_program(&RobustSpec::full(&model, &sel.params, &set, WMode::Fixed(w.clone()))).unwrap();
        let s = solve(&rp.program, &tol);
        assert!(s.is_optimal(), "robust program at {w:?}: {:?}", s.status);
    }
    let outside = vec![[1e3, 0.0]; model.horizon];
    assert!(!membership(&env, &outside, &tol).unwrap().feasible);
}

#[test]
fn fewer_uncertain_ders_give_a_larger_region() {
    let model = fixture("feeder16.json");
    let params = ScheduleParams::physical(&model);
    let full = UncertaintyBox::from_model(&model);
    let one = reduce_box(&full, &top_k(&model, &full, 1)).unwrap();
    let two = reduce_box(&full, &top_k(&model, &full, 2)).unwrap();
    let none = reduce_box(&full, &BTreeSet::new()).unwrap();
    let opts = ExploreOptions::default();
    let area = |bx: &UncertaintyBox| {
        let set = enumerate_vertices(bx, DEFAULT_SCENARIO_CAP).unwrap();
        explore_all(&model, &params, &set, &opts).unwrap()[0].polytope.area
    };
    let (a0, a1, a2) = (area(&none), area(&one), area(&two));
    assert!(a1 <= a0 + opts.tol_area * a0.max(1.0), "{a1} > {a0}");
    assert!(a2 <= a1 + opts.tol_area * a1.max(1.0), "{a2} > {a1}");
}
