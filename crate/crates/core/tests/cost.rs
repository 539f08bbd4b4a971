mod common;

use common::{linear_single, three_bus};
use vpp_core::cost::{attainment_check, evaluate_bid, true_cost, Attainment};
use vpp_core::harness::central_schedule;
use vpp_core::Error;

#[test]
fn surfaces_interpolate_their_samples_and_are_convex() {
    let b = three_bus();
    for s in &b.bid.surfaces {
        assert!(!s.pieces.is_empty());
        for x in s.samples.iter().filter(|x| x.attained) {
            let v = s.value(x.w);
            assert!(v <= x.z + 1e-6 * x.z.abs().max(1.0), "period {} at {:?}: {v} > {}", s.period, x.w, x.z);
        }
        let v = &s.domain.vertices;
        for i in 0..v.len() {
            let (a, c) = (v[i], v[(i + v.len() / 2) % v.len()]);
            let m = [(a[0] + c[0]) / 2.0, (a[1] + c[1]) / 2.0];
            assert!(s.value(m) <= 0.5 * (s.value(a) + s.value(c)) + 1e-9 * s.value(m).abs().max(1.0));
        }
    }
}

#[test]
fn pieces_never_undercut_the_exact_cost() {
    let b = three_bus();
    for s in &b.bid.surfaces {
        let checks = attainment_check(&b.cost, s).unwrap();
        assert_eq!(checks.len(), s.triangles.len());
        assert!(checks.iter().all(|a| !matches!(a, Attainment::Unknown)));
    }
}

#[test]
fn bid_outside_the_domain_is_rejected() {
    let b = three_bus();
    let c = central_schedule(&b.env, &b.tol).unwrap();
    assert!(evaluate_bid(&b.bid, &c.w).is_ok());
    let mut far = c.w.clone();
    far[1][0] += 1e3;
    assert!(matches!(evaluate_bid(&b.bid, &far), Err(Error::OutsideDomain { period: 2, .. })));
    assert!(matches!(evaluate_bid(&b.bid, &c.w[..1]), Err(Error::Shape(_))));
}

#[test]
fn linear_bid_matches_the_true_cost() {
    let b = linear_single();
    let c = central_schedule(&b.env, &b.tol).unwrap();
    let bid = evaluate_bid(&b.bid, &c.w).unwrap();
    let exact = true_cost(&b.model, &b.params, &b.set, &c.w, &b.tol).unwrap();
    assert!((bid - exact).abs() <= 1e-5 * exact.abs().max(1.0), "{bid} vs {exact}");
}
