//! Extreme-scenario enumeration over the joint (DER, period) uncertainty box
//! and the critical-DER reduction.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkModel;

pub const DEFAULT_SCENARIO_CAP: usize = 64;

/// Interval `[lo, hi]` per (DER, period), stored DER-major (`r * horizon + t`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBox {
    pub n_der: usize,
    pub horizon: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub forecast: Vec<f64>,
}

impl UncertaintyBox {
    pub fn from_model(model: &NetworkModel) -> Self {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut forecast = Vec::new();
        for d in &model.ders {
            lo.extend_from_slice(&d.lo);
            hi.extend_from_slice(&d.hi);
            forecast.extend_from_slice(&d.forecast);
        }
        UncertaintyBox { n_der: model.ders.len(), horizon: model.horizon, lo, hi, forecast }
    }

    #[inline]
    pub fn coord(&self, der: usize, period: usize) -> usize {
        der * self.horizon + period
    }

    pub fn is_free(&self, der: usize, period: usize) -> bool {
        let c = self.coord(der, period);
        self.lo[c] < self.hi[c]
    }

    /// Coordinates with a non-degenerate interval, in (DER, period) lexicographic order.
    pub fn free_coords(&self) -> Vec<(usize, usize)> {
        (0..self.n_der)
            .flat_map(|r| (0..self.horizon).map(move |t| (r, t)))
            .filter(|&(r, t)| self.is_free(r, t))
            .collect()
    }

    pub fn contains(&self, values: &[f64], tol: f64) -> bool {
        values.len() == self.lo.len()
            && values
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }

    /// True when every interval of `self` lies inside the matching interval of `other`.
    pub fn is_subset_of(&self, other: &UncertaintyBox) -> bool {
        self.lo.len() == other.lo.len()
            && (0..self.lo.len()).all(|c| self.lo[c] >= other.lo[c] && self.hi[c] <= other.hi[c])
    }
}

/// Impact score of one DER at period `t`: `(1 + tan β) · (hi − lo)`.
pub fn der_score(model: &NetworkModel, bx: &UncertaintyBox, der: usize, t: usize) -> f64 {
    let c = bx.coord(der, t);
    (1.0 + model.ders[der].beta.tan()) * (bx.hi[c] - bx.lo[c])
}

/// DERs sorted by impact score at period `t`, descending; ties by DER id.
pub fn rank_ders(model: &NetworkModel, bx: &UncertaintyBox, t: usize) -> Vec<(usize, f64)> {
    let scores = (0..bx.n_der).map(|r| (r, der_score(model, bx, r, t))).collect();
    sort_ranking(scores)
}

/// Horizon-level ranking: per-period scores summed over all periods.
pub fn rank_ders_horizon(model: &NetworkModel, bx: &UncertaintyBox) -> Vec<(usize, f64)> {
    let scores = (0..bx.n_der)
        .map(|r| (r, (0..bx.horizon).map(|t| der_score(model, bx, r, t)).sum()))
        .collect();
    sort_ranking(scores)
}

fn sort_ranking(mut scores: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores
}

/// Collapses the intervals of every DER outside `keep` onto its forecast.
pub fn reduce_box(bx: &UncertaintyBox, keep: &BTreeSet<usize>) -> Result<UncertaintyBox> {
    if let Some(&bad) = keep.iter().find(|&&r| r >= bx.n_der) {
        return Err(Error::UnknownDer(bad));
    }
    let mut out = bx.clone();
    for r in (0..bx.n_der).filter(|r| !keep.contains(r)) {
        for t in 0..bx.horizon {
            let c = bx.coord(r, t);
            out.lo[c] = bx.forecast[c];
            out.hi[c] = bx.forecast[c];
        }
    }
    Ok(out)
}

/// The `k` highest-ranked DERs over the horizon.
pub fn top_k(model: &NetworkModel, bx: &UncertaintyBox, k: usize) -> BTreeSet<usize> {
    rank_ders_horizon(model, bx).into_iter().take(k).map(|(r, _)| r).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    Expected,
    Extreme(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Net demand per (DER, period), MW, DER-major.
    pub values: Vec<f64>,
    pub kind: ScenarioKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub expected: Scenario,
    pub extremes: Vec<Scenario>,
    /// DERs with every interval collapsed onto the forecast.
    pub frozen: BTreeSet<usize>,
    pub free_coords: Vec<(usize, usize)>,
    pub uncertainty: UncertaintyBox,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.extremes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.extremes.is_empty()
    }

    /// Whether free coordinate `c` sits at its upper end in extreme scenario `s`.
    #[inline]
    pub fn at_hi(&self, s: usize, c: usize) -> bool {
        let k = self.free_coords.len();
        (s >> (k - 1 - c)) & 1 == 1
    }

    /// Bit mask over scenario indices selecting the free coordinates observed by period `t`.
    pub fn history_mask(&self, t: usize) -> usize {
        let k = self.free_coords.len();
        self.free_coords
            .iter()
            .enumerate()
            .filter(|(_, &(_, p))| p <= t)
            .fold(0, |m, (c, _)| m | (1 << (k - 1 - c)))
    }

    /// Scenario index of the first extreme sharing the realization history of `s` up to `t`.
    pub fn history_representative(&self, s: usize, t: usize) -> usize {
        let mask = self.history_mask(t);
        (0..=s).find(|&q| q & mask == s & mask).unwrap_or(s)
    }

    /// Distinct history classes at period `t`, as their representative scenarios.
    pub fn history_classes(&self, t: usize) -> Vec<usize> {
        (0..self.len()).filter(|&s| self.history_representative(s, t) == s).collect()
    }

    pub fn value(&self, s: usize, der: usize, t: usize) -> f64 {
        self.extremes[s].values[self.uncertainty.coord(der, t)]
    }
}

/// Enumerates every vertex of the box. Scenario `s` sets free coordinate `c`
/// to `hi` when bit `k-1-c` of `s` is one, so the first coordinate is the most
/// significant.
pub fn enumerate_vertices(bx: &UncertaintyBox, cap: usize) -> Result<ScenarioSet> {
    let free = bx.free_coords();
    let k = free.len();
    let count: u128 = 1u128 << k.min(127);
    if k >= 64 || count > cap as u128 {
        return Err(Error::ScenarioCap { count, cap });
    }
    let extremes = (0..count as usize)
        .map(|s| {
            let mut values = bx.forecast.clone();
            for (c, &(r, t)) in free.iter().enumerate() {
                let i = bx.coord(r, t);
                values[i] = if (s >> (k - 1 - c)) & 1 == 1 { bx.hi[i] } else { bx.lo[i] };
            }
            Scenario { values, kind: ScenarioKind::Extreme(s) }
        })
        .collect();
    let frozen = (0..bx.n_der).filter(|&r| (0..bx.horizon).all(|t| !bx.is_free(r, t))).collect();
    Ok(ScenarioSet {
        expected: Scenario { values: bx.forecast.clone(), kind: ScenarioKind::Expected },
        extremes,
        frozen,
        free_coords: free,
        uncertainty: bx.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(n_der: usize, horizon: usize, lo: f64, hi: f64) -> UncertaintyBox {
        let n = n_der * horizon;
        UncertaintyBox {
            n_der,
            horizon,
            lo: vec![lo; n],
            hi: vec![hi; n],
            forecast: vec![(lo + hi) / 2.0; n],
        }
    }

    #[test]
    fn one_der_one_period() {
        let bx = UncertaintyBox { n_der: 1, horizon: 1, lo: vec![10.0], hi: vec![20.0], forecast: vec![15.0] };
        let set = enumerate_vertices(&bx, 64).unwrap();
        let vals: Vec<f64> = set.extremes.iter().map(|s| s.values[0]).collect();
        assert_eq!(vals, vec![10.0, 20.0]);
        assert_eq!(set.expected.values, vec![15.0]);
    }

    #[test]
    fn joint_box_counts_match_brute_force() {
        // 2 DERs x 2 periods: brute-force every lo/hi assignment independently.
        let bx = unit_box(2, 2, 0.0, 1.0);
        let set = enumerate_vertices(&bx, 64).unwrap();
        let mut brute = BTreeSet::new();
        for a in [0.0, 1.0] {
            for b in [0.0, 1.0] {
                for c in [0.0, 1.0] {
                    for d in [0.0, 1.0] {
                        brute.insert(vec![a as u8, b as u8, c as u8, d as u8]);
                    }
                }
            }
        }
        let got: BTreeSet<Vec<u8>> =
            set.extremes.iter().map(|s| s.values.iter().map(|&v| v as u8).collect()).collect();
        assert_eq!(set.len(), 16);
        assert_eq!(got, brute);
    }

    #[test]
    fn five_ders_give_32() {
        let bx = unit_box(5, 1, 0.0, 2.0);
        assert_eq!(enumerate_vertices(&bx, 64).unwrap().len(), 32);
    }

    #[test]
    fn cap_is_enforced() {
        let bx = unit_box(7, 1, 0.0, 1.0);
        let err = enumerate_vertices(&bx, 64).unwrap_err();
        assert!(err.to_string().contains("rank_ders"), "{err}");
    }

    #[test]
    fn reduce_keep_all_and_none() {
        let bx = unit_box(3, 2, 1.0, 3.0);
        let all: BTreeSet<usize> = (0..3).collect();
        assert_eq!(reduce_box(&bx, &all).unwrap(), bx);
        let none = reduce_box(&bx, &BTreeSet::new()).unwrap();
        let set = enumerate_vertices(&none, 64).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.extremes[0].values, set.expected.values);
        assert_eq!(set.frozen.len(), 3);
        assert!(matches!(reduce_box(&bx, &BTreeSet::from([3])), Err(Error::UnknownDer(3))));
    }

    #[test]
    fn reduce_top_one_of_five() {
        let bx = unit_box(5, 1, 0.0, 1.0);
        let reduced = reduce_box(&bx, &BTreeSet::from([2])).unwrap();
        let set = enumerate_vertices(&reduced, 64).unwrap();
        // Explicit enumeration: only DER 2 varies.
        assert_eq!(set.len(), 2);
        assert_eq!(set.extremes[0].values, vec![0.5, 0.5, 0.0, 0.5, 0.5]);
        assert_eq!(set.extremes[1].values, vec![0.5, 0.5, 1.0, 0.5, 0.5]);
    }

    #[test]
    fn history_classes_follow_observed_periods() {
        let bx = unit_box(2, 2, 0.0, 1.0);
        let set = enumerate_vertices(&bx, 64).unwrap();
        // Period 0 observes (r0,t0) and (r1,t0): four classes of four scenarios.
        assert_eq!(set.history_classes(0).len(), 4);
        assert_eq!(set.history_classes(1).len(), 16);
        for s in 0..16 {
            let rep = set.history_representative(s, 0);
            assert_eq!(set.value(s, 0, 0), set.value(rep, 0, 0));
            assert_eq!(set.value(s, 1, 0), set.value(rep, 1, 0));
        }
    }
}
