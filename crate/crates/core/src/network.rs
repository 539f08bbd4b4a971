//! VPP data model: a radial feeder rooted at the PCC bus plus its devices.
//!
//! Files use physical units (MW, MVar, MWh, $/h) with impedances in per-unit.
//! The conic builders convert to per-unit on the `base.s_mva` base. The
//! period length is one hour, so energy and power share a scale.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type BusId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Base {
    pub s_mva: f64,
    pub v_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    /// Squared voltage magnitude bounds, p.u.².
    pub v_sq_min: f64,
    pub v_sq_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: BusId,
    pub to: BusId,
    pub r: f64,
    pub x: f64,
    /// Active flow bounds in the `from → to` direction, MW.
    pub p_min: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: BusId,
    pub p_phys_min: f64,
    pub p_phys_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub ramp_down: f64,
    pub ramp_up: f64,
    /// Breakpoints `[mw, usd_per_h]` of a convex piecewise-linear cost, sorted by MW.
    pub cost_pieces: Vec<[f64; 2]>,
}

/// One affine segment `cost = slope·P + intercept` of a piecewise cost, MW units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostPiece {
    pub slope: f64,
    pub intercept: f64,
}

impl Generator {
    pub fn pieces(&self) -> Vec<CostPiece> {
        self.cost_pieces
            .windows(2)
            .map(|w| {
                let slope = (w[1][1] - w[0][1]) / (w[1][0] - w[0][0]);
                CostPiece { slope, intercept: w[0][1] - slope * w[0][0] }
            })
            .collect()
    }

    /// Evaluates the convex cost as the max of its affine pieces.
    pub fn cost(&self, p_mw: f64) -> f64 {
        self.pieces()
            .iter()
            .map(|c| c.slope * p_mw + c.intercept)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Storage {
    pub bus: BusId,
    pub eta_c: f64,
    pub eta_d: f64,
    pub pc_max: f64,
    pub pd_max: f64,
    pub s_phys_min: f64,
    pub s_phys_max: f64,
    pub s_initial: f64,
    pub c_charge: f64,
    pub c_discharge: f64,
}

/// Renewable unit modelled as uncertain net active demand with a fixed power factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewableDer {
    pub bus: BusId,
    pub beta: f64,
    pub forecast: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PccLimits {
    pub bus: BusId,
    pub dp: f64,
    pub dq: f64,
}

/// Validated network. Construct by deserializing and calling [`NetworkModel::finalize`],
/// or through [`load_network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub base: Base,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub storages: Vec<Storage>,
    #[serde(default)]
    pub ders: Vec<RenewableDer>,
    pub pcc: PccLimits,
    pub horizon: usize,
    #[serde(skip)]
    topo: Topology,
}

/// Incidence data derived from the branch list. All indices are positions in
/// the model's vectors, not bus ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Topology {
    pub root: usize,
    pub bus_index: HashMap<BusId, usize>,
    /// Breadth-first order from the root, ties by bus id.
    pub order: Vec<usize>,
    pub depth: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    /// Branch feeding each bus from its parent (`None` at the root).
    pub incoming: Vec<Option<usize>>,
    /// Branches leaving each bus towards its children.
    pub outgoing: Vec<Vec<usize>>,
    pub branch_parent: Vec<usize>,
    pub branch_child: Vec<usize>,
    /// True when the file lists the branch child → parent.
    pub branch_reversed: Vec<bool>,
    pub gens_at: Vec<Vec<usize>>,
    pub storages_at: Vec<Vec<usize>>,
    pub ders_at: Vec<Vec<usize>>,
    pub gen_bus: Vec<usize>,
    pub storage_bus: Vec<usize>,
    pub der_bus: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyReport {
    pub root: BusId,
    pub order: Vec<BusId>,
    pub depth: BTreeMap<BusId, usize>,
    pub children: BTreeMap<BusId, Vec<BusId>>,
}

pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let text = std::fs::read_to_string(path)?;
    parse_network(&text)
}

pub fn parse_network(text: &str) -> Result<NetworkModel> {
    let model: NetworkModel = serde_json::from_str(text)?;
    model.finalize()
}

pub fn save_network(model: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(model)?)?;
    Ok(())
}

/// Checks that the branch set is a tree rooted at the PCC bus.
pub fn validate_radial(model: &NetworkModel) -> Result<TopologyReport> {
    let topo = build_topology(model)?;
    let ids: Vec<BusId> = model.buses.iter().map(|b| b.id).collect();
    Ok(TopologyReport {
        root: ids[topo.root],
        order: topo.order.iter().map(|&i| ids[i]).collect(),
        depth: topo.depth.iter().enumerate().map(|(i, &d)| (ids[i], d)).collect(),
        children: topo
            .children
            .iter()
            .enumerate()
            .map(|(i, ch)| (ids[i], ch.iter().map(|&c| ids[c]).collect()))
            .collect(),
    })
}

impl NetworkModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        base: Base,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
        storages: Vec<Storage>,
        ders: Vec<RenewableDer>,
        pcc: PccLimits,
        horizon: usize,
    ) -> Result<Self> {
        NetworkModel {
            base,
            buses,
            branches,
            generators,
            storages,
            ders,
            pcc,
            horizon,
            topo: Topology::default(),
        }
        .finalize()
    }

    /// Validates every invariant and populates the incidence structures.
    pub fn finalize(mut self) -> Result<Self> {
        self.check_fields()?;
        self.topo = build_topology(&self)?;
        Ok(self)
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_id(&self, idx: usize) -> BusId {
        self.buses[idx].id
    }

    /// Active flow bounds of branch `b` oriented parent → child, MW.
    pub fn oriented_flow_bounds(&self, b: usize) -> (f64, f64) {
        let br = &self.branches[b];
        if self.topo.branch_reversed[b] {
            (-br.p_max, -br.p_min)
        } else {
            (br.p_min, br.p_max)
        }
    }

    fn check_fields(&self) -> Result<()> {
        let fail = |m: String| Err(Error::validation(m));
        if self.horizon < 1 {
            return fail("horizon must be at least 1".into());
        }
        if !(self.base.s_mva > 0.0) {
            return fail("base.s_mva must be positive".into());
        }
        if self.buses.is_empty() {
            return fail("network has no buses".into());
        }
        let mut seen = HashMap::new();
        for (i, b) in self.buses.iter().enumerate() {
            if seen.insert(b.id, i).is_some() {
                return fail(format!("duplicate bus id {}", b.id));
            }
            if !(0.0 < b.v_sq_min && b.v_sq_min <= b.v_sq_max) {
                return fail(format!("bus {}: need 0 < v_sq_min <= v_sq_max", b.id));
            }
        }
        let known = |id: BusId, what: &str| -> Result<()> {
            if seen.contains_key(&id) {
                Ok(())
            } else {
                Err(Error::validation(format!("{what} references unknown bus {id}")))
            }
        };
        known(self.pcc.bus, "pcc")?;
        if !(self.pcc.dp >= 0.0 && self.pcc.dq >= 0.0) {
            return fail("pcc thresholds dp, dq must be nonnegative".into());
        }
        for (k, br) in self.branches.iter().enumerate() {
            known(br.from, &format!("branch {k}"))?;
            known(br.to, &format!("branch {k}"))?;
            if !(br.r >= 0.0 && br.x >= 0.0) {
                return fail(format!("branch {}-{}: r and x must be nonnegative", br.from, br.to));
            }
            if !(br.p_min <= br.p_max) {
                return fail(format!("branch {}-{}: p_min > p_max", br.from, br.to));
            }
        }
        for (k, g) in self.generators.iter().enumerate() {
            known(g.bus, &format!("generator {k}"))?;
            if !(g.p_phys_min <= g.p_phys_max) {
                return fail(format!("generator {k}: p_phys_min > p_phys_max"));
            }
            if !(g.q_min <= g.q_max) {
                return fail(format!("generator {k}: q_min > q_max"));
            }
            if !(g.ramp_down < 0.0 && 0.0 < g.ramp_up) {
                return fail(format!("generator {k}: need ramp_down < 0 < ramp_up"));
            }
            if g.cost_pieces.len() < 2 {
                return fail(format!("generator {k}: cost_pieces needs at least two breakpoints"));
            }
            if g.cost_pieces.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                return fail(format!("generator {k}: cost breakpoints must be strictly increasing in MW"));
            }
            let slopes: Vec<f64> = g.pieces().iter().map(|p| p.slope).collect();
            if slopes.windows(2).any(|w| w[1] < w[0]) {
                return fail(format!("generator {k}: cost pieces are not convex"));
            }
        }
        for (k, s) in self.storages.iter().enumerate() {
            known(s.bus, &format!("storage {k}"))?;
            if !(s.eta_c > 0.0 && s.eta_c <= 1.0 && s.eta_d > 0.0 && s.eta_d <= 1.0) {
                return fail(format!("storage {k}: efficiencies must lie in (0, 1]"));
            }
            if !(s.s_phys_min <= s.s_initial && s.s_initial <= s.s_phys_max) {
                return fail(format!("storage {k}: need s_phys_min <= s_initial <= s_phys_max"));
            }
            if !(s.c_charge >= 0.0 && s.c_discharge >= 0.0) {
                return fail(format!("storage {k}: costs must be nonnegative"));
            }
            if !(s.pc_max >= 0.0 && s.pd_max >= 0.0) {
                return fail(format!("storage {k}: power bounds must be nonnegative"));
            }
        }
        for (k, d) in self.ders.iter().enumerate() {
            known(d.bus, &format!("der {k}"))?;
            if !(d.beta.abs() < std::f64::consts::FRAC_PI_2) {
                return fail(format!("der {k}: |beta| must be below pi/2"));
            }
            let t = self.horizon;
            if d.forecast.len() != t || d.lo.len() != t || d.hi.len() != t {
                return fail(format!("der {k}: forecast/lo/hi must have {t} entries"));
            }
            for p in 0..t {
                if !(d.lo[p] <= d.forecast[p] && d.forecast[p] <= d.hi[p]) {
                    return fail(format!("der {k}: need lo <= forecast <= hi at period {}", p + 1));
                }
            }
        }
        Ok(())
    }
}

fn build_topology(model: &NetworkModel) -> Result<Topology> {
    let n = model.buses.len();
    let bus_index: HashMap<BusId, usize> =
        model.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let idx = |id: BusId| -> Result<usize> {
        bus_index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::validation(format!("unknown bus {id}")))
    };
    let root = idx(model.pcc.bus)?;

    // Union-find rejects the first branch that closes a cycle.
    let mut uf: Vec<usize> = (0..n).collect();
    fn find(uf: &mut [usize], mut a: usize) -> usize {
        while uf[a] != a {
            uf[a] = uf[uf[a]];
            a = uf[a];
        }
        a
    }
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, br) in model.branches.iter().enumerate() {
        let (a, b) = (idx(br.from)?, idx(br.to)?);
        let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
        if ra == rb {
            return Err(Error::NotRadial { from: br.from, to: br.to });
        }
        uf[ra] = rb;
        adj[a].push((b, k));
        adj[b].push((a, k));
    }

    let nb = model.branches.len();
    let mut parent = vec![None; n];
    let mut depth = vec![usize::MAX; n];
    let mut incoming = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut outgoing = vec![Vec::new(); n];
    let mut branch_parent = vec![0; nb];
    let mut branch_child = vec![0; nb];
    let mut branch_reversed = vec![false; nb];
    let mut order = Vec::with_capacity(n);

    depth[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        order.push(u);
        let mut next: Vec<(usize, usize)> =
            adj[u].iter().copied().filter(|&(v, _)| depth[v] == usize::MAX).collect();
        next.sort_by_key(|&(v, _)| model.buses[v].id);
        for (v, k) in next {
            depth[v] = depth[u] + 1;
            parent[v] = Some(u);
            incoming[v] = Some(k);
            children[u].push(v);
            outgoing[u].push(k);
            branch_parent[k] = u;
            branch_child[k] = v;
            branch_reversed[k] = model.branches[k].from != model.buses[u].id;
            queue.push_back(v);
        }
    }
    if let Some(lost) = (0..n)
        .filter(|&i| depth[i] == usize::MAX)
        .min_by_key(|&i| model.buses[i].id)
    {
        return Err(Error::Disconnected(model.buses[lost].id));
    }

    let mut gens_at = vec![Vec::new(); n];
    let mut storages_at = vec![Vec::new(); n];
    let mut ders_at = vec![Vec::new(); n];
    let mut gen_bus = Vec::new();
    let mut storage_bus = Vec::new();
    let mut der_bus = Vec::new();
    for (k, g) in model.generators.iter().enumerate() {
        let b = idx(g.bus)?;
        gens_at[b].push(k);
        gen_bus.push(b);
    }
    for (k, s) in model.storages.iter().enumerate() {
        let b = idx(s.bus)?;
        storages_at[b].push(k);
        storage_bus.push(b);
    }
    for (k, d) in model.ders.iter().enumerate() {
        let b = idx(d.bus)?;
        ders_at[b].push(k);
        der_bus.push(b);
    }

    Ok(Topology {
        root,
        bus_index,
        order,
        depth,
        parent,
        children,
        incoming,
        outgoing,
        branch_parent,
        branch_child,
        branch_reversed,
        gens_at,
        storages_at,
        ders_at,
        gen_bus,
        storage_bus,
        der_bus,
    })
}
