//! On-disk formats of every pipeline stage.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use vpp_core::cost::{BidFunction, CostSurface};
use vpp_core::harness::{IntradayTrace, ValidationReport};
use vpp_core::network::NetworkModel;
use vpp_core::params::{Mode, ParamSelection, ScheduleParams};
use vpp_core::region::{PeriodRegion, RegionEnvelope};

/// Prints `x` rounded to 9 significant digits with a `.` decimal point.
/// Very small or large magnitudes use an exponent; negative zero prints as `0`.
pub fn fmt9(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let r: f64 = format!("{x:.8e}").parse().expect("scientific notation parses");
    if r == 0.0 {
        "0".into()
    } else if r.abs() < 1e-6 || r.abs() >= 1e15 {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorCorridor {
    pub device: usize,
    pub period: usize,
    pub pg_min_mw: f64,
    pub pg_max_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageCorridor {
    pub device: usize,
    pub period: usize,
    pub soc_min_mwh: f64,
    pub soc_max_mwh: f64,
    pub mode: Mode,
}

/// `params.json`: corridors and modes, one entry per (device, period).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub horizon: usize,
    pub zeta: f64,
    pub objective: f64,
    pub used_fallback: bool,
    pub generators: Vec<GeneratorCorridor>,
    pub storages: Vec<StorageCorridor>,
}

impl ParamsFile {
    pub fn new(sel: &ParamSelection, zeta: f64) -> Self {
        let p = &sel.params;
        let mut generators = Vec::new();
        for g in 0..p.pg_min.len() {
            for t in 0..p.horizon {
                generators.push(GeneratorCorridor { device: g, period: t + 1, pg_min_mw: p.pg_min[g][t], pg_max_mw: p.pg_max[g][t] });
            }
        }
        let mut storages = Vec::new();
        for n in 0..p.soc_min.len() {
            for t in 0..p.horizon {
                storages.push(StorageCorridor {
                    device: n,
                    period: t + 1,
                    soc_min_mwh: p.soc_min[n][t],
                    soc_max_mwh: p.soc_max[n][t],
                    mode: p.modes[n][t],
                });
            }
        }
        ParamsFile { horizon: p.horizon, zeta, objective: sel.objective, used_fallback: sel.used_fallback, generators, storages }
    }

    pub fn to_params(&self, model: &NetworkModel) -> Result<ScheduleParams> {
        let (ng, ns, h) = (model.generators.len(), model.storages.len(), self.horizon);
        if h != model.horizon || self.generators.len() != ng * h || self.storages.len() != ns * h {
            bail!("params file does not match the network (horizon {h}, {} generator and {} storage entries)", self.generators.len(), self.storages.len());
        }
        let mut p = ScheduleParams {
            horizon: h,
            pg_min: vec![vec![0.0; h]; ng],
            pg_max: vec![vec![0.0; h]; ng],
            soc_min: vec![vec![0.0; h]; ns],
            soc_max: vec![vec![0.0; h]; ns],
            modes: vec![vec![Mode::Idle; h]; ns],
        };
        let mut seen_g = vec![vec![false; h]; ng];
        for e in &self.generators {
            if e.device >= ng || e.period == 0 || e.period > h {
                bail!("generator entry ({}, {}) out of range", e.device, e.period);
            }
            seen_g[e.device][e.period - 1] = true;
            p.pg_min[e.device][e.period - 1] = e.pg_min_mw;
            p.pg_max[e.device][e.period - 1] = e.pg_max_mw;
        }
        let mut seen_s = vec![vec![false; h]; ns];
        for e in &self.storages {
            if e.device >= ns || e.period == 0 || e.period > h {
                bail!("storage entry ({}, {}) out of range", e.device, e.period);
            }
            seen_s[e.device][e.period - 1] = true;
            p.soc_min[e.device][e.period - 1] = e.soc_min_mwh;
            p.soc_max[e.device][e.period - 1] = e.soc_max_mwh;
            p.modes[e.device][e.period - 1] = e.mode;
        }
        if seen_g.iter().chain(&seen_s).flatten().any(|s| !s) {
            bail!("params file misses a (device, period) entry");
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodMeta {
    pub period: usize,
    /// Area of the explored period polytope, MW·MVar.
    pub area: f64,
    /// Area of the jointly certified projection written to `region.csv`.
    pub certified_area: f64,
    pub area_sequence: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub skipped_facets: usize,
}

impl PeriodMeta {
    pub fn new(r: &PeriodRegion, certified_area: f64) -> Self {
        PeriodMeta {
            period: r.period + 1,
            area: r.polytope.area,
            certified_area,
            area_sequence: r.areas.clone(),
            iterations: r.iterations,
            converged: r.converged,
            skipped_facets: r.skipped_facets,
        }
    }
}

/// `region_meta.json`: run summary plus everything later stages need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMeta {
    pub scenarios: String,
    /// DERs whose intervals were kept; the rest sit at their forecast.
    pub uncertain_ders: Vec<usize>,
    pub n_scenarios: usize,
    pub tol_area: f64,
    pub periods: Vec<PeriodMeta>,
    pub params: ParamsFile,
    pub envelope: RegionEnvelope,
}

/// `bid.json`: surfaces, compensation cost and the region they were built on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidFile {
    pub epsilon: f64,
    pub surfaces: Vec<CostSurface>,
    pub region: RegionMeta,
}

impl BidFile {
    pub fn bid(&self) -> BidFunction {
        BidFunction { surfaces: self.surfaces.clone(), epsilon: self.epsilon }
    }
}

/// `region.csv`: certified vertices per period, counter-clockwise.
pub fn write_region_csv(path: &Path, env: &RegionEnvelope) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["period", "vertex_index", "p_mw", "q_mvar"])?;
    for (t, poly) in env.certified.iter().enumerate() {
        for (i, v) in poly.vertices.iter().enumerate() {
            w.write_record([(t + 1).to_string(), i.to_string(), fmt9(v[0]), fmt9(v[1])])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `cost.csv`: every cost sample of every surface.
pub fn write_cost_csv(path: &Path, surfaces: &[CostSurface]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["period", "p_mw", "q_mvar", "z_usd", "attained"])?;
    for s in surfaces {
        for x in &s.samples {
            w.write_record([(s.period + 1).to_string(), fmt9(x.w[0]), fmt9(x.w[1]), fmt9(x.z), x.attained.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_traces(path: &Path, traces: &[IntradayTrace]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<IntradayTrace>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(n, l)| serde_json::from_str(&l?).with_context(|| format!("{}:{}", path.display(), n + 1)))
        .collect()
}

/// `ramps.csv`, `storage.csv` and `coverage.csv` from a validation run.
pub fn write_plot_data(dir: &Path, report: &ValidationReport, traces: &[IntradayTrace]) -> Result<()> {
    let mut ramps = csv_writer(&dir.join("ramps.csv"))?;
    ramps.write_record(["g", "draw", "delta_mw"])?;
    let mut storage = csv_writer(&dir.join("storage.csv"))?;
    storage.write_record(["n", "t", "charge_mw", "discharge_mw"])?;
    for (draw, tr) in traces.iter().enumerate() {
        for p in &tr.periods {
            for (g, d) in p.ramp_mw.iter().enumerate() {
                ramps.write_record([g.to_string(), draw.to_string(), fmt9(*d)])?;
            }
            for (n, (c, d)) in p.charge_mw.iter().zip(&p.discharge_mw).enumerate() {
                storage.write_record([n.to_string(), p.period.to_string(), fmt9(*c), fmt9(*d)])?;
            }
        }
    }
    ramps.flush()?;
    storage.flush()?;
    let mut cov = csv_writer(&dir.join("coverage.csv"))?;
    cov.write_record(["sample", "bid_usd", "true_usd"])?;
    if let Some(c) = &report.coverage {
        for r in &c.rows {
            cov.write_record([r.sample.to_string(), fmt9(r.bid_usd), fmt9(r.true_usd)])?;
        }
    }
    cov.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::fmt9;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt9(123456.7891234), "123456.789");
        assert_eq!(fmt9(-0.0), "0");
        assert_eq!(fmt9(2.5), "2.5");
        assert_eq!(fmt9(-1234567890.0), "-1234567890");
        assert_eq!(fmt9(4.05938971234e-12), "4.05938971e-12");
    }
}
