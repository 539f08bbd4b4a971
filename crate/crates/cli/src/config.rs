//! Flat `key = value` configuration. Flags given on the command line override
//! values read from the file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use vpp_core::conic::Tolerances;
use vpp_core::harness::SimMode;
use vpp_core::params::{SelectionOptions, DEFAULT_MODE_CAP, DEFAULT_ZETA, TOL_DUAL, TOL_MODE};
use vpp_core::region::{ExploreOptions, DEFAULT_MAX_ITER, DEFAULT_TOL_AREA, TOL_VERTEX_PU};
use vpp_core::scenario::DEFAULT_SCENARIO_CAP;

/// Which DERs keep their uncertainty intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenarios {
    Full,
    Top(usize),
}

impl FromStr for Scenarios {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(Scenarios::Full);
        }
        s.strip_prefix("top-")
            .and_then(|k| k.parse().ok())
            .map(Scenarios::Top)
            .ok_or_else(|| anyhow!("scenarios must be `full` or `top-K`, got {s:?}"))
    }
}

impl std::fmt::Display for Scenarios {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scenarios::Full => write!(f, "full"),
            Scenarios::Top(k) => write!(f, "top-{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub network: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub zeta: f64,
    pub scenarios: Scenarios,
    pub scenario_cap: usize,
    pub mode_cap: usize,
    pub refinement: usize,
    pub seed: u64,
    pub samples: usize,
    pub realizations: usize,
    pub mode: SimMode,
    pub traces: bool,
    pub max_iter: usize,
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub tol_area: f64,
    pub tol_attain: f64,
    pub tol_vertex: f64,
    pub tol_dual: f64,
    pub tol_mode: f64,
    pub jobs: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let tol = Tolerances::default();
        PipelineConfig {
            network: None,
            out_dir: PathBuf::from("out"),
            zeta: DEFAULT_ZETA,
            scenarios: Scenarios::Full,
            scenario_cap: DEFAULT_SCENARIO_CAP,
            mode_cap: DEFAULT_MODE_CAP,
            refinement: vpp_core::cost::DEFAULT_REFINEMENT,
            seed: 7,
            samples: 1000,
            realizations: 10,
            mode: SimMode::Recombine,
            traces: true,
            max_iter: DEFAULT_MAX_ITER,
            tol_feas: tol.feas,
            tol_gap: tol.gap,
            tol_area: DEFAULT_TOL_AREA,
            tol_attain: vpp_core::cost::DEFAULT_TOL_ATTAIN,
            tol_vertex: TOL_VERTEX_PU,
            tol_dual: TOL_DUAL,
            tol_mode: TOL_MODE,
            jobs: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| anyhow!("bad value {value:?} for {key}: {e}"))
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "network" => self.network = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "zeta" => self.zeta = parse(key, value)?,
            "scenarios" => self.scenarios = value.parse()?,
            "scenario_cap" => self.scenario_cap = parse(key, value)?,
            "mode_cap" => self.mode_cap = parse(key, value)?,
            "refinement" => self.refinement = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "realizations" => self.realizations = parse(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "traces" => self.traces = parse(key, value)?,
            "max_iter" => self.max_iter = parse(key, value)?,
            "tol_feas" => self.tol_feas = parse(key, value)?,
            "tol_gap" => self.tol_gap = parse(key, value)?,
            "tol_area" => self.tol_area = parse(key, value)?,
            "tol_attain" => self.tol_attain = parse(key, value)?,
            "tol_vertex" => self.tol_vertex = parse(key, value)?,
            "tol_dual" => self.tol_dual = parse(key, value)?,
            "tol_mode" => self.tol_mode = parse(key, value)?,
            "jobs" => self.jobs = Some(parse(key, value)?),
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Reads `key = value` lines; blank lines and `#` comments are skipped.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), n + 1))?;
            self.set(k.trim(), v.trim()).with_context(|| format!("{}:{}", path.display(), n + 1))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let tols = [
            ("zeta", self.zeta),
            ("tol_feas", self.tol_feas),
            ("tol_gap", self.tol_gap),
            ("tol_area", self.tol_area),
            ("tol_attain", self.tol_attain),
            ("tol_vertex", self.tol_vertex),
            ("tol_dual", self.tol_dual),
            ("tol_mode", self.tol_mode),
        ];
        for (k, v) in tols {
            if !(v > 0.0) {
                bail!("{k} must be positive, got {v}");
            }
        }
        if self.scenario_cap < 1 || self.mode_cap < 1 {
            bail!("caps must be at least 1");
        }
        if self.jobs == Some(0) {
            bail!("jobs must be at least 1");
        }
        Ok(())
    }

    pub fn network(&self) -> Result<&Path> {
        self.network.as_deref().ok_or_else(|| anyhow!("no network file given (--network or `network =` in the config)"))
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances { feas: self.tol_feas, gap: self.tol_gap }
    }

    pub fn explore(&self) -> ExploreOptions {
        ExploreOptions {
            tol_area: self.tol_area,
            max_iter: self.max_iter,
            tol_vertex: self.tol_vertex,
            tolerances: self.tolerances(),
        }
    }

    pub fn selection(&self) -> SelectionOptions {
        SelectionOptions { zeta: self.zeta, tol_dual: self.tol_dual, tol_mode: self.tol_mode, cap: self.mode_cap }
    }
}
