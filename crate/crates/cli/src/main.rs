mod artifacts;
mod config;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use artifacts::{fmt9, read_json, read_traces, write_json, BidFile, ParamsFile, RegionMeta};
use config::PipelineConfig;
use vpp_core::harness::ValidationReport;

#[derive(Parser)]
#[command(name = "vpp", version, about = "Feasible PCC regions, bids and intraday validation for a virtual power plant")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Settings shared by every subcommand; each overrides the config file.
#[derive(Args, Default)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    network: Option<String>,
    /// Worker threads for parallel solves.
    #[arg(long)]
    jobs: Option<String>,
    #[arg(long)]
    zeta: Option<String>,
    /// `full` or `top-K`.
    #[arg(long)]
    scenarios: Option<String>,
    #[arg(long)]
    scenario_cap: Option<String>,
    #[arg(long)]
    mode_cap: Option<String>,
    #[arg(long)]
    refinement: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    realizations: Option<String>,
    /// `recombine` or `resolve`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    #[arg(long)]
    tol_feas: Option<String>,
    #[arg(long)]
    tol_gap: Option<String>,
    #[arg(long)]
    tol_area: Option<String>,
    #[arg(long)]
    tol_attain: Option<String>,
    #[arg(long)]
    tol_vertex: Option<String>,
    #[arg(long)]
    tol_dual: Option<String>,
    #[arg(long)]
    tol_mode: Option<String>,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Some(p) = &self.config {
            cfg.load(p)?;
        }
        let flags = [
            ("network", &self.network),
            ("jobs", &self.jobs),
            ("zeta", &self.zeta),
            ("scenarios", &self.scenarios),
            ("scenario_cap", &self.scenario_cap),
            ("mode_cap", &self.mode_cap),
            ("refinement", &self.refinement),
            ("seed", &self.seed),
            ("samples", &self.samples),
            ("realizations", &self.realizations),
            ("mode", &self.mode),
            ("max_iter", &self.max_iter),
            ("tol_feas", &self.tol_feas),
            ("tol_gap", &self.tol_gap),
            ("tol_area", &self.tol_area),
            ("tol_attain", &self.tol_attain),
            ("tol_vertex", &self.tol_vertex),
            ("tol_dual", &self.tol_dual),
            ("tol_mode", &self.tol_mode),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        if let Some(j) = cfg.jobs {
            rayon::ThreadPoolBuilder::new().num_threads(j).build_global().context("configuring worker threads")?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Print `der_id,period,score` sorted by uncertainty impact.
    Rank {
        #[command(flatten)]
        common: Common,
    },
    /// Select generator/SOC corridors and storage modes.
    Params {
        #[command(flatten)]
        common: Common,
        #[arg(short, long, default_value = "params.json")]
        output: PathBuf,
    },
    /// Explore the per-period regions and the coupled envelope.
    Region {
        #[command(flatten)]
        common: Common,
        /// Parameters from `vpp params`; selected afresh when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(short, long, default_value = "region.csv")]
        output: PathBuf,
        /// Defaults to `region_meta.json` next to the CSV.
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Build the cost surfaces and compensation cost over a region.
    Cost {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        region: PathBuf,
        #[arg(short, long, default_value = "cost.csv")]
        output: PathBuf,
        /// Defaults to `bid.json` next to the CSV.
        #[arg(long)]
        bid: Option<PathBuf>,
    },
    /// Monte-Carlo robustness and bid coverage check.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bid: PathBuf,
        #[arg(short, long, default_value = "report.json")]
        output: PathBuf,
        /// Defaults to `traces.jsonl` next to the report.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Skip writing traces.
        #[arg(long)]
        no_traces: bool,
    },
    /// Run params, region, cost, validate and plotdata into one directory.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write ramps.csv, storage.csv and coverage.csv from a validation run.
    Plotdata {
        #[arg(long, default_value = "report.json")]
        report: PathBuf,
        #[arg(long, default_value = "traces.jsonl")]
        traces: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

fn summarize(report: &ValidationReport) -> bool {
    eprintln!(
        "{} of {} traces feasible, max residual {:.3e} ({})",
        report.feasible_traces, report.n_traces, report.max_residual, report.max_residual_family
    );
    if let Some(c) = &report.coverage {
        eprintln!("bid coverage: min margin {:.6}, {} failures, epsilon {:.6}", c.min_margin, c.failures.len(), c.epsilon);
    }
    report.passed()
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Rank { common } => {
            let cfg = common.config()?;
            let model = stages::load(cfg.network()?)?;
            let mut out = csv::Writer::from_writer(std::io::stdout().lock());
            out.write_record(["der_id", "period", "score"])?;
            for (r, t, s) in stages::ranking(&model) {
                out.write_record([r.to_string(), t.to_string(), fmt9(s)])?;
            }
            out.flush()?;
        }
        Cmd::Params { common, output } => {
            let cfg = common.config()?;
            let model = stages::load(cfg.network()?)?;
            let sel = stages::params(&model, &cfg)?;
            write_json(&output, &ParamsFile::new(&sel, cfg.zeta))?;
        }
        Cmd::Region { common, params, output, meta } => {
            let cfg = common.config()?;
            let model = stages::load(cfg.network()?)?;
            let file = match params {
                Some(p) => stages::stage("params", read_json::<ParamsFile>(&p))?,
                None => ParamsFile::new(&stages::params(&model, &cfg)?, cfg.zeta),
            };
            let sp = stages::stage("params", file.to_params(&model))?;
            let region = stages::region(&model, &sp, file, &cfg)?;
            artifacts::write_region_csv(&output, &region.envelope)?;
            write_json(&meta.unwrap_or_else(|| sibling(&output, "region_meta.json")), &region)?;
        }
        Cmd::Cost { common, region, output, bid } => {
            let cfg = common.config()?;
            let model = stages::load(cfg.network()?)?;
            let meta: RegionMeta = stages::stage("cost", read_json(&region))?;
            let file = stages::cost(&model, meta, &cfg)?;
            artifacts::write_cost_csv(&output, &file.surfaces)?;
            write_json(&bid.unwrap_or_else(|| sibling(&output, "bid.json")), &file)?;
        }
        Cmd::Validate { common, bid, output, traces, no_traces } => {
            let cfg = common.config()?;
            let model = stages::load(cfg.network()?)?;
            let file: BidFile = stages::stage("validate", read_json(&bid))?;
            let (report, tr) = stages::validation(&model, &file, &cfg)?;
            write_json(&output, &report)?;
            if !no_traces {
                artifacts::write_traces(&traces.unwrap_or_else(|| sibling(&output, "traces.jsonl")), &tr)?;
            }
            return Ok(summarize(&report));
        }
        Cmd::Pipeline { common, out_dir } => {
            let mut cfg = common.config()?;
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            let dir = cfg.out_dir.clone();
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let model = stages::load(cfg.network()?)?;
            let sel = stages::params(&model, &cfg)?;
            let pfile = ParamsFile::new(&sel, cfg.zeta);
            write_json(&dir.join("params.json"), &pfile)?;
            let region = stages::region(&model, &sel.params, pfile, &cfg)?;
            artifacts::write_region_csv(&dir.join("region.csv"), &region.envelope)?;
            write_json(&dir.join("region_meta.json"), &region)?;
            let bid = stages::cost(&model, region, &cfg)?;
            artifacts::write_cost_csv(&dir.join("cost.csv"), &bid.surfaces)?;
            write_json(&dir.join("bid.json"), &bid)?;
            let (report, traces) = stages::validation(&model, &bid, &cfg)?;
            write_json(&dir.join("report.json"), &report)?;
            if cfg.traces {
                artifacts::write_traces(&dir.join("traces.jsonl"), &traces)?;
            }
            stages::stage("plotdata", artifacts::write_plot_data(&dir, &report, &traces))?;
            return Ok(summarize(&report));
        }
        Cmd::Plotdata { report, traces, out_dir } => {
            let rep: ValidationReport = stages::stage("plotdata", read_json(&report))?;
            let tr = stages::stage("plotdata", read_traces(&traces))?;
            std::fs::create_dir_all(&out_dir)?;
            stages::stage("plotdata", artifacts::write_plot_data(&out_dir, &rep, &tr))?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VPP_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("validation failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
