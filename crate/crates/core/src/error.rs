use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("not radial: branch {from}-{to} closes a cycle")]
    NotRadial { from: u32, to: u32 },

    #[error("not radial: bus {0} is disconnected from the PCC bus")]
    Disconnected(u32),

    #[error("{count} extreme scenarios exceed the cap of {cap}; reduce the box with rank_ders/reduce_box")]
    ScenarioCap { count: u128, cap: usize },

    #[error("unknown DER id {0}")]
    UnknownDer(usize),

    #[error("{stage}: program is infeasible")]
    Infeasible { stage: String },

    #[error("{stage}: program is unbounded")]
    Unbounded { stage: String },

    #[error("{stage}: solver numerical trouble ({detail})")]
    Numerical { stage: String, detail: String },

    #[error("storage {storage} charges and discharges simultaneously at period {period}")]
    SimultaneousChargeDischarge { storage: usize, period: usize },

    #[error("{candidates} mode partitions exceed the enumeration cap of {cap}; use fewer storages or a shorter horizon")]
    ModeCap { candidates: u128, cap: usize },

    #[error("realization outside the uncertainty box at DER {der}, period {period}")]
    OutsideBox { der: usize, period: usize },

    #[error("point ({p}, {q}) is outside the period-{period} domain")]
    OutsideDomain { period: usize, p: f64, q: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("convexity violated: surface underestimates cost by {gap} at period {period}")]
    ConvexityViolated { period: usize, gap: f64 },

    #[error("region is empty at period {period}")]
    EmptyRegion { period: usize },

    #[error("envelope vertex {vertex} of period {period} carries no state snapshot")]
    MissingSnapshot { period: usize, vertex: usize },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
