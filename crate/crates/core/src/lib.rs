//! Feasible power-transfer regions, bid cost surfaces and intraday validation
//! for a virtual power plant on a radial distribution feeder.

pub mod conic;
pub mod cost;
pub mod error;
pub mod harness;
pub mod network;
pub mod par;
pub mod params;
pub mod region;
pub mod scenario;

pub use error::{Error, Result};
