//! Multi-UAV collaborative sensing over a cell-free MIMO uplink.
//!
//! The crate models a mission in which `K` multi-antenna UAVs sense an area,
//! split the work into one common task and `K` private tasks, and deliver the
//! sensory data to a cloud server through `M` multi-antenna access points with
//! capacity-limited fronthaul links. Private data is sent in a TDMA phase and
//! a NOMA phase; common data is sent cooperatively by all UAVs.
//!
//! Module map:
//!
//! - [`scenario`]: geometry, Rician/ULA channel sampling and the stacked channel views.
//! - [`link_model`]: compression-bit functions, achievable rates and the completion-time recursion.
//! - [`fp_aux`]: closed-form auxiliary updates and the three surrogate families.
//! - [`subproblem`]: conic canonicalization of the fixed-auxiliary problem and the solver backend.
//! - [`optimizer`]: the alternating algorithm, baselines and multi-start.
//! - [`bench`]: experiment configuration, Monte Carlo sweeps and CSV emission.

pub mod bench;
pub mod error;
pub mod fp_aux;
pub mod linalg;
pub mod link_model;
pub mod optimizer;
pub mod rng;
pub mod scenario;
pub mod subproblem;

pub use error::{Error, Result};
pub use link_model::{PrimalState, QuantizerState, RateSet, SicOrder, TaskSplit, Timeline, TransmitState};
pub use optimizer::{SchemeMode, SolveTrace};
pub use scenario::{ChannelSet, Geometry, Scenario, SystemConfig};

