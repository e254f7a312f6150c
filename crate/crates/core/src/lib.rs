//! Boundary control of an ODE, heat equation, ODE cascade by backstepping,
//! with a boundary observer driven by `u_x(0, t)`.

pub mod controller;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod linalg;
pub mod observer;
pub mod operators;
pub mod output;
pub mod plant;
pub mod scenario;
pub mod simulator;
pub mod stencil;
pub mod verify;

pub use error::{Error, Result};
pub use grid::GridSpec;
pub use kernels::{CtrlKernel, KernelSet, KernelValue, ObsKernel};
pub use plant::{GainSet, PlantConfig};
pub use scenario::ScenarioFile;
pub use simulator::{run_scenario, Mode, RunOptions, RunResult};
