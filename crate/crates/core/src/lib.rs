//! Forwarding controller synthesis and simulation for an ODE driven through
//! a boundary-coupled transport PDE.
//!
//! Pipeline: build a [`PlantSpec`], check it with
//! [`plant::check_assumption1`], solve the Sylvester equation for the
//! forwarding gain `M`, assemble a [`Controller`] and run a [`Scenario`].
//! The [`verify`] module audits the resulting traces.

pub mod nonlinearity;
pub mod numlin;
pub mod plant;
pub mod sylvester;
pub mod forwarding;
pub mod simulate;
pub mod verify;

use thiserror::Error;

pub use forwarding::{synthesize, synthesize_with, Controller, ForwardingError, SynthesisOptions};
pub use nonlinearity::{Nonlinearity, NonlinearityError};
pub use numlin::{Complex, DenseMatrix, LinalgError};
pub use plant::{
    build_plant, check_assumption1, AssumptionReport, CascadeState, Grid, PdeState, PlantError, PlantSpec, RawPlant,
    WeightMode,
};
pub use simulate::{run, InitialProfile, Integrator, Scenario, SimError, SimulationTrace};
pub use sylvester::{SylvesterError, SylvesterMethod, SylvesterSolution};
pub use verify::{AuditReport, VerifyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Nonlinearity(#[from] NonlinearityError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Sylvester(#[from] SylvesterError),
    #[error(transparent)]
    Forwarding(#[from] ForwardingError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}
