//! Modelling, controller synthesis and simulation for networked control
//! systems whose actuator buffers control packets up to the next sampling
//! instant.
//!
//! The pipeline is
//! [`model::discretize`] → [`model::build_lifted`] →
//! [`synthesis::assemble_lmis`] → [`synthesis::solve_feasibility`] →
//! [`synthesis::verify_solution`] → [`netsim::simulate_buffered`].

pub mod clock;
pub mod expm;
pub mod model;
pub mod netsim;
pub mod presets;
pub mod rows;
pub mod sdp;
pub mod synthesis;

pub use model::{
    build_lifted, delta_bound, discretize, input_interval_matrix, ContinuousPlant, DiscretePlant,
    LiftedModel, ModelError, NetworkBound,
};
