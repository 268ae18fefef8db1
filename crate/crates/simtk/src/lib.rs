//! Desk-scale payloads: Lennard-Jones MD with a strain ramp plus the
//! trajectory conversion and analysis steps that follow it.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod formats;
pub mod frame;
pub mod md;
pub mod raster;
pub mod stress;

pub use error::ToolError;
pub use frame::{Atom, Frame, Trajectory};
