//! Level-set topology optimization of two-fluid heat exchangers.
//!
//! Each fluid obeys its own GLS-stabilized Navier-Stokes-Brinkmann system on
//! the whole domain, with the other fluid's region penalized as solid; a
//! single advection-diffusion equation carries temperature on the summed
//! velocity. The interface between the fluids is the zero isocontour of a P1
//! level set that is advected by regularized shape gradients and kept close
//! to a signed distance by elliptic reinitialization.

pub mod dual;
pub mod error;
pub mod flow;
pub mod hx_app;
pub mod levelset;
pub mod mesh_fem;
pub mod optimizer;
pub mod sensitivity;
pub mod thermal;

pub use error::{Error, Result};
