pub mod config;
pub mod coupling;
pub mod eig;
pub mod engine;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod hamiltonian;
pub mod hopping;
pub mod momentum_basis;
pub mod observables;
pub mod oracle;
pub mod relaxation;

pub use error::{Error, Result};
