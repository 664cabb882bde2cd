//! Green's-function neural operators for families of PDEs.
//!
//! The solution of a linear problem is represented as a quadrature sum of a
//! learned kernel network against sampled source or boundary data; nonlinear
//! problems wrap the sum in a small outer network. Training minimizes a
//! weighted empirical risk of PDE residual, boundary mismatch, and optional
//! sparse-label terms over a family of problem instances. Independent
//! reference solvers (closed forms, discrete-ordinates transport, upwind
//! steady Burgers) supply labels and evaluation grids.

pub mod autodiff;
pub mod error;
pub mod network;
pub mod quadrature;

pub use error::{Error, Result};
pub use network::{Activation, MlpNetwork, OutputTransform};
pub use quadrature::{QuadratureRule, TensorRule2d};
