//! Uniformly accurate finite difference solver for the one-dimensional
//! Klein-Gordon-Zakharov system in the subsonic limit, together with the
//! limiting Klein-Gordon models and a convergence harness.

pub mod checks;
pub mod error;
pub mod fdm;
pub mod harness;
pub mod layer;
pub mod limit;
pub mod mesh;
pub mod sine;

pub use error::{KgzError, Result};
pub use fdm::{InitialData, KgzParams, KgzState, Snapshot};
pub use layer::InitialLayerData;
pub use mesh::{Grid1D, GridFn};
