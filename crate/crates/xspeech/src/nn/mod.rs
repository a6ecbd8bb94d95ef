//! Minimal training stack: autodiff tape, parameter store, Adam, transformer
//! blocks, and a matching no-grad inference path.

pub mod adam;
pub mod graph;
pub mod infer;
pub mod params;
pub mod pe;
pub mod transformer;

pub use adam::{Adam, AdamConfig};
pub use graph::{Graph, Gradients, Mat, Var};
pub use params::{Bound, ParamStore};
