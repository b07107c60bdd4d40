//! Synchronous-machine models from a nineteenth-order reference down to
//! second-order reductions, with the manifold algebra between them, a two-bus
//! constant-power-load harness and scenario runners.
//!
//! ```
//! use synchro::params::{derive_constants, MachineParameters};
//!
//! let p = MachineParameters::table_ii();
//! let c = derive_constants(&p).unwrap();
//! assert_eq!(c.c_k, 200.0);
//! ```

pub mod error;
pub mod harness;
pub mod models;
pub mod network;
pub mod params;
pub mod solver;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub mod overview {}
    #[doc = include_str!("../../../book/src/parameters.md")]
    pub mod parameters {}
    #[doc = include_str!("../../../book/src/models.md")]
    pub mod models {}
    #[doc = include_str!("../../../book/src/equilibrium.md")]
    pub mod equilibrium {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    pub mod scenarios {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
