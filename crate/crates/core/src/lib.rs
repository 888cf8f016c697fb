//! GARK time integration for additively split systems, discrete adjoints and
//! adjoint-weighted estimates of temporal and spatial errors in a goal
//! functional.

pub mod adaptivity;
pub mod adjoint;
pub mod checks;
pub mod error;
pub mod estimate;
pub mod experiments;
pub mod integrator;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod oracle;
pub mod problems;
pub mod system;
pub mod tableau;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/methods.md")]
    struct Methods;
    #[doc = include_str!("../../../book/src/integration.md")]
    struct Integration;
    #[doc = include_str!("../../../book/src/estimates.md")]
    struct Estimates;
    #[doc = include_str!("../../../book/src/adaptivity.md")]
    struct Adaptivity;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
