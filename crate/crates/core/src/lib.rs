//! Autocovariance-based functional principal component regression for
//! cointegrated functional time series observed with measurement error.

pub mod acovfpca;
pub mod densities;
pub mod error;
pub mod fgrid;
pub mod io;
pub mod regress;
pub mod simlab;
pub mod vrtest;

pub use error::{Error, Result};
pub use fgrid::{EigenSystem, FnSeries, Grid, GridFn, LinOp};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grids-and-operators.md")]
    mod grids_and_operators {}
    #[doc = include_str!("../../../book/src/densities.md")]
    mod densities {}
    #[doc = include_str!("../../../book/src/autocovariance-fpca.md")]
    mod autocovariance_fpca {}
    #[doc = include_str!("../../../book/src/estimation-and-inference.md")]
    mod estimation_and_inference {}
    #[doc = include_str!("../../../book/src/vr-test.md")]
    mod vr_test {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
