pub mod anim;
pub mod audit;
pub mod dataset;
pub mod deform;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod image;
pub mod mesh;
pub mod recon;
pub mod render;
pub mod spatial;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/gaussians.md")]
    mod gaussians {}
    #[doc = include_str!("../../../book/src/deformation.md")]
    mod deformation {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/coarse-mesh.md")]
    mod coarse_mesh {}
    #[doc = include_str!("../../../book/src/animation.md")]
    mod animation {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
