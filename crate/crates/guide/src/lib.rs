//! The `stokes-ctm` guide. Each chapter of `book/` is a module here so that
//! its code blocks run as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/grid.md")]
pub mod grid {}
#[doc = include_str!("../../../book/src/wave-control.md")]
pub mod wave_control {}
#[doc = include_str!("../../../book/src/kernel.md")]
pub mod kernel {}
#[doc = include_str!("../../../book/src/transmutation.md")]
pub mod transmutation {}
#[doc = include_str!("../../../book/src/observability.md")]
pub mod observability {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}
