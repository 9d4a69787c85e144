//! Compiles the code listings of the guide in `book/` as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/simulating.md")]
pub mod simulating {}

#[doc = include_str!("../../../book/src/monitors.md")]
pub mod monitors {}

#[doc = include_str!("../../../book/src/planning.md")]
pub mod planning {}

#[doc = include_str!("../../../book/src/convergence.md")]
pub mod convergence {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
