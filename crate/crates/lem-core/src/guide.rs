//! The user guide, embedded so its code blocks run as doc-tests.
//!
//! The rendered book lives in `book/` at the repository root (`mdbook build
//! book`); each chapter is included here verbatim, which keeps every snippet
//! in the guide compiling against the current API under `cargo test --doc`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/encoder.md")]
pub mod encoder {}

#[doc = include_str!("../../../book/src/allocation.md")]
pub mod allocation {}

#[doc = include_str!("../../../book/src/objective.md")]
pub mod objective {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/interfaces.md")]
pub mod interfaces {}
