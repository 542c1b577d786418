//! Runs the code listings of the book in `book/src` as doc-tests.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}
#[doc = include_str!("../../../book/src/correlations.md")]
pub mod correlations {}
#[doc = include_str!("../../../book/src/random-matrices.md")]
pub mod random_matrices {}
#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}
#[doc = include_str!("../../../book/src/states.md")]
pub mod states {}
#[doc = include_str!("../../../book/src/sectors.md")]
pub mod sectors {}
#[doc = include_str!("../../../book/src/trajectories.md")]
pub mod trajectories {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
