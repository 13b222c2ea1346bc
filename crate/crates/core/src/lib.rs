pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod continual;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod task;
pub mod training;

pub use error::{Error, Result};
pub use task::{TaskId, TaskKind};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tape.md")]
    mod tape {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    mod encoder {}
    #[doc = include_str!("../../../book/src/ownership.md")]
    mod ownership {}
    #[doc = include_str!("../../../book/src/lifecycle.md")]
    mod lifecycle {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/checkpoints.md")]
    mod checkpoints {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
