//! Gender-bias measurement for masked language models.
//!
//! See the guide in `book/` for a walk-through of every module.

pub mod backend;
pub mod cda;
pub mod crows;
pub mod error;
pub mod jsd;
pub mod report;
pub mod seat;
pub mod templates;
pub mod viz;

pub use error::{Error, Result};

// Compiles and runs the guide's code blocks as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/backends.md")]
    mod backends {}
    #[doc = include_str!("../../../book/src/seat.md")]
    mod seat {}
    #[doc = include_str!("../../../book/src/crows.md")]
    mod crows {}
    #[doc = include_str!("../../../book/src/templates.md")]
    mod templates {}
    #[doc = include_str!("../../../book/src/cda.md")]
    mod cda {}
    #[doc = include_str!("../../../book/src/jsd.md")]
    mod jsd {}
    #[doc = include_str!("../../../book/src/tsne.md")]
    mod tsne {}
    #[doc = include_str!("../../../book/src/runs.md")]
    mod runs {}
    #[doc = include_str!("../../../book/src/conventions.md")]
    mod conventions {}
}
