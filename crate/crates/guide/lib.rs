//! Compiles the book chapters so their code listings run as doctests.

#[doc = include_str!("../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../book/src/corpus.md")]
pub mod corpus {}
#[doc = include_str!("../../book/src/signal.md")]
pub mod signal {}
#[doc = include_str!("../../book/src/autodiff.md")]
pub mod autodiff {}
#[doc = include_str!("../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../book/src/adaptation.md")]
pub mod adaptation {}
#[doc = include_str!("../../book/src/cli.md")]
pub mod cli {}
