// mdbook cannot run the listings of a book that depends on a local crate, so
// every chapter is pulled in here as module docs and `cargo test --doc` runs
// the snippets. One module per chapter keeps failures traceable.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/chains.md")]
pub mod chains {}
#[doc = include_str!("src/mixing.md")]
pub mod mixing {}
#[doc = include_str!("src/builders.md")]
pub mod builders {}
#[doc = include_str!("src/objectives.md")]
pub mod objectives {}
#[doc = include_str!("src/solver.md")]
pub mod solver {}
#[doc = include_str!("src/experiments.md")]
pub mod experiments {}
