//! Runs the code blocks of the guide in `book/` as doc tests.
//!
//! mdbook cannot link external crates into its snippets, so each chapter is
//! included here as a module's docs and `cargo test --doc` runs them. One
//! module per chapter keeps a failing snippet traceable to its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/cell.md")]
pub mod cell {}

#[doc = include_str!("../../../book/src/forces.md")]
pub mod forces {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/datagen.md")]
pub mod datagen {}

#[doc = include_str!("../../../book/src/diagnostics.md")]
pub mod diagnostics {}

#[doc = include_str!("../../../book/src/studies.md")]
pub mod studies {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
