//! The guide in `book/`, compiled as documentation so that `cargo test`
//! runs every Rust snippet in it. One module per chapter keeps failures easy
//! to locate.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}
#[doc = include_str!("../../../book/src/paths.md")]
pub mod paths {}
#[doc = include_str!("../../../book/src/penalization.md")]
pub mod penalization {}
#[doc = include_str!("../../../book/src/reflection.md")]
pub mod reflection {}
#[doc = include_str!("../../../book/src/control.md")]
pub mod control {}
#[doc = include_str!("../../../book/src/hjb.md")]
pub mod hjb {}
#[doc = include_str!("../../../book/src/maxprinciple.md")]
pub mod maxprinciple {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
