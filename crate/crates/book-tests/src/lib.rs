//! Runs the code listings in `book/` as doc-tests, one module per chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/steering.md")]
pub mod steering {}
#[doc = include_str!("../../../book/src/speed.md")]
pub mod speed {}
#[doc = include_str!("../../../book/src/serial.md")]
pub mod serial {}
#[doc = include_str!("../../../book/src/safety.md")]
pub mod safety {}
#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}
#[doc = include_str!("../../../book/src/planning.md")]
pub mod planning {}
#[doc = include_str!("../../../book/src/stack.md")]
pub mod stack {}
#[doc = include_str!("../../../book/src/gateway.md")]
pub mod gateway {}
#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}
