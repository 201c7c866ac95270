//! Cycle-accounted model of a duplicate-tag directory coherence system with
//! two interchangeable coherence engines, a microcode toolchain and an
//! explicit-state protocol checker.

pub mod cce;
pub mod checker;
pub mod cli;
pub mod directory;
pub mod fsm_cce;
pub mod harness;
pub mod lce;
pub mod memory;
pub mod msg;
pub mod mshr;
pub mod network;
pub mod protocol;
pub mod ucode;

pub use protocol as protocol_core;
pub use ucode as ucode_cce;
