//! System assembly, simulation, measurement and reporting.

pub mod compare;
pub mod config;
pub mod monitors;
pub mod occupancy;
pub mod overhead;
pub mod system;
pub mod trace;
pub mod workload;
