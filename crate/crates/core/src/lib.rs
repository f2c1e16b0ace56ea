//! Drive-by-wire stack for a converted mobility-scooter research vehicle.

pub mod bus;
pub mod capture;
pub mod config;
pub mod drivebywire;
pub mod drivers;
pub mod gateway;
pub mod geometry;
pub mod planner;
pub mod pose;
pub mod protocol;
pub mod quant;
pub mod safety;
pub mod scenario;
pub mod selftest;
pub mod simulator;
pub mod stack;
pub mod telemetry;
pub mod transport;
