//! Software pipeline for a portable air-quality station.
pub mod aqi;
pub mod batch;
pub mod calibration;
pub mod gateway;
pub mod protocols;
pub mod queue;
pub mod reading;
pub mod simulator;
pub mod storage;
pub mod telemetry;
