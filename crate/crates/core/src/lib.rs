//! Discrete-time simulation of an automated four-way intersection.

pub mod cbaa;
pub mod config;
pub mod dynamics;
pub mod geometry;
pub mod metrics;
pub mod mpc;
pub mod priority;
pub mod qp;
pub mod sim;
