//! Kinodynamic motion planning over motion primitives.
//!
//! The crate provides discontinuity-bounded A* over primitive sets, an
//! optimization-based repair step, the anytime outer loop that alternates
//! the two, and a conditional denoising-diffusion generator that proposes
//! problem-adapted primitives. Dataset creation and benchmarking utilities
//! compare generated primitives against randomly generated ones.

pub mod bench;
pub mod datagen;
pub mod dbastar;
pub mod diffusion;
pub mod dynamics;
pub mod linalg;
pub mod planner;
pub mod nn;
pub mod primitives;
pub mod seeds;
pub mod trajopt;
pub mod world;
