//! Core of the sciflow science gateway: the workflow model, sweep planner,
//! execution engine, compute bridge and repository.

pub mod access;
pub mod bridge;
pub mod clock;
pub mod engine;
pub mod hash;
pub mod ident;
pub mod instance;
pub mod model;
pub mod repository;
pub mod sweep;
pub mod testkit;
