//! Science gateway portal: HTTP API, accounts, scheduler loop and the
//! `sciflow` command-line client.

pub mod api;
pub mod auth;
pub mod client;
pub mod config;
pub mod demo;
pub mod launcher;
pub mod server;

pub use server::{serve, Portal, StartError};
