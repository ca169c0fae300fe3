#[path = "../common/mod.rs"]
mod common;

mod client;
mod mock_endpoint;
mod runner;
mod store;
