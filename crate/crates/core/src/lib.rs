pub mod access;
pub mod bench;
pub mod cli;
pub mod client;
pub mod crypto;
pub mod gateway;
pub mod keystore;
pub mod ledger;
pub mod registry;
pub mod rights;
pub mod scenario;
pub mod service;
pub mod store;
