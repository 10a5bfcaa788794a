pub mod api;
pub mod cleansing;
pub mod cli;
pub mod dataset;
pub mod exploration;
pub mod fusion;
pub mod ingest;
pub mod model;
pub mod report;
pub mod store;
pub mod workbench;
