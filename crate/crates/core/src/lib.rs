pub mod config;
pub mod dispatch;
pub mod ingest;
pub mod types;
pub mod valuation;
