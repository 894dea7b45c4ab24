pub mod acquisition;
pub mod config;
pub mod crossval;
pub mod design;
pub mod driver;
pub mod error;
pub mod gpr;
pub mod grid;
pub mod ingest;
pub mod io;
pub mod kle;
mod linalg;
pub mod models;
pub mod pce;
pub mod report;
pub mod surrogate;
