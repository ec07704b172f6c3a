pub mod circuit;
pub mod diff;
pub mod variational;
pub mod models;
pub mod losses;
pub mod metrics;
pub mod trainer;
pub mod mapfile;
pub mod cli;
