pub mod cli;
pub mod config;
pub mod fmap;
pub mod ppm;
pub mod report;

pub use cli::run;
