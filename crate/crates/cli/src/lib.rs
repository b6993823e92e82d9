//! CLI harness: training, sweeps, verification and lambda visualization.

pub mod app;
pub mod presets;
pub mod viz;

pub use app::run;
