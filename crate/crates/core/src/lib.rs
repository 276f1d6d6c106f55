pub mod clearing;
pub mod frequency;
pub mod lp;
pub mod model;
pub mod nomogram;
pub mod output;
pub mod reserve;
pub mod rocof;
pub mod run;
pub mod scenario;

pub use output::emit_outputs;
pub use run::{run, RunError, RunReport};
pub use scenario::{load_scenario, LoadError, Scenario};
