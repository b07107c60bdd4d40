//! Closed-loop runs of every model against a constant-power load bus,
//! scenario schedules, RMSE scoring against the high-order reference and
//! CSV output.

mod closed_loop;
mod compare;
mod operating_point;
mod scenario;

pub use closed_loop::{ClosedLoop, Retune, Sample};
pub use compare::{
    export_csv, interpolate, parse_csv, plan, rmse, rmse_window, run_comparison, run_model, write_csv, Comparison,
    ModelRun, Plan, Rmse, RmseReport, Signal, CSV_HEADER,
};
pub use operating_point::{
    elemental_static, elemental_vref, high_order_equilibrium, high_order_relative_equilibrium, OperatingPoint,
};
pub use scenario::{Scenario, ScenarioEvent};
