//! Network data model, case I/O and AC power flow.

pub mod case;
pub mod powerflow;
pub mod scaling;
pub mod ybus;

pub use case::{
    load_case, Branch, Bus, BusId, BusKind, ExciterSpec, LoadSpec, MachineSpec, MotorSpec,
    PowerFlowCase, Zone, DEFAULT_MOTOR_MW_THRESHOLD,
};
pub use powerflow::{solve_power_flow, PowerFlowSolution, DEFAULT_MAX_ITER, DEFAULT_TOL};
pub use scaling::{scale_case, CaseScaling};
pub use ybus::build_ybus;
