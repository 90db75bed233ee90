//! Machine, motor and relay models and the time-domain simulator.

mod dense;
pub mod machine;
pub mod motor;
pub mod network;
mod sim;
pub mod uvls;

pub use sim::{
    init_dynamics, shed_load, simulate_interval, simulate_interval_with, DynState, DynamicModel, Event, EventKind,
    EventSource, LoggedEvent, DEFAULT_DT,
};
pub use uvls::{RelayMode, UvlsRelays, UvlsSettings, UvlsStage};
