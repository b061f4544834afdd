//! Discrete-event kernel: clock and event queue, seeded substreams, user
//! mobility and the radio/coverage abstraction.

pub mod mobility;
pub mod queue;
pub mod radio;
pub mod rng;

pub use mobility::{
    first_exit_time, position_at, random_waypoint, residence_time, Bounds, MobilityError,
    MobilityMode, MobilityPath, Waypoint,
};
pub use queue::{EventQueue, ScheduleError, Scheduled};
pub use radio::{connected, nodes_in_range, transfer_time, RadioModel};
pub use rng::RunRng;
