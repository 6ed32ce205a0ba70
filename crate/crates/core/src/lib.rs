//! Energy-optimal UAV-assisted federated learning with verifiable aggregation.

pub mod fl;
pub mod model;
pub mod plan;
pub mod sca;
pub mod seeds;
pub mod twin;
pub mod zkfed;

pub use model::{
    AllocationSolution, EnergyLatencyReport, ModelError, PhaseCost, Point2, SystemConfig, UavTrajectory, UserProfile,
};
pub use twin::{ActualParams, SyncSchedule, TwinState};
