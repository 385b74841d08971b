//! Digital twin of multi-band optical line systems: spectral grids, fiber and
//! amplifier physics, QoT estimation and calibration, an optimization toolbox,
//! and an agent that only deploys strategies the twin has verified.

pub mod agent;
pub mod amplifier;
pub mod exec;
pub mod fiber;
pub mod scenario;
pub mod spectral;
pub mod toolbox;
pub mod topology;
pub mod twin;
