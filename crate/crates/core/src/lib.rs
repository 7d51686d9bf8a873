//! Simulation and storage-policy toolkit for robotic mobile fulfillment
//! warehouses: robots carry whole shelves between a storage grid and a
//! single picking station, and a storage policy chooses where each returning
//! shelf goes.

pub mod agent;
pub mod bench;
pub mod demand;
pub mod layout;
pub mod nn;
pub mod policies;
pub mod rollout;
pub mod sim;
