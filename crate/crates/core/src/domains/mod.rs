pub mod beacon;
pub mod grasp;
