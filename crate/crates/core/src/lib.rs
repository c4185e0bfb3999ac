pub mod assist;
pub mod classifier;
pub mod gaze;
pub mod geometry;
pub mod layout;
pub mod session;
pub mod sim;
