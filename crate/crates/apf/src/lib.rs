pub mod bake;
pub mod beam;
pub mod cli;
pub mod error;
pub mod img;
pub mod math;
pub mod neural;
pub mod rng;
pub mod scene;
pub mod svo;
pub mod tracer;
pub mod transmit;
