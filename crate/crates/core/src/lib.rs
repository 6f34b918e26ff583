pub mod data;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;
