pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod rl;
pub mod tensor;
