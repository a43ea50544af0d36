pub mod bliss;
pub mod campaign;
pub mod leakage;
pub mod learn;
pub mod recover;
pub mod ring;
pub mod sampler;
