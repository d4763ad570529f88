pub mod attention;
pub mod backbones;
pub mod data;
pub mod datagen;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod training;
