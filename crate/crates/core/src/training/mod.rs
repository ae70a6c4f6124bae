//! Physics-informed training: design samplers, the mesh loss and the loop.

mod physics;
mod sampling;
mod train;

pub use physics::{
    loss_from_residuals, CollocationSet, DesignBatch, DesignSource, LossBreakdown, LossWeights,
    PhysicsProblem, Residuals, LOSS_TERMS,
};
pub use sampling::{block_pattern, sample_floorplan, sample_grf, GrfSampler};
pub use train::{
    iteration_designs, mape, DesignSampler, LossRecord, SamplerSpec, TrainConfig, Trainer,
    LOSS_CSV_HEADER,
};
