//! Learning the ground metric from labeled change points.

mod init;
mod objective;
mod standardize;
mod train;
mod triplets;

pub use init::{init_metric, InitScheme};
pub use objective::{loss_gradient, triplet_loss, LossEval, TripletObjective};
pub use standardize::Standardizer;
pub use train::{
    proximal_step, soft_threshold, split_change_points, train_metric, LossReduction, TrainConfig,
    TrainedModel,
};
pub use triplets::{make_triplets, LabeledSequence, Triplet, TripletSet, Window};
