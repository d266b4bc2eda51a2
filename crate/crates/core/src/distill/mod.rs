//! Grade-conditioned sampling from the teacher bank and the distillation losses.

mod losses;
mod sampler;

pub use losses::{
    clip_loss, clip_loss_grad, combine_losses, triplet_loss, triplet_loss_grad, triplet_loss_vec, LossMode, Margin,
    Temperature, Triplet, TripletGrad,
};
pub use sampler::{negative_grade, sample_triplet, SampleRecord, TripletDraw, DEFAULT_K_CANDIDATES};
