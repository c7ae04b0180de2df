//! Conditional diffusion planner for occlusion recovery.

mod diffusion;
mod network;
mod pursuit;
mod schedule;
mod train;

pub use diffusion::{
    draw_noise, example_gradient, example_loss, grad_check, loss, noise_example, sample_plan, unflatten, Denoiser, GradCheck, NoisedExample,
    GRAD_CHECK_FLOOR,
};
pub use network::{time_embedding, NetConfig, NoisePredictor};
pub use pursuit::{trajectory_to_actions, PurePursuit, PursuitConfig};
pub use schedule::{build_schedule, forward_noise, predict_clean, NoiseSchedule};
pub use train::{evaluate, evaluation_set, train, write_loss_curve, Checkpoint, TrainConfig};
