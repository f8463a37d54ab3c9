//! Task generators and the exact oracles used to check them.

mod batch;
pub mod gp;
pub mod image;
pub mod kernels;
pub mod wheel;

pub use batch::{gather_rows, TaskBatch};
pub use gp::{
    gp_oracle_batch_loglik, gp_posterior, gp_posterior_loglik, sample_gp_batch, sample_gp_function, sample_gp_tasks,
    sample_gp_tasks_with_hypers, GpHyper, GpTaskConfig,
};
pub use image::{
    image_task, load_pgm_corpus, parse_pgm, rescale_coord, rescale_value, sample_image_tasks, synth_images,
    unscale_coord, unscale_value, Image, ImageSource, ImageTaskConfig,
};
pub use kernels::{kernel_matrix, matern52_kernel, rbf_kernel, KernelKind};
pub use wheel::{sample_disk, wheel_means, wheel_rewards, wheel_sample_batch, WheelConfig, N_ARMS};

use rand::Rng;

use crate::error::Result;

/// Anything that can produce training or evaluation batches.
#[derive(Clone, Debug)]
pub enum TaskSource {
    Gp(GpTaskConfig),
    Image { config: ImageTaskConfig, images: Vec<Image> },
    Wheel(WheelConfig),
}

impl TaskSource {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TaskBatch> {
        match self {
            TaskSource::Gp(c) => sample_gp_tasks(c, rng),
            TaskSource::Image { config, images } => sample_image_tasks(images, config, rng),
            TaskSource::Wheel(c) => wheel_sample_batch(c, rng),
        }
    }

    pub fn x_dim(&self) -> usize {
        match self {
            TaskSource::Gp(_) => 1,
            TaskSource::Image { .. } | TaskSource::Wheel(_) => 2,
        }
    }

    pub fn y_dim(&self) -> usize {
        match self {
            TaskSource::Gp(_) => 1,
            TaskSource::Image { config, .. } => config.channels,
            TaskSource::Wheel(_) => N_ARMS,
        }
    }
}
