//! Modality-diffused data completion: per-modality latent autoencoders, a
//! conditioned latent diffusion model and the generation/refinement loop
//! that fills missing modality rows.

mod generate;
mod losses;
mod model;
mod sampler;
mod schedule;

pub use generate::{generate_batch, generate_missing, iterative_refine, latent_bound, GenerationSpec};
pub use losses::{mddc_losses, row_sq_error, MddcLosses};
pub use model::{cross_attention, timestep_embedding, AttentionLevel, Autoencoder, Availability, Denoiser, FusionNet, MddcConfig, MddcModel};
pub use sampler::{normal_rows, run_sampler};
pub use schedule::{forward_diffuse, reverse_step, NoiseSchedule};
