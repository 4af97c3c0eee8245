//! Stage 2: conditional latent diffusion that renders the ego frame.

pub mod denoiser;
pub mod latent;
pub mod sampler;
pub mod schedule;

pub use denoiser::{
    patchify_latent, unpatchify_latent, Denoiser, DenoiserConfig, DenoiserState, DiffusionConfig, DiffusionExample,
    NoiseDraw, CHECKPOINT_KIND,
};
pub use latent::{AvgPoolCodec, CodecKind, Condition, IdentityCodec, Latent, LatentCodec};
pub use sampler::{diffusion_loss, posterior_variance, reverse_step, sample, Denoise, SamplerKind};
pub use schedule::{build_schedule, forward_diffuse, NoiseSchedule, ScheduleConfig, ScheduleKind};
