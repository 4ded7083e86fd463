//! Training-free looping video sampling on a latent ring.
//!
//! A cycle of `N` noisy latents is denoised by a model that only sees `f`
//! latents at once. At every DDIM iteration the window start moves by `s`
//! around the ring, so the seam between the last and first latent is
//! denoised as interior content. Rotary position embeddings, NTK base
//! rescaling and a frame-invariant temporal decoder complete the pipeline.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file fix the common choices.
//!
//! ```
//! use loopgen::{GenerationConfig, GaussianPrior, OracleDenoiser, Sampler, periodic_kernel_row};
//!
//! let cfg = GenerationConfig { n: 8, f: 8, steps: 10, ..GenerationConfig::default() };
//! let schedule = cfg.schedule::<f64>().unwrap();
//! let plan = cfg.plan().unwrap();
//! let prior = GaussianPrior::zero_mean(periodic_kernel_row(8, 1.0, 0.5, 1e-3), cfg.latent_dim).unwrap();
//! let oracle = OracleDenoiser::new(prior, schedule.clone());
//! let codec = cfg.codec::<f64>().unwrap();
//! let sampler = Sampler { schedule: &schedule, plan: &plan, denoiser: &oracle, codec: &codec, rope: cfg.rope(32).unwrap() };
//! let run = loopgen::generate_looping(&cfg, &sampler).unwrap();
//! assert_eq!(run.video.len(), 32);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod cycle;
pub mod denoiser;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod rope;
pub mod scalar;
pub mod schedule;
pub mod tensor;

pub use codec::{decode_direct, decode_frame_invariant, encode, CodecConfig, VideoFrames};
pub use cycle::{
    extract_window, gaussian_latents, gcd, init_cycle, scatter_window, tile_window_starts, window_indices,
    window_start, LatentCycle,
};
pub use denoiser::{
    analytic_eps, make_periodic_dataset, periodic_kernel_row, train_toy, ConditionId, DatasetConfig, Denoiser,
    GaussianPrior, OracleDenoiser, ToyArch, ToyTransformer, ToyTransformerParams, TrainConfig, TrainState,
    WindowContext,
};
pub use error::{Error, Result};
pub use metrics::{
    dynamic_proxy, first_last_mse, seam_gap_ratio, smoothness_proxy, wrap_adjacent_profile, LoopReport,
};
pub use pipeline::{
    generate, generate_long, generate_looping, plain_ddim, DecodeMode, DenoiserKind, Generation, GenerationConfig,
    GenerationMode, Runtime, Sampler,
};
pub use rope::{
    apply_rope, attention_weight, ntk_scaled_base, positions_for_span, positions_for_window, rope_thetas, RopeConfig,
    RopeMode,
};
pub use scalar::{Dtype, Scalar};
pub use schedule::{ddim_step, default_schedule, make_linear_schedule, NoiseSchedule, TimestepPlan};
pub use tensor::Mat;

pub type Mat64 = Mat<f64>;
pub type Mat32 = Mat<f32>;
pub type NoiseSchedule64 = NoiseSchedule<f64>;
pub type RopeConfig64 = RopeConfig<f64>;
pub type LatentCycle64 = LatentCycle<f64>;
pub type CodecConfig64 = CodecConfig<f64>;
pub type VideoFrames64 = VideoFrames<f64>;
pub type GaussianPrior64 = GaussianPrior<f64>;
pub type OracleDenoiser64 = OracleDenoiser<f64>;
pub type ToyTransformer32 = ToyTransformer<f32>;
pub type ToyTransformer64 = ToyTransformer<f64>;
pub type TrainState32 = TrainState<f32>;
