//! End-to-end sampling: looping generation with latent shifting, the
//! non-cyclic long mode, and a plain full-window DDIM reference.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::codec::{decode_direct, decode_frame_invariant, CodecConfig, VideoFrames};
use crate::cycle::{gaussian_latents, init_cycle, tile_window_starts, window_start, LatentCycle};
use crate::denoiser::{ConditionId, Denoiser, WindowContext};
use crate::error::{Error, Result};
use crate::rope::{positions_for_span, positions_for_window, RopeConfig, RopeMode, WindowPositions};
use crate::scalar::Scalar;
use crate::schedule::{ddim_step, NoiseSchedule, TimestepPlan};
use crate::tensor::Mat;

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::config(format!(
                        concat!("unknown ", stringify!($name), " `{}`"),
                        other
                    ))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $($name::$variant => $text,)+
                })
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GenerationMode {
    #[default]
    Loop,
    Long,
}

keyword_enum!(GenerationMode { Loop => "loop", Long => "long" });

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Direct,
    FrameInvariant,
}

keyword_enum!(DecodeMode { Direct => "direct", FrameInvariant => "frame-invariant" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DenoiserKind {
    #[default]
    Oracle,
    Toy,
}

keyword_enum!(DenoiserKind { Oracle => "oracle", Toy => "toy" });

/// Run-level settings shared by the library and the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    /// Latents in the generated sequence.
    pub n: usize,
    /// Denoiser context length.
    pub f: usize,
    /// Window shift per denoising iteration.
    pub s: usize,
    /// DDIM iterations.
    pub steps: usize,
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub rope_mode: RopeMode,
    pub rope_base: f64,
    pub denoiser: DenoiserKind,
    pub checkpoint: Option<PathBuf>,
    pub condition: ConditionId,
    pub seed: u64,
    pub mode: GenerationMode,
    /// `None` picks frame-invariant decoding for loops and direct decoding
    /// for long runs.
    pub decode: Option<DecodeMode>,
    pub latent_dim: usize,
    pub frame_dim: usize,
    pub temporal_rate: usize,
    pub prepend: usize,
    pub codec_seed: u64,
    pub prior_variance: f64,
    pub prior_length_scale: f64,
    pub prior_nugget: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n: 16,
            f: 8,
            s: 6,
            steps: 50,
            train_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            rope_mode: RopeMode::Fixed,
            rope_base: 10_000.0,
            denoiser: DenoiserKind::Oracle,
            checkpoint: None,
            condition: ConditionId(0),
            seed: 0,
            mode: GenerationMode::Loop,
            decode: None,
            latent_dim: 8,
            frame_dim: 64,
            temporal_rate: 4,
            prepend: 3,
            codec_seed: 7,
            prior_variance: 1.0,
            prior_length_scale: 0.5,
            prior_nugget: 1e-3,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f == 0 || self.n < self.f {
            return Err(Error::config(format!(
                "need 1 <= f <= N, got f={} N={}",
                self.f, self.n
            )));
        }
        if self.mode == GenerationMode::Loop && !self.n.is_multiple_of(self.f) {
            return Err(Error::config(format!(
                "loop mode needs N a multiple of f, got N={} f={}",
                self.n, self.f
            )));
        }
        if self.steps == 0 || self.steps > self.train_steps {
            return Err(Error::config(format!(
                "inference steps must lie in 1..={}, got {}",
                self.train_steps, self.steps
            )));
        }
        if self.latent_dim == 0 || self.frame_dim < self.latent_dim {
            return Err(Error::config("frame dim must be >= latent dim > 0"));
        }
        if self.denoiser == DenoiserKind::Toy && self.checkpoint.is_none() {
            return Err(Error::config("--checkpoint is required with --denoiser toy"));
        }
        for (name, v) in [
            ("prior_variance", self.prior_variance),
            ("prior_length_scale", self.prior_length_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.prior_nugget >= 0.0 && self.prior_nugget.is_finite()) {
            return Err(Error::config("prior_nugget must be non-negative"));
        }
        Ok(())
    }

    pub fn decode_mode(&self) -> DecodeMode {
        self.decode.unwrap_or(match self.mode {
            GenerationMode::Loop => DecodeMode::FrameInvariant,
            GenerationMode::Long => DecodeMode::Direct,
        })
    }

    pub fn schedule<T: Scalar>(&self) -> Result<NoiseSchedule<T>> {
        crate::schedule::make_linear_schedule(self.train_steps, T::lit(self.beta_start), T::lit(self.beta_end))
    }

    pub fn plan(&self) -> Result<TimestepPlan> {
        TimestepPlan::evenly_spaced(self.train_steps, self.steps)
    }

    pub fn codec<T: Scalar>(&self) -> Result<CodecConfig<T>> {
        CodecConfig::new(
            self.temporal_rate,
            self.frame_dim,
            self.latent_dim,
            self.prepend,
            self.codec_seed,
        )
    }

    pub fn rope<T: Scalar>(&self, head_dim: usize) -> Result<RopeConfig<T>> {
        RopeConfig::new(head_dim, T::lit(self.rope_base), T::one(), self.rope_mode)
    }
}

/// Everything a run needs besides its configuration.
pub struct Sampler<'a, T> {
    pub schedule: &'a NoiseSchedule<T>,
    pub plan: &'a TimestepPlan,
    pub denoiser: &'a dyn Denoiser<T>,
    pub codec: &'a CodecConfig<T>,
    pub rope: RopeConfig<T>,
}

/// Owned schedule, plan, codec and denoiser built from a configuration.
pub struct Runtime<T: Scalar> {
    pub schedule: NoiseSchedule<T>,
    pub plan: TimestepPlan,
    pub codec: CodecConfig<T>,
    pub denoiser: Box<dyn Denoiser<T>>,
    /// Head dimension the rotary embedding is built for.
    pub head_dim: usize,
}

/// Head dimension used when the denoiser ignores positions.
const ORACLE_HEAD_DIM: usize = 32;

impl<T: Scalar> Runtime<T> {
    /// Builds the oracle from the prior settings, or loads the toy
    /// checkpoint and checks it against the run shape.
    pub fn from_config(cfg: &GenerationConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule::<T>()?;
        let (denoiser, head_dim): (Box<dyn Denoiser<T>>, usize) = match cfg.denoiser {
            DenoiserKind::Oracle => {
                let kernel = crate::denoiser::periodic_kernel_row(
                    cfg.n,
                    T::lit(cfg.prior_variance),
                    T::lit(cfg.prior_length_scale),
                    T::lit(cfg.prior_nugget),
                );
                let prior = crate::denoiser::GaussianPrior::zero_mean(kernel, cfg.latent_dim)?;
                (
                    Box::new(crate::denoiser::OracleDenoiser::new(prior, schedule.clone())),
                    ORACLE_HEAD_DIM,
                )
            }
            DenoiserKind::Toy => {
                let path = cfg
                    .checkpoint
                    .as_ref()
                    .ok_or_else(|| Error::config("--checkpoint is required with --denoiser toy"))?;
                if !path.exists() {
                    return Err(Error::config(format!(
                        "--checkpoint {} does not exist",
                        path.display()
                    )));
                }
                let params = crate::io::load_checkpoint::<T>(path)?.params;
                let arch = *params.arch();
                if arch.latent_dim != cfg.latent_dim {
                    return Err(Error::config(format!(
                        "checkpoint latent dim {} differs from latent_dim={}",
                        arch.latent_dim, cfg.latent_dim
                    )));
                }
                if arch.max_context < cfg.f {
                    return Err(Error::config(format!(
                        "checkpoint context {} is shorter than f={}",
                        arch.max_context, cfg.f
                    )));
                }
                if cfg.condition.0 >= arch.classes {
                    return Err(Error::config(format!(
                        "condition {} outside the checkpoint's {} classes",
                        cfg.condition.0, arch.classes
                    )));
                }
                (Box::new(params), arch.head_dim())
            }
        };
        Ok(Self {
            plan: cfg.plan()?,
            codec: cfg.codec()?,
            schedule,
            denoiser,
            head_dim,
        })
    }

    pub fn sampler(&self, cfg: &GenerationConfig) -> Result<Sampler<'_, T>> {
        Ok(Sampler {
            schedule: &self.schedule,
            plan: &self.plan,
            denoiser: self.denoiser.as_ref(),
            codec: &self.codec,
            rope: cfg.rope(self.head_dim)?,
        })
    }

    /// Runs `cfg`; only the per-run fields (seed, shift, rope mode,
    /// condition, decode mode) may differ from the configuration this
    /// runtime was built from.
    pub fn generate(&self, cfg: &GenerationConfig) -> Result<Generation<T>> {
        generate(cfg, &self.sampler(cfg)?)
    }
}

/// Windows denoised at one iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub step: usize,
    pub t: usize,
    pub t_prev: usize,
    /// Window starts in the order they were written back.
    pub starts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Generation<T> {
    pub latents: Mat<T>,
    pub video: VideoFrames<T>,
    pub trace: Vec<StepRecord>,
}

/// Tracks the diffusion step of every latent so a run can assert that all
/// of them advance together.
struct NoiseLevels {
    levels: Vec<usize>,
}

impl NoiseLevels {
    fn new(n: usize, t: usize) -> Self {
        Self { levels: vec![t; n] }
    }

    fn check_window(&self, idx: &[usize], t: usize) -> Result<()> {
        match idx.iter().find(|&&i| self.levels[i] != t) {
            Some(&i) => Err(Error::config(format!(
                "latent {i} is at step {} while denoising step {t}",
                self.levels[i]
            ))),
            None => Ok(()),
        }
    }

    fn advance(&mut self, idx: &[usize], t_prev: usize) {
        for &i in idx {
            self.levels[i] = t_prev;
        }
    }

    fn check_uniform(&self, t: usize) -> Result<()> {
        match self.levels.iter().position(|&l| l != t) {
            Some(i) => Err(Error::config(format!(
                "latent {i} was not advanced to step {t}"
            ))),
            None => Ok(()),
        }
    }
}

fn check_finite<T: Scalar>(m: &Mat<T>, step: usize, t: usize, what: &str) -> Result<()> {
    if m.all_finite() {
        Ok(())
    } else {
        Err(Error::NumericAbort {
            step,
            t,
            detail: format!("non-finite values in {what}"),
        })
    }
}

struct Window<T> {
    start: usize,
    indices: Vec<usize>,
    positions: WindowPositions<T>,
}

/// One DDIM iteration over a set of windows. Every window reads the
/// pre-iteration latents; results are written back in window order.
fn denoise_iteration<T: Scalar>(
    latents: &mut Mat<T>,
    windows: &[Window<T>],
    levels: &mut NoiseLevels,
    record: &StepRecord,
    condition: ConditionId,
    sampler: &Sampler<'_, T>,
) -> Result<()> {
    let (step, t, t_prev) = (record.step, record.t, record.t_prev);
    let n = latents.rows();
    let mut updates = Vec::with_capacity(windows.len());
    for w in windows {
        levels.check_window(&w.indices, t)?;
        let z = latents.select_rows(&w.indices);
        let ctx = WindowContext {
            indices: w.indices.clone(),
            seq_len: n,
            positions: w.positions.clone(),
            condition,
        };
        let eps = sampler.denoiser.predict_eps(&z, t, &ctx)?;
        if eps.shape() != z.shape() {
            return Err(Error::Shape(format!(
                "denoiser returned {:?} for a {:?} window",
                eps.shape(),
                z.shape()
            )));
        }
        check_finite(&eps, step, t, "the noise prediction")?;
        updates.push(ddim_step(&z, &eps, t, t_prev, sampler.schedule)?);
    }
    for (w, z) in windows.iter().zip(&updates) {
        for (r, &i) in w.indices.iter().enumerate() {
            latents.row_mut(i).copy_from_slice(z.row(r));
        }
        levels.advance(&w.indices, t_prev);
    }
    levels.check_uniform(t_prev)?;
    check_finite(latents, step, t_prev, "the latents")
}

fn decode<T: Scalar>(latents: &Mat<T>, mode: DecodeMode, codec: &CodecConfig<T>) -> Result<VideoFrames<T>> {
    match mode {
        DecodeMode::Direct => decode_direct(latents, codec),
        DecodeMode::FrameInvariant => decode_frame_invariant(latents, codec),
    }
}

/// Looping generation from seeded noise.
pub fn generate_looping<T: Scalar>(cfg: &GenerationConfig, sampler: &Sampler<'_, T>) -> Result<Generation<T>> {
    cfg.validate()?;
    let cycle = init_cycle(cfg.n, cfg.latent_dim, cfg.f, cfg.seed)?;
    generate_looping_from(cfg, sampler, cycle)
}

/// Looping generation from a given initial cycle.
pub fn generate_looping_from<T: Scalar>(
    cfg: &GenerationConfig,
    sampler: &Sampler<'_, T>,
    cycle: LatentCycle<T>,
) -> Result<Generation<T>> {
    cfg.validate()?;
    if cfg.mode != GenerationMode::Loop {
        return Err(Error::config("generate_looping needs loop mode"));
    }
    if cycle.len() != cfg.n || cycle.context() != cfg.f {
        return Err(Error::config(format!(
            "initial cycle is {}x{} with context {}, config wants N={} f={}",
            cycle.len(),
            cycle.dim(),
            cycle.context(),
            cfg.n,
            cfg.f
        )));
    }
    let n = cfg.n;
    let mut latents = cycle.into_latents();
    let mut levels = NoiseLevels::new(n, sampler.plan.first_t());
    let mut trace = Vec::with_capacity(sampler.plan.len());
    for (step, &(t, t_prev)) in sampler.plan.pairs().iter().enumerate() {
        let j = window_start(step, cfg.s, n);
        let starts = tile_window_starts(j, cfg.f, n)?;
        let windows = starts
            .iter()
            .map(|&start| {
                Ok(Window {
                    start,
                    indices: (0..cfg.f).map(|i| (start + i) % n).collect(),
                    positions: positions_for_window(start, cfg.f, n, &sampler.rope)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let record = StepRecord {
            step,
            t,
            t_prev,
            starts: windows.iter().map(|w| w.start).collect(),
        };
        denoise_iteration(&mut latents, &windows, &mut levels, &record, cfg.condition, sampler)?;
        trace.push(record);
    }
    let video = decode(&latents, cfg.decode_mode(), sampler.codec)?;
    Ok(Generation { latents, video, trace })
}

/// Window starts for one long-mode iteration: the lattice `j + k f`
/// restricted to windows that touch `[0, N)`, each clamped into
/// `[0, N - f]`, ascending and deduplicated.
pub fn long_window_starts(j: usize, f: usize, n: usize) -> Result<Vec<usize>> {
    if f == 0 || n < f {
        return Err(Error::config(format!("need 1 <= f <= N, got f={f} N={n}")));
    }
    let last = n - f;
    if j > last {
        return Err(Error::config(format!("window start {j} beyond {last}")));
    }
    let mut starts = Vec::new();
    let mut lo = j as isize;
    while lo > 0 {
        lo -= f as isize;
    }
    let mut s = lo;
    while s < n as isize {
        starts.push(s.clamp(0, last as isize) as usize);
        s += f as isize;
    }
    starts.dedup();
    Ok(starts)
}

/// Non-cyclic generation of `N >= f` latents from seeded noise.
pub fn generate_long<T: Scalar>(cfg: &GenerationConfig, sampler: &Sampler<'_, T>) -> Result<Generation<T>> {
    cfg.validate()?;
    generate_long_from(cfg, sampler, gaussian_latents(cfg.n, cfg.latent_dim, cfg.seed))
}

pub fn generate_long_from<T: Scalar>(
    cfg: &GenerationConfig,
    sampler: &Sampler<'_, T>,
    init: Mat<T>,
) -> Result<Generation<T>> {
    cfg.validate()?;
    if cfg.mode != GenerationMode::Long {
        return Err(Error::config("generate_long needs long mode"));
    }
    if init.shape() != (cfg.n, cfg.latent_dim) {
        return Err(Error::Shape(format!(
            "initial latents {:?} do not match N={} D={}",
            init.shape(),
            cfg.n,
            cfg.latent_dim
        )));
    }
    let (n, f) = (cfg.n, cfg.f);
    let mut latents = init;
    let mut levels = NoiseLevels::new(n, sampler.plan.first_t());
    let mut trace = Vec::with_capacity(sampler.plan.len());
    for (step, &(t, t_prev)) in sampler.plan.pairs().iter().enumerate() {
        let j = window_start(step, cfg.s, n - f + 1);
        let windows = long_window_starts(j, f, n)?
            .into_iter()
            .map(|start| {
                Ok(Window {
                    start,
                    indices: (start..start + f).collect(),
                    positions: positions_for_span(start, f, n, &sampler.rope)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let record = StepRecord {
            step,
            t,
            t_prev,
            starts: windows.iter().map(|w| w.start).collect(),
        };
        denoise_iteration(&mut latents, &windows, &mut levels, &record, cfg.condition, sampler)?;
        trace.push(record);
    }
    let video = decode(&latents, cfg.decode_mode(), sampler.codec)?;
    Ok(Generation { latents, video, trace })
}

/// Dispatches on `cfg.mode`.
pub fn generate<T: Scalar>(cfg: &GenerationConfig, sampler: &Sampler<'_, T>) -> Result<Generation<T>> {
    match cfg.mode {
        GenerationMode::Loop => generate_looping(cfg, sampler),
        GenerationMode::Long => generate_long(cfg, sampler),
    }
}

/// Reference sampler: one window covering the whole sequence with positions
/// `0..N` at the unscaled base.
pub fn plain_ddim<T: Scalar>(
    init: Mat<T>,
    schedule: &NoiseSchedule<T>,
    plan: &TimestepPlan,
    denoiser: &dyn Denoiser<T>,
    rope: &RopeConfig<T>,
    condition: ConditionId,
) -> Result<Mat<T>> {
    let n = init.rows();
    let ctx = WindowContext {
        indices: (0..n).collect(),
        seq_len: n,
        positions: WindowPositions {
            positions: (0..n as i64).collect(),
            rope: rope.with_scale(T::one()),
        },
        condition,
    };
    let mut z = init;
    for (step, &(t, t_prev)) in plan.pairs().iter().enumerate() {
        let eps = denoiser.predict_eps(&z, t, &ctx)?;
        check_finite(&eps, step, t, "the noise prediction")?;
        z = ddim_step(&z, &eps, t, t_prev, schedule)?;
        check_finite(&z, step, t_prev, "the latents")?;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{periodic_kernel_row, GaussianPrior, OracleDenoiser};

    struct Fixture {
        cfg: GenerationConfig,
        schedule: NoiseSchedule<f64>,
        plan: TimestepPlan,
        oracle: OracleDenoiser<f64>,
        codec: CodecConfig<f64>,
    }

    impl Fixture {
        fn new(cfg: GenerationConfig) -> Self {
            let schedule = cfg.schedule().unwrap();
            let prior = GaussianPrior::zero_mean(
                periodic_kernel_row(cfg.n, 1.0, cfg.prior_length_scale, cfg.prior_nugget),
                cfg.latent_dim,
            )
            .unwrap();
            Self {
                plan: cfg.plan().unwrap(),
                oracle: OracleDenoiser::new(prior, schedule.clone()),
                codec: cfg.codec().unwrap(),
                schedule,
                cfg,
            }
        }

        fn sampler(&self) -> Sampler<'_, f64> {
            Sampler {
                schedule: &self.schedule,
                plan: &self.plan,
                denoiser: &self.oracle,
                codec: &self.codec,
                rope: self.cfg.rope(32).unwrap(),
            }
        }
    }

    fn small(n: usize, f: usize, s: usize) -> GenerationConfig {
        GenerationConfig {
            n,
            f,
            s,
            steps: 10,
            latent_dim: 2,
            frame_dim: 4,
            ..GenerationConfig::default()
        }
    }

    #[test]
    fn keyword_parsing() {
        assert_eq!("frame-invariant".parse::<DecodeMode>().unwrap(), DecodeMode::FrameInvariant);
        assert_eq!("LONG".parse::<GenerationMode>().unwrap(), GenerationMode::Long);
        assert_eq!(DenoiserKind::Toy.to_string(), "toy");
        assert!("gif".parse::<DecodeMode>().is_err());
    }

    #[test]
    fn validation() {
        assert!(small(12, 8, 1).validate().is_err());
        assert!(GenerationConfig { steps: 0, ..small(8, 8, 1) }.validate().is_err());
        let toy = GenerationConfig {
            denoiser: DenoiserKind::Toy,
            ..small(8, 8, 1)
        };
        assert!(toy.validate().unwrap_err().to_string().contains("--checkpoint"));
        let long = GenerationConfig {
            mode: GenerationMode::Long,
            ..small(12, 8, 1)
        };
        long.validate().unwrap();
    }

    #[test]
    fn loop_shapes_and_trace() {
        let fx = Fixture::new(small(16, 8, 6));
        let g = generate_looping(&fx.cfg, &fx.sampler()).unwrap();
        assert_eq!(g.latents.shape(), (16, 2));
        assert_eq!(g.video.len(), 64);
        assert_eq!(g.trace.len(), 10);
        assert_eq!(g.trace[0].starts, vec![0, 8]);
        assert_eq!(g.trace[1].starts, vec![6, 14]);
        assert_eq!(g.trace[9].t_prev, 0);
    }

    #[test]
    fn loop_is_deterministic() {
        let fx = Fixture::new(small(16, 8, 6));
        let a = generate_looping(&fx.cfg, &fx.sampler()).unwrap();
        let b = generate_looping(&fx.cfg, &fx.sampler()).unwrap();
        assert_eq!(a.video.frames, b.video.frames);
    }

    #[test]
    fn no_shift_full_window_matches_plain_ddim() {
        let fx = Fixture::new(small(8, 8, 0));
        let g = generate_looping(&fx.cfg, &fx.sampler()).unwrap();
        let init = init_cycle::<f64>(8, 2, 8, fx.cfg.seed).unwrap().into_latents();
        let plain = plain_ddim(init, &fx.schedule, &fx.plan, &fx.oracle, &fx.sampler().rope, ConditionId(0)).unwrap();
        assert_eq!(g.latents, plain);
    }

    #[test]
    fn long_window_starts_cover() {
        assert_eq!(long_window_starts(0, 8, 16).unwrap(), vec![0, 8]);
        assert_eq!(long_window_starts(6, 8, 16).unwrap(), vec![0, 6, 8]);
        assert_eq!(long_window_starts(3, 4, 10).unwrap(), vec![0, 3, 6]);
        assert_eq!(long_window_starts(0, 8, 8).unwrap(), vec![0]);
        assert!(long_window_starts(9, 8, 16).is_err());
        for f in 1..6 {
            for n in f..f * 4 {
                for j in 0..=n - f {
                    let starts = long_window_starts(j, f, n).unwrap();
                    let mut seen = vec![false; n];
                    for s in &starts {
                        assert!(s + f <= n);
                        seen[*s..s + f].iter_mut().for_each(|x| *x = true);
                    }
                    assert!(seen.iter().all(|&x| x), "f={f} n={n} j={j}");
                    assert!(starts.windows(2).all(|w| w[0] < w[1]));
                }
            }
        }
    }

    #[test]
    fn long_mode_with_one_window_matches_plain_ddim() {
        for s in [0, 1, 6] {
            let cfg = GenerationConfig {
                mode: GenerationMode::Long,
                ..small(8, 8, s)
            };
            let fx = Fixture::new(cfg);
            let g = generate_long(&fx.cfg, &fx.sampler()).unwrap();
            let init = gaussian_latents::<f64>(8, 2, fx.cfg.seed);
            let plain = plain_ddim(init, &fx.schedule, &fx.plan, &fx.oracle, &fx.sampler().rope, ConditionId(0)).unwrap();
            assert_eq!(g.latents, plain);
            assert_eq!(g.video.len(), 29);
        }
    }

    struct NanDenoiser;

    impl Denoiser<f64> for NanDenoiser {
        fn predict_eps(&self, window: &Mat<f64>, t: usize, _: &WindowContext<f64>) -> Result<Mat<f64>> {
            Ok(window.map(|x| if t < 500 { f64::NAN } else { x * 0.0 }))
        }
    }

    #[test]
    fn nan_aborts_with_step_report() {
        let fx = Fixture::new(small(8, 8, 1));
        let sampler = Sampler {
            denoiser: &NanDenoiser,
            ..fx.sampler()
        };
        match generate_looping(&fx.cfg, &sampler) {
            Err(Error::NumericAbort { step, t, .. }) => {
                assert_eq!(fx.plan.pairs()[step].0, t);
                assert!(t < 500);
            }
            other => panic!("expected numeric abort, got {other:?}"),
        }
    }
}
