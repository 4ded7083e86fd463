//! Noise schedules, timestep plans, and the deterministic DDIM update.
//!
//! Timesteps are 1-based: `t` ranges over `1..=T`, and `t = 0` denotes clean
//! data with `alpha_bar(0) = 1` so the final step of a plan is well defined.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Mat;

/// Forward-process constants for a `T`-step diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    betas: Vec<T>,
    alphas: Vec<T>,
    alpha_bars: Vec<T>,
}

impl<T: Scalar> NoiseSchedule<T> {
    /// Builds a schedule from explicit betas, validating every invariant.
    pub fn from_betas(betas: Vec<T>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::config(format!(
                "schedule needs at least 2 steps, got {}",
                betas.len()
            )));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > T::zero() && b < T::one())) {
            return Err(Error::config(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<T> = betas.iter().map(|&b| T::one() - b).collect();
        let alpha_bars: Vec<T> = alphas
            .iter()
            .scan(T::one(), |acc, &a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        if alpha_bars.windows(2).any(|w| w[1] >= w[0]) || alpha_bars.iter().any(|&a| a <= T::zero())
        {
            return Err(Error::config(
                "cumulative alpha product must be strictly decreasing and positive",
            ));
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Number of diffusion steps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn alphas(&self) -> &[T] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bars
    }

    pub fn beta(&self, t: usize) -> T {
        self.betas[t - 1]
    }

    /// Cumulative product up to and including step `t`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> T {
        if t == 0 {
            T::one()
        } else {
            self.alpha_bars[t - 1]
        }
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t > self.len() {
            return Err(Error::config(format!(
                "timestep {t} beyond schedule length {}",
                self.len()
            )));
        }
        Ok(())
    }

    /// Forward noising `sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
    pub fn add_noise(&self, x0: &Mat<T>, eps: &Mat<T>, t: usize) -> Result<Mat<T>> {
        self.check_step(t)?;
        let ab = self.alpha_bar(t);
        x0.lin_comb(ab.sqrt(), eps, (T::one() - ab).sqrt())
    }
}

/// Linearly spaced betas from `beta_start` to `beta_end`.
pub fn make_linear_schedule<T: Scalar>(
    steps: usize,
    beta_start: T,
    beta_end: T,
) -> Result<NoiseSchedule<T>> {
    if steps < 2 {
        return Err(Error::config(format!("T must be >= 2, got {steps}")));
    }
    if !(beta_start > T::zero() && beta_start <= beta_end && beta_end < T::one()) {
        return Err(Error::config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let denom = T::from_usize_lossy(steps - 1);
    let betas = (0..steps)
        .map(|i| beta_start + (beta_end - beta_start) * T::from_usize_lossy(i) / denom)
        .collect();
    NoiseSchedule::from_betas(betas)
}

/// Default training schedule: 1000 linear steps from 1e-4 to 0.02.
pub fn default_schedule<T: Scalar>() -> NoiseSchedule<T> {
    make_linear_schedule(1000, T::lit(1e-4), T::lit(0.02)).expect("default schedule is valid")
}

/// Descending `(t, t_prev)` pairs for an inference trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepPlan {
    pairs: Vec<(usize, usize)>,
}

impl TimestepPlan {
    /// `steps` evenly spaced timesteps from `train_steps` down, ending at 0.
    pub fn evenly_spaced(train_steps: usize, steps: usize) -> Result<Self> {
        if steps == 0 || steps > train_steps {
            return Err(Error::config(format!(
                "inference steps must lie in 1..={train_steps}, got {steps}"
            )));
        }
        // t_k = round(k * T / steps) for k = steps..1
        let ts: Vec<usize> = (1..=steps)
            .rev()
            .map(|k| ((k * train_steps) as f64 / steps as f64).round() as usize)
            .collect();
        let pairs = ts
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, ts.get(i + 1).copied().unwrap_or(0)))
            .collect();
        Self::from_pairs(pairs)
    }

    pub fn from_pairs(pairs: Vec<(usize, usize)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::config("empty timestep plan"));
        }
        for w in pairs.windows(2) {
            if w[0].1 != w[1].0 {
                return Err(Error::config("plan pairs are not chained"));
            }
        }
        if pairs.iter().any(|&(t, tp)| tp >= t) {
            return Err(Error::config("plan timesteps must strictly decrease"));
        }
        if pairs.last().map(|p| p.1) != Some(0) {
            return Err(Error::config("plan must end at t = 0"));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn first_t(&self) -> usize {
        self.pairs[0].0
    }
}

/// Clean-data estimate `(z_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)`.
pub fn predict_x0<T: Scalar>(
    z_t: &Mat<T>,
    eps_hat: &Mat<T>,
    t: usize,
    sched: &NoiseSchedule<T>,
) -> Result<Mat<T>> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    let inv = ab.sqrt().recip();
    z_t.lin_comb(inv, eps_hat, -(T::one() - ab).sqrt() * inv)
}

/// Deterministic DDIM update from `t` to `t_prev`.
pub fn ddim_step<T: Scalar>(
    z_t: &Mat<T>,
    eps_hat: &Mat<T>,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule<T>,
) -> Result<Mat<T>> {
    z_t.check_same_shape(eps_hat)?;
    if t_prev >= t {
        return Err(Error::config(format!(
            "DDIM step needs t_prev < t, got t={t} t_prev={t_prev}"
        )));
    }
    sched.check_step(t)?;
    let x0 = predict_x0(z_t, eps_hat, t, sched)?;
    let ab_prev = sched.alpha_bar(t_prev);
    x0.lin_comb(ab_prev.sqrt(), eps_hat, (T::one() - ab_prev).sqrt())
}

/// General DDIM update with stochasticity `eta`; `noise` is a standard normal
/// draw of the same shape. `eta = 0` reduces to [`ddim_step`].
pub fn ddim_step_eta<T: Scalar>(
    z_t: &Mat<T>,
    eps_hat: &Mat<T>,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule<T>,
    eta: T,
    noise: &Mat<T>,
) -> Result<Mat<T>> {
    if eta < T::zero() {
        return Err(Error::config("eta must be non-negative"));
    }
    if eta == T::zero() {
        return ddim_step(z_t, eps_hat, t, t_prev, sched);
    }
    z_t.check_same_shape(noise)?;
    z_t.check_same_shape(eps_hat)?;
    if t_prev >= t {
        return Err(Error::config("DDIM step needs t_prev < t"));
    }
    let x0 = predict_x0(z_t, eps_hat, t, sched)?;
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    let sigma =
        eta * ((T::one() - ab_prev) / (T::one() - ab) * (T::one() - ab / ab_prev)).sqrt();
    let dir = (T::one() - ab_prev - sigma * sigma).max(T::zero()).sqrt();
    let mean = x0.lin_comb(ab_prev.sqrt(), eps_hat, dir)?;
    mean.lin_comb(T::one(), noise, sigma)
}
