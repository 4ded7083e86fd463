//! ε-prediction training of the toy transformer on synthetic periodic data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dataset::{DatasetConfig, PeriodicDataset};
use super::toy::{ToyArch, ToyInput, ToyTransformerParams};
use crate::error::{Error, Result};
use crate::rope::RopeConfig;
use crate::scalar::Scalar;
use crate::schedule::{default_schedule, NoiseSchedule};
use crate::tensor::Mat;

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub m: Vec<T>,
    pub v: Vec<T>,
    /// Number of updates applied so far.
    pub t: usize,
}

impl<T: Scalar> Adam<T> {
    pub fn new(len: usize, lr: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut [T], grads: &[T]) {
        self.t += 1;
        let k = i32::try_from(self.t).unwrap_or(i32::MAX);
        let bc1 = T::one() - self.beta1.powi(k);
        let bc2 = T::one() - self.beta2.powi(k);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (T::one() - self.beta1) * g;
            *v = self.beta2 * *v + (T::one() - self.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub arch: ToyArch,
    pub dataset: DatasetConfig,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Default run: 20k Adam steps at lr 1e-3, batch 64, four classes over a
    /// 16-latent cycle.
    pub fn standard(seed: u64) -> Self {
        let arch = ToyArch::default();
        Self {
            dataset: DatasetConfig::standard(arch.classes, 16, arch.latent_dim)
                .expect("standard dataset is valid"),
            arch,
            steps: 20_000,
            lr: 1e-3,
            batch: 64,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.dataset.validate()?;
        if self.steps == 0 {
            return Err(Error::config("training needs at least one step"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.dataset.dim != self.arch.latent_dim {
            return Err(Error::config("dataset dim must equal model latent dim"));
        }
        if self.dataset.classes.len() != self.arch.classes {
            return Err(Error::config("dataset class count must equal model classes"));
        }
        if self.dataset.cycle_len < self.arch.max_context {
            return Err(Error::config("dataset cycle shorter than model context"));
        }
        Ok(())
    }
}

/// Parameters, optimizer state and loss history; resumable.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub params: ToyTransformerParams<T>,
    pub adam: Adam<T>,
    /// Completed steps (the next step index).
    pub step: usize,
    /// `(step, loss)` for every completed step of this state's lifetime.
    pub losses: Vec<(usize, f64)>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = ToyTransformerParams::init(cfg.arch, cfg.seed)?;
        let adam = Adam::new(params.param_count(), T::lit(cfg.lr));
        Ok(Self {
            params,
            adam,
            step: 0,
            losses: Vec::new(),
        })
    }

    /// Runs `steps` more optimizer steps. Batches depend only on the seed and
    /// the global step index, so a resumed run reproduces an uninterrupted
    /// one.
    pub fn run(&mut self, cfg: &TrainConfig, steps: usize) -> Result<()> {
        cfg.validate()?;
        if steps == 0 {
            return Err(Error::config("training needs at least one step"));
        }
        let dataset = PeriodicDataset::new(cfg.dataset.clone(), cfg.seed)?;
        let sched: NoiseSchedule<T> = default_schedule();
        let rope = RopeConfig::standard(cfg.arch.head_dim())?;
        let f = cfg.arch.max_context;
        let positions: Vec<i64> = (0..f as i64).collect();
        self.adam.lr = T::lit(cfg.lr);
        for _ in 0..steps {
            let (loss, grads) = {
                let batch = make_batch::<T>(&dataset, &sched, cfg, self.step, f)?;
                let inputs: Vec<ToyInput<T>> = batch
                    .iter()
                    .map(|s| ToyInput {
                        window: &s.noisy,
                        t: s.t,
                        positions: &positions,
                        rope: &rope,
                        condition: s.condition,
                    })
                    .collect();
                let targets: Vec<Mat<T>> = batch.iter().map(|s| s.eps.clone()).collect();
                self.params.loss_and_grads(&inputs, &targets)?
            };
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step: self.step,
                    loss,
                });
            }
            self.adam.update(self.params.data_mut(), &grads.data);
            self.losses.push((self.step, loss));
            self.step += 1;
        }
        if !self.params.all_finite() {
            return Err(Error::Divergence {
                step: self.step,
                loss: f64::NAN,
            });
        }
        Ok(())
    }
}

struct TrainSample<T> {
    noisy: Mat<T>,
    eps: Mat<T>,
    t: usize,
    condition: super::ConditionId,
}

fn make_batch<T: Scalar>(
    dataset: &PeriodicDataset,
    sched: &NoiseSchedule<T>,
    cfg: &TrainConfig,
    step: usize,
    f: usize,
) -> Result<Vec<TrainSample<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(step as u64 + 1);
    let n = cfg.dataset.cycle_len;
    (0..cfg.batch)
        .map(|_| {
            let (condition, seq) = dataset.sample_with::<T, _>(&mut rng);
            let start = rng.gen_range(0..n);
            let idx: Vec<usize> = (0..f).map(|i| (start + i) % n).collect();
            let x0 = seq.select_rows(&idx);
            let t = rng.gen_range(1..=sched.len());
            let eps = Mat::from_fn(f, cfg.arch.latent_dim, |_, _| {
                T::lit(rng.sample::<f64, _>(StandardNormal))
            });
            let noisy = sched.add_noise(&x0, &eps, t)?;
            Ok(TrainSample {
                noisy,
                eps,
                t,
                condition,
            })
        })
        .collect()
}

/// Trains from scratch for `cfg.steps` steps.
pub fn train_toy<T: Scalar>(cfg: &TrainConfig) -> Result<TrainState<T>> {
    let mut state = TrainState::new(cfg)?;
    state.run(cfg, cfg.steps)?;
    Ok(state)
}

/// Mean loss over the first and last `window` recorded steps.
pub fn smoothed_endpoints(losses: &[(usize, f64)], window: usize) -> Option<(f64, f64)> {
    let w = window.min(losses.len());
    if w == 0 {
        return None;
    }
    let mean = |s: &[(usize, f64)]| s.iter().map(|x| x.1).sum::<f64>() / s.len() as f64;
    Some((mean(&losses[..w]), mean(&losses[losses.len() - w..])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(steps: usize) -> TrainConfig {
        let arch = ToyArch {
            layers: 1,
            width: 16,
            heads: 2,
            latent_dim: 4,
            mlp_ratio: 2,
            max_context: 4,
            classes: 2,
        };
        TrainConfig {
            dataset: DatasetConfig::standard(2, 8, 4).unwrap(),
            arch,
            steps,
            lr: 3e-3,
            batch: 16,
            seed: 7,
        }
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(train_toy::<f32>(&tiny_cfg(0)).is_err());
    }

    #[test]
    fn single_step_smoke() {
        let st = train_toy::<f32>(&tiny_cfg(1)).unwrap();
        assert_eq!(st.losses.len(), 1);
        assert!(st.losses[0].1.is_finite());
        assert!(st.params.all_finite());
        assert_eq!(st.step, 1);
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let cfg = tiny_cfg(6);
        let full = train_toy::<f64>(&cfg).unwrap();
        let mut part = TrainState::<f64>::new(&cfg).unwrap();
        part.run(&cfg, 2).unwrap();
        part.run(&cfg, 4).unwrap();
        assert_eq!(part.step, 6);
        assert_eq!(full.params.data(), part.params.data());
        assert_eq!(full.losses, part.losses);
    }

    #[test]
    fn short_run_reduces_loss() {
        let st = train_toy::<f32>(&tiny_cfg(300)).unwrap();
        let (first, last) = smoothed_endpoints(&st.losses, 30).unwrap();
        assert!(last < first, "first {first} last {last}");
        assert!(st.losses.iter().all(|l| l.1.is_finite()));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let mut cfg = tiny_cfg(50);
        cfg.lr = 1e200;
        assert!(matches!(train_toy::<f64>(&cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(2, 0.1f64);
        let mut p = [1.0, -1.0];
        adam.update(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }
}
