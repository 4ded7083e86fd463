//! Synthetic cyclic sequences used to train the toy denoiser.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ConditionId;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Mat;

/// One condition class: a period and per-harmonic amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub period: usize,
    /// Amplitude of harmonic `h + 1`; one sin/cos channel pair per entry.
    pub amplitudes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub classes: Vec<ClassSpec>,
    pub cycle_len: usize,
    pub dim: usize,
}

impl DatasetConfig {
    /// `classes` classes alternating over the divisors of `cycle_len` of at
    /// least `max(4, 2 * harmonics)` (largest first); each pass over the
    /// divisors halves the harmonic decay rate.
    pub fn standard(classes: usize, cycle_len: usize, dim: usize) -> Result<Self> {
        if cycle_len < 4 || dim < 2 {
            return Err(Error::config(format!(
                "dataset needs N >= 4 and D >= 2, got N={cycle_len} D={dim}"
            )));
        }
        if classes == 0 {
            return Err(Error::config("dataset needs at least one class"));
        }
        let harmonics = dim.div_ceil(2);
        let min_period = (2 * harmonics).max(4);
        let mut periods: Vec<usize> = (min_period..=cycle_len).filter(|p| cycle_len.is_multiple_of(*p)).collect();
        if periods.is_empty() {
            return Err(Error::config(format!(
                "cycle length {cycle_len} has no divisor >= {min_period} for {harmonics} harmonics"
            )));
        }
        periods.reverse();
        let specs = (0..classes)
            .map(|c| {
                let decay = 0.5f64.powi(1 + (c / periods.len()) as i32);
                ClassSpec {
                    period: periods[c % periods.len()],
                    amplitudes: (0..harmonics).map(|h| decay.powi(h as i32)).collect(),
                }
            })
            .collect();
        let cfg = Self {
            classes: specs,
            cycle_len,
            dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycle_len < 4 || self.dim < 2 {
            return Err(Error::config(format!(
                "dataset needs N >= 4 and D >= 2, got N={} D={}",
                self.cycle_len, self.dim
            )));
        }
        if self.classes.is_empty() {
            return Err(Error::config("dataset needs at least one class"));
        }
        for (c, spec) in self.classes.iter().enumerate() {
            if spec.period == 0 || !self.cycle_len.is_multiple_of(spec.period) {
                return Err(Error::config(format!(
                    "class {c}: period {} does not divide N={}",
                    spec.period, self.cycle_len
                )));
            }
            if spec.amplitudes.len() != self.dim.div_ceil(2) {
                return Err(Error::config(format!(
                    "class {c}: need {} harmonic amplitudes for D={}",
                    self.dim.div_ceil(2),
                    self.dim
                )));
            }
        }
        Ok(())
    }
}

/// Sample generator over [`DatasetConfig`]; owns its RNG stream.
#[derive(Debug, Clone)]
pub struct PeriodicDataset {
    config: DatasetConfig,
    rng: ChaCha8Rng,
}

/// Default-class dataset generator seeded with `seed`.
pub fn make_periodic_dataset(
    classes: usize,
    cycle_len: usize,
    dim: usize,
    seed: u64,
) -> Result<PeriodicDataset> {
    PeriodicDataset::new(DatasetConfig::standard(classes, cycle_len, dim)?, seed)
}

impl PeriodicDataset {
    pub fn new(config: DatasetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.classes.len()
    }

    /// Frame `i = [a_h sin(2 pi h (i/P + phase)), a_h cos(..)]_h` for
    /// `i in 0..N`. Indices are reduced modulo the period so the sequence is
    /// exactly cyclic.
    pub fn sequence<T: Scalar>(&self, class: ConditionId, phase: f64) -> Result<Mat<T>> {
        let spec = self.config.classes.get(class.0).ok_or_else(|| {
            Error::config(format!(
                "condition {} outside {} classes",
                class.0,
                self.num_classes()
            ))
        })?;
        let (n, d) = (self.config.cycle_len, self.config.dim);
        let p = spec.period as f64;
        Ok(Mat::from_fn(n, d, |i, ch| {
            let h = (ch / 2 + 1) as f64;
            let angle = std::f64::consts::TAU * h * ((i % spec.period) as f64 / p + phase);
            let a = spec.amplitudes[ch / 2];
            T::lit(if ch % 2 == 0 { a * angle.sin() } else { a * angle.cos() })
        }))
    }

    /// Random class and phase drawn from `rng`.
    pub fn sample_with<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> (ConditionId, Mat<T>) {
        let class = ConditionId(rng.gen_range(0..self.num_classes()));
        let phase = rng.gen::<f64>();
        let seq = self.sequence(class, phase).expect("class drawn in range");
        (class, seq)
    }

    pub fn next_sample<T: Scalar>(&mut self) -> (ConditionId, Mat<T>) {
        let mut rng = self.rng.clone();
        let out = self.sample_with(&mut rng);
        self.rng = rng;
        out
    }
}

impl Iterator for PeriodicDataset {
    type Item = (ConditionId, Mat<f64>);

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_sample())
    }
}
