//! The cyclic latent buffer and the shifting window schedule over it.
//!
//! At denoising iteration `k` the window start is `j = (k * s) mod N`. When
//! the cycle holds more latents than the model context (`N = n * f`), the
//! cycle is tiled into `n` disjoint windows starting at `j, j + f, ...` so
//! every latent advances one noise level per iteration while the window
//! seams move.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Mat;

/// `N` latents of dimension `D` arranged on a ring, denoised `f` at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCycle<T> {
    latents: Mat<T>,
    context: usize,
}

impl<T: Scalar> LatentCycle<T> {
    pub fn new(latents: Mat<T>, context: usize) -> Result<Self> {
        let n = latents.rows();
        if context == 0 || n == 0 || !n.is_multiple_of(context) {
            return Err(Error::config(format!(
                "cycle of {n} latents is not a positive multiple of context {context}"
            )));
        }
        if !latents.all_finite() {
            return Err(Error::config("cycle latents must be finite"));
        }
        Ok(Self { latents, context })
    }

    pub fn len(&self) -> usize {
        self.latents.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.latents.cols()
    }

    pub fn context(&self) -> usize {
        self.context
    }

    /// Tiling factor `n = N / f`.
    pub fn tiles(&self) -> usize {
        self.len() / self.context
    }

    pub fn latents(&self) -> &Mat<T> {
        &self.latents
    }

    pub fn into_latents(self) -> Mat<T> {
        self.latents
    }
}

/// Standard normal draws, reproducible from `seed`.
pub fn gaussian_latents<T: Scalar>(rows: usize, dim: usize, seed: u64) -> Mat<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_fn(rows, dim, |_, _| {
        let x: f64 = StandardNormal.sample(&mut rng);
        T::lit(x)
    })
}

/// i.i.d. standard normal cycle of `n` latents of dimension `dim`.
pub fn init_cycle<T: Scalar>(n: usize, dim: usize, context: usize, seed: u64) -> Result<LatentCycle<T>> {
    if n == 0 || dim == 0 {
        return Err(Error::config(format!("cycle shape {n}x{dim} must be non-empty")));
    }
    LatentCycle::new(gaussian_latents(n, dim, seed), context)
}

/// Window start for iteration `step_index`: `(step_index * s) mod n`.
pub fn window_start(step_index: usize, s: usize, n: usize) -> usize {
    assert!(n > 0, "cycle length must be positive");
    ((step_index as u128 * s as u128) % n as u128) as usize
}

/// Cycle indices covered by the window of length `f` starting at `j`.
pub fn window_indices(j: usize, f: usize, n: usize) -> Result<Vec<usize>> {
    if f == 0 || f > n {
        return Err(Error::config(format!("window length {f} must lie in 1..={n}")));
    }
    if j >= n {
        return Err(Error::config(format!("window start {j} outside cycle of {n}")));
    }
    Ok((0..f).map(|i| (j + i) % n).collect())
}

/// Copies of the `f` latents starting at `j`, wrapping past the end.
pub fn extract_window<T: Scalar>(cycle: &LatentCycle<T>, j: usize, f: usize) -> Result<Mat<T>> {
    let idx = window_indices(j, f, cycle.len())?;
    Ok(cycle.latents.select_rows(&idx))
}

/// Writes `window` back at `j, j+1, ...` (mod `N`); other latents are
/// untouched.
pub fn scatter_window<T: Scalar>(cycle: &mut LatentCycle<T>, j: usize, window: &Mat<T>) -> Result<()> {
    if window.cols() != cycle.dim() {
        return Err(Error::Shape(format!(
            "window dim {} does not match cycle dim {}",
            window.cols(),
            cycle.dim()
        )));
    }
    let idx = window_indices(j, window.rows(), cycle.len())?;
    for (r, &i) in idx.iter().enumerate() {
        cycle.latents.row_mut(i).copy_from_slice(window.row(r));
    }
    Ok(())
}

/// Starts of the `n = N / f` disjoint windows that partition the cycle,
/// beginning at `j`.
pub fn tile_window_starts(j: usize, f: usize, n: usize) -> Result<Vec<usize>> {
    if f == 0 || n == 0 || !n.is_multiple_of(f) {
        return Err(Error::config(format!(
            "cycle length {n} is not a positive multiple of window {f}"
        )));
    }
    if j >= n {
        return Err(Error::config(format!("window start {j} outside cycle of {n}")));
    }
    Ok((0..n / f).map(|k| (j + k * f) % n).collect())
}

/// Greatest common divisor; `gcd(0, n) = n`.
pub fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
