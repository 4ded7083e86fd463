//! Toy temporal autoencoder with first-frame asymmetry.
//!
//! Latent 0 decodes alone to a single frame; every later latent decodes,
//! together with its predecessor, to `r` frames that move linearly from the
//! previous decoded latent to its own. Decoding a raw cycle therefore treats
//! its first latent specially. [`decode_frame_invariant`] removes the
//! asymmetry by decoding `p` copies of the tail latents in front of the cycle
//! and dropping the frames they produce.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig<T> {
    /// Frames per latent after the first (temporal compression rate).
    pub rate: usize,
    /// Tail latents prepended by frame-invariant decoding.
    pub prepend: usize,
    /// `frame_dim x latent_dim` with orthonormal columns.
    basis: Mat<T>,
}

impl<T: Scalar> CodecConfig<T> {
    /// Seeded orthonormal decoder basis; the encoder is its transpose, so the
    /// two maps are mutual inverses on the decoder's range.
    pub fn new(rate: usize, frame_dim: usize, latent_dim: usize, prepend: usize, seed: u64) -> Result<Self> {
        if rate < 2 {
            return Err(Error::config(format!("temporal rate must be >= 2, got {rate}")));
        }
        if prepend < 1 {
            return Err(Error::config("prepend count must be >= 1"));
        }
        if latent_dim == 0 || frame_dim < latent_dim {
            return Err(Error::config(format!(
                "frame dim {frame_dim} must be >= latent dim {latent_dim} > 0"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut basis = Mat::from_fn(frame_dim, latent_dim, |_, _| {
            let x: f64 = StandardNormal.sample(&mut rng);
            T::lit(x)
        });
        // modified Gram-Schmidt over columns
        for c in 0..latent_dim {
            for prev in 0..c {
                let proj: T = (0..frame_dim).map(|r| basis.get(r, c) * basis.get(r, prev)).sum();
                for r in 0..frame_dim {
                    let v = basis.get(r, c) - proj * basis.get(r, prev);
                    basis.set(r, c, v);
                }
            }
            let norm: T = (0..frame_dim).map(|r| basis.get(r, c).powi(2)).sum::<T>().sqrt();
            if !(norm > T::lit(1e-8)) {
                return Err(Error::Singular("degenerate decoder basis".into()));
            }
            for r in 0..frame_dim {
                let v = basis.get(r, c) / norm;
                basis.set(r, c, v);
            }
        }
        Ok(Self {
            rate,
            prepend,
            basis,
        })
    }

    /// Rate 4, three prepended latents.
    pub fn standard(frame_dim: usize, latent_dim: usize, seed: u64) -> Result<Self> {
        Self::new(4, frame_dim, latent_dim, 3, seed)
    }

    pub fn frame_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn basis(&self) -> &Mat<T> {
        &self.basis
    }

    /// Per-latent decoder: rows of `latents` mapped to frame space.
    pub fn dec(&self, latents: &Mat<T>) -> Result<Mat<T>> {
        latents.matmul(&self.basis.transpose())
    }

    /// Per-frame encoder: rows of `frames` projected onto the latent basis.
    pub fn enc(&self, frames: &Mat<T>) -> Result<Mat<T>> {
        frames.matmul(&self.basis)
    }
}

/// Decoded frame sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFrames<T> {
    pub frames: Mat<T>,
    pub fps: f64,
}

impl<T: Scalar> VideoFrames<T> {
    pub fn new(frames: Mat<T>, fps: f64) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::config("a video needs at least one frame"));
        }
        Ok(Self { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    /// Row `i` of the result is frame `(i + shift) mod F`.
    pub fn rotate(&self, shift: usize) -> Self {
        Self {
            frames: self.frames.rotate_rows(shift),
            fps: self.fps,
        }
    }
}

pub const DEFAULT_FPS: f64 = 8.0;

/// Decodes `f` latents to `1 + r (f - 1)` frames.
pub fn decode_direct<T: Scalar>(latents: &Mat<T>, cfg: &CodecConfig<T>) -> Result<VideoFrames<T>> {
    if latents.rows() == 0 {
        return Err(Error::config("cannot decode an empty latent sequence"));
    }
    let dec = cfg.dec(latents)?;
    let (f, dim, r) = (latents.rows(), cfg.frame_dim(), cfg.rate);
    let mut out = Mat::zeros(1 + r * (f - 1), dim);
    out.row_mut(0).copy_from_slice(dec.row(0));
    let rr = T::from_usize_lossy(r);
    for i in 1..f {
        let (prev, cur) = (dec.row(i - 1), dec.row(i));
        for k in 1..=r {
            let lam = T::from_usize_lossy(k) / rr;
            let row = out.row_mut(1 + (i - 1) * r + (k - 1));
            for ((o, &a), &b) in row.iter_mut().zip(prev).zip(cur) {
                *o = a * (T::one() - lam) + b * lam;
            }
        }
    }
    VideoFrames::new(out, DEFAULT_FPS)
}

/// Decodes a cycle of `N` latents to `r N` frames in which every latent,
/// including latent 0, contributes `r` frames conditioned on its cyclic
/// predecessor.
pub fn decode_frame_invariant<T: Scalar>(latents: &Mat<T>, cfg: &CodecConfig<T>) -> Result<VideoFrames<T>> {
    let (n, p) = (latents.rows(), cfg.prepend);
    if n < p {
        return Err(Error::config(format!(
            "frame-invariant decoding needs at least {p} latents, got {n}"
        )));
    }
    let idx: Vec<usize> = (n - p..n).chain(0..n).collect();
    let padded = latents.select_rows(&idx);
    let full = decode_direct(&padded, cfg)?;
    let drop = 1 + cfg.rate * (p - 1);
    let keep: Vec<usize> = (drop..full.len()).collect();
    debug_assert_eq!(keep.len(), cfg.rate * n);
    VideoFrames::new(full.frames.select_rows(&keep), full.fps)
}

/// Encodes `1 + r (f - 1)` frames to `f` latents from the stride frames
/// `0, r, 2r, ...`.
pub fn encode<T: Scalar>(frames: &VideoFrames<T>, cfg: &CodecConfig<T>) -> Result<Mat<T>> {
    let count = frames.len();
    if count == 0 || !(count - 1).is_multiple_of(cfg.rate) {
        return Err(Error::config(format!(
            "{count} frames is not of the form 1 + {} (f - 1)",
            cfg.rate
        )));
    }
    if frames.dim() != cfg.frame_dim() {
        return Err(Error::Shape(format!(
            "frame dim {} does not match codec frame dim {}",
            frames.dim(),
            cfg.frame_dim()
        )));
    }
    let f = 1 + (count - 1) / cfg.rate;
    let stride: Vec<usize> = (0..f).map(|i| i * cfg.rate).collect();
    cfg.enc(&frames.frames.select_rows(&stride))
}
