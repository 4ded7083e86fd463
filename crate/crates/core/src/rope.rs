//! Rotary position embeddings over the temporal axis, NTK-aware base
//! rescaling, and the fixed/shifted position policies used while the latent
//! window slides around the cycle.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::dot;

/// How window positions are assigned while latents shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RopeMode {
    /// Positions stay `0..f` whatever the window start.
    #[default]
    Fixed,
    /// Positions move with the latents (cycle indices), with an NTK-scaled
    /// base covering the whole cycle.
    Shifted,
}

impl std::str::FromStr for RopeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(RopeMode::Fixed),
            "shifted" => Ok(RopeMode::Shifted),
            other => Err(Error::config(format!(
                "unknown rope mode '{other}' (expected fixed|shifted)"
            ))),
        }
    }
}

impl std::fmt::Display for RopeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RopeMode::Fixed => "fixed",
            RopeMode::Shifted => "shifted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopeConfig<T> {
    /// Rotated vector dimension (attention head dim); even.
    pub head_dim: usize,
    pub base: T,
    /// Context extension factor `k >= 1`; `k > 1` rescales the base.
    pub scale: T,
    pub mode: RopeMode,
}

impl<T: Scalar> RopeConfig<T> {
    pub fn new(head_dim: usize, base: T, scale: T, mode: RopeMode) -> Result<Self> {
        let cfg = Self {
            head_dim,
            base,
            scale,
            mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Base 10000, no extension, fixed positions.
    pub fn standard(head_dim: usize) -> Result<Self> {
        Self::new(head_dim, T::lit(10000.0), T::one(), RopeMode::Fixed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim < 2 || !self.head_dim.is_multiple_of(2) {
            return Err(Error::config(format!(
                "rope head dim must be even and >= 2, got {}",
                self.head_dim
            )));
        }
        if !(self.base > T::one()) {
            return Err(Error::config(format!("rope base must exceed 1, got {}", self.base)));
        }
        if !(self.scale >= T::one()) {
            return Err(Error::config(format!("rope scale must be >= 1, got {}", self.scale)));
        }
        if self.scale > T::one() && self.head_dim <= 2 {
            return Err(Error::config("NTK rescaling needs head dim > 2"));
        }
        Ok(())
    }

    /// Base actually used for the frequencies after NTK rescaling.
    pub fn effective_base(&self) -> T {
        if self.scale == T::one() {
            self.base
        } else {
            self.base * self.scale.powf(self.ntk_exponent())
        }
    }

    fn ntk_exponent(&self) -> T {
        let d = T::from_usize_lossy(self.head_dim);
        d / (d - T::lit(2.0))
    }

    pub fn thetas(&self) -> Vec<T> {
        thetas_unchecked(self.head_dim, self.effective_base())
    }

    pub fn with_scale(mut self, scale: T) -> Self {
        self.scale = scale;
        self
    }
}

fn thetas_unchecked<T: Scalar>(d: usize, b: T) -> Vec<T> {
    let dd = T::from_usize_lossy(d);
    (0..d / 2)
        .map(|i| b.powf(-T::lit(2.0) * T::from_usize_lossy(i) / dd))
        .collect()
}

/// Rotation frequencies `theta_i = b^(-2i/d)` for `i = 0..d/2`.
pub fn rope_thetas<T: Scalar>(d: usize, b: T) -> Result<Vec<T>> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::config(format!("rope dimension must be even and positive, got {d}")));
    }
    if !(b > T::one()) {
        return Err(Error::config(format!("rope base must exceed 1, got {b}")));
    }
    Ok(thetas_unchecked(d, b))
}

/// NTK-aware base `b * k^(d / (d - 2))`.
pub fn ntk_scaled_base<T: Scalar>(b: T, k: T, d: usize) -> Result<T> {
    if d <= 2 {
        return Err(Error::config(format!("NTK rescaling needs d > 2, got {d}")));
    }
    if !(k >= T::one()) {
        return Err(Error::config(format!("extension factor must be >= 1, got {k}")));
    }
    let dd = T::from_usize_lossy(d);
    Ok(b * k.powf(dd / (dd - T::lit(2.0))))
}

/// Rotates consecutive pairs `(x[2i], x[2i+1])` by `position * theta_i` in
/// place.
pub fn rotate_in_place<T: Scalar>(x: &mut [T], position: T, thetas: &[T]) {
    debug_assert_eq!(x.len(), 2 * thetas.len());
    for (pair, &th) in x.chunks_exact_mut(2).zip(thetas) {
        let (s, c) = (position * th).sin_cos();
        let (a, b) = (pair[0], pair[1]);
        pair[0] = a * c - b * s;
        pair[1] = a * s + b * c;
    }
}

/// Inverse rotation, used when back-propagating through the embedding.
pub fn rotate_back_in_place<T: Scalar>(x: &mut [T], position: T, thetas: &[T]) {
    rotate_in_place(x, -position, thetas);
}

pub fn apply_rope<T: Scalar>(x: &[T], m: i64, cfg: &RopeConfig<T>) -> Result<Vec<T>> {
    cfg.validate()?;
    if x.len() != cfg.head_dim {
        return Err(Error::Shape(format!(
            "rope expects a vector of dim {}, got {}",
            cfg.head_dim,
            x.len()
        )));
    }
    let mut out = x.to_vec();
    rotate_in_place(&mut out, T::from_i64(m).unwrap_or_else(T::nan), &cfg.thetas());
    Ok(out)
}

/// Attention logit between a query at `m` and a key at `n`; depends only on
/// `m - n`.
pub fn attention_weight<T: Scalar>(q: &[T], k: &[T], m: i64, n: i64, cfg: &RopeConfig<T>) -> Result<T> {
    let qm = apply_rope(q, m, cfg)?;
    let kn = apply_rope(k, n, cfg)?;
    Ok(dot(&qm, &kn))
}

/// Position indices and frequency configuration for one denoising window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPositions<T> {
    pub positions: Vec<i64>,
    pub rope: RopeConfig<T>,
}

/// Positions for a window of `f` latents starting at cycle index `j`.
///
/// Fixed mode keeps `0..f` and the original base; shifted mode uses the
/// wrapped cycle indices with the base rescaled for `k = N / f`.
pub fn positions_for_window<T: Scalar>(
    j: usize,
    f: usize,
    n: usize,
    cfg: &RopeConfig<T>,
) -> Result<WindowPositions<T>> {
    if f == 0 || f > n {
        return Err(Error::config(format!("window length {f} must lie in 1..={n}")));
    }
    if j >= n {
        return Err(Error::config(format!("window start {j} outside cycle of {n}")));
    }
    match cfg.mode {
        RopeMode::Fixed => Ok(WindowPositions {
            positions: (0..f as i64).collect(),
            rope: cfg.with_scale(T::one()),
        }),
        RopeMode::Shifted => {
            let k = T::from_usize_lossy(n) / T::from_usize_lossy(f);
            let rope = cfg.with_scale(k);
            rope.validate()?;
            Ok(WindowPositions {
                positions: (0..f).map(|i| ((j + i) % n) as i64).collect(),
                rope,
            })
        }
    }
}

/// Positions for a non-wrapping window `[start, start + f)` over a sequence
/// of `n` latents (long generation). Shifted mode uses absolute indices.
pub fn positions_for_span<T: Scalar>(
    start: usize,
    f: usize,
    n: usize,
    cfg: &RopeConfig<T>,
) -> Result<WindowPositions<T>> {
    if f == 0 || start + f > n {
        return Err(Error::config(format!(
            "span [{start}, {}) exceeds sequence of {n}",
            start + f
        )));
    }
    match cfg.mode {
        RopeMode::Fixed => Ok(WindowPositions {
            positions: (0..f as i64).collect(),
            rope: cfg.with_scale(T::one()),
        }),
        RopeMode::Shifted => {
            let rope = cfg.with_scale(T::from_usize_lossy(n) / T::from_usize_lossy(f));
            rope.validate()?;
            Ok(WindowPositions {
                positions: (start as i64..(start + f) as i64).collect(),
                rope,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn thetas_small_cases() {
        let th = rope_thetas(4, 10000.0f64).unwrap();
        assert_eq!(th[0], 1.0);
        assert!((th[1] - 0.01).abs() < 1e-15);
        assert_eq!(rope_thetas(2, 7.0f64).unwrap(), vec![1.0]);
        assert!(rope_thetas(3, 10000.0f64).is_err());
        assert!(rope_thetas(4, 1.0f64).is_err());
    }

    #[test]
    fn thetas_match_high_precision_values() {
        // mpmath: 10000^(-2i/8) = 1, 0.1, 0.01, 0.001
        let expected = [1.0, 0.1, 0.01, 0.001];
        let th = rope_thetas(8, 10000.0f64).unwrap();
        for (a, b) in th.iter().zip(expected) {
            assert!(((a - b) / b).abs() < 1e-14);
        }
        assert!(th.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn quarter_rotation() {
        // theta_0 = 1, so position pi/2 is a quarter turn; use a real-valued
        // position through the in-place primitive.
        let mut x = [1.0f64, 0.0];
        rotate_in_place(&mut x, FRAC_PI_2, &[1.0]);
        assert!(x[0].abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_position_is_identity() {
        let cfg = RopeConfig::<f64>::standard(6).unwrap();
        let x = [0.3, -0.2, 1.5, 2.0, -4.0, 0.1];
        assert_eq!(apply_rope(&x, 0, &cfg).unwrap(), x.to_vec());
        assert!(apply_rope(&x[..4], 0, &cfg).is_err());
    }

    #[test]
    fn attention_weight_cases() {
        let cfg = RopeConfig::<f64>::standard(4).unwrap();
        let q = [1.0, 2.0, -0.5, 0.25];
        let k = [0.5, -1.0, 3.0, 1.0];
        let plain = dot(&q, &k);
        assert!((attention_weight(&q, &k, 7, 7, &cfg).unwrap() - plain).abs() < 1e-12);
        let a = attention_weight(&q, &k, 5, 3, &cfg).unwrap();
        let b = attention_weight(&q, &k, 102, 100, &cfg).unwrap();
        assert!((a - b).abs() < 1e-6);
        let orth = [2.0, -1.0, 0.0, 0.0];
        let orth2 = [1.0, 2.0, 0.0, 0.0];
        assert!(attention_weight(&orth, &orth2, 4, 4, &cfg).unwrap().abs() < 1e-12);
        assert!(attention_weight(&q[..2], &k, 0, 0, &cfg).is_err());
    }

    #[test]
    fn ntk_base_values() {
        assert_eq!(ntk_scaled_base(10000.0f64, 1.0, 64).unwrap(), 10000.0);
        // mpmath: 10000 * 2^(64/62)
        let b = ntk_scaled_base(10000.0f64, 2.0, 64).unwrap();
        assert!((b - 20452.228712025368).abs() < 1e-8);
        assert!(ntk_scaled_base(10000.0f64, 2.0, 2).is_err());
        assert!(ntk_scaled_base(10000.0f64, 0.5, 8).is_err());
    }

    #[test]
    fn ntk_endpoint_frequencies() {
        for d in [16usize, 32, 64] {
            for k in [2.0f64, 4.0, 8.0] {
                let th = rope_thetas(d, 10000.0).unwrap();
                let th2 = rope_thetas(d, ntk_scaled_base(10000.0, k, d).unwrap()).unwrap();
                assert_eq!(th2[0], 1.0);
                let last = d / 2 - 1;
                assert!((th2[last] * k / th[last] - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn window_positions() {
        let fixed = RopeConfig::<f64>::standard(8).unwrap();
        for j in 0..16 {
            let w = positions_for_window(j, 8, 16, &fixed).unwrap();
            assert_eq!(w.positions, (0..8).collect::<Vec<_>>());
            assert_eq!(w.rope.effective_base(), 10000.0);
        }
        let shifted = RopeConfig { mode: RopeMode::Shifted, ..fixed };
        let w = positions_for_window(3, 4, 4, &shifted).unwrap();
        assert_eq!(w.positions, vec![3, 0, 1, 2]);
        assert_eq!(w.rope.effective_base(), 10000.0);
        let w = positions_for_window(6, 8, 16, &shifted).unwrap();
        assert_eq!(w.positions, (6..14).collect::<Vec<_>>());
        assert_eq!(w.rope.scale, 2.0);
        assert_eq!(
            w.rope.effective_base(),
            ntk_scaled_base(10000.0, 2.0, 8).unwrap()
        );
        assert!(positions_for_window(0, 9, 8, &fixed).is_err());
        assert!(positions_for_window(8, 4, 8, &fixed).is_err());
    }

    #[test]
    fn span_positions_are_absolute_in_shifted_mode() {
        let cfg = RopeConfig::<f64>::new(8, 10000.0, 1.0, RopeMode::Shifted).unwrap();
        let w = positions_for_span(5, 8, 20, &cfg).unwrap();
        assert_eq!(w.positions, (5..13).collect::<Vec<_>>());
        assert_eq!(w.rope.scale, 2.5);
        assert!(positions_for_span(13, 8, 20, &cfg).is_err());
    }

    fn vec8() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0f64..2.0, 8)
    }

    proptest! {
        #[test]
        fn rope_preserves_norm(x in vec8(), m in -500i64..500, k in 1.0f64..8.0) {
            let cfg = RopeConfig::new(8, 10000.0, k, RopeMode::Fixed).unwrap();
            let y = apply_rope(&x, m, &cfg).unwrap();
            prop_assert!((dot(&x, &x).sqrt() - dot(&y, &y).sqrt()).abs() < 1e-10);
        }

        #[test]
        fn attention_depends_on_offset_only(q in vec8(), k in vec8(),
                                            m in -200i64..200, n in -200i64..200,
                                            delta in -1000i64..1000) {
            let cfg = RopeConfig::<f64>::standard(8).unwrap();
            let a = attention_weight(&q, &k, m, n, &cfg).unwrap();
            let b = attention_weight(&q, &k, m + delta, n + delta, &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-6);
        }

        #[test]
        fn modes_agree_on_contiguous_unscaled_windows(q in vec8(), k in vec8(),
                                                     j in 0usize..8, a in 0usize..4, b in 0usize..4) {
            // k = 1 forces N = f, where only j = 0 yields a contiguous list.
            let fixed = RopeConfig::<f64>::standard(8).unwrap();
            let shifted = RopeConfig { mode: RopeMode::Shifted, ..fixed };
            let n = 4 + j;
            let f = n;
            let wf = positions_for_window(0, f, n, &fixed).unwrap();
            let ws = positions_for_window(0, f, n, &shifted).unwrap();
            let (a, b) = (a.min(f - 1), b.min(f - 1));
            let x = attention_weight(&q, &k, wf.positions[a], wf.positions[b], &wf.rope).unwrap();
            let y = attention_weight(&q, &k, ws.positions[a], ws.positions[b], &ws.rope).unwrap();
            prop_assert!((x - y).abs() < 1e-6);
        }
    }
}
