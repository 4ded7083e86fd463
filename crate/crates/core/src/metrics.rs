//! Loop-quality and motion statistics over decoded frames.
//!
//! All statistics are computed in `f64` regardless of the frame scalar type.
//! A frame sequence is a `Mat` with one frame per row.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{mse, Mat};

fn row_mse<T: Scalar>(frames: &Mat<T>, a: usize, b: usize) -> f64 {
    mse(frames.row(a), frames.row(b)).as_f64()
}

fn need_frames<T: Scalar>(frames: &Mat<T>, min: usize, what: &str) -> Result<()> {
    if frames.rows() < min {
        return Err(Error::config(format!(
            "{what} needs at least {min} frames, got {}",
            frames.rows()
        )));
    }
    Ok(())
}

/// MSE between consecutive frames, `F - 1` entries.
pub fn adjacent_mse_profile<T: Scalar>(frames: &Mat<T>) -> Vec<f64> {
    (1..frames.rows()).map(|i| row_mse(frames, i - 1, i)).collect()
}

/// [`adjacent_mse_profile`] followed by the seam term `MSE(F-1, 0)`.
pub fn wrap_adjacent_profile<T: Scalar>(frames: &Mat<T>) -> Vec<f64> {
    let mut p = adjacent_mse_profile(frames);
    if frames.rows() > 1 {
        p.push(row_mse(frames, frames.rows() - 1, 0));
    }
    p
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn first_last_mse<T: Scalar>(frames: &Mat<T>) -> Result<f64> {
    need_frames(frames, 2, "first/last MSE")?;
    Ok(row_mse(frames, 0, frames.rows() - 1))
}

/// Seam step over the median interior step.
///
/// Returns `f64::INFINITY` when the median interior step is zero; see
/// [`is_degenerate`].
pub fn seam_gap_ratio<T: Scalar>(frames: &Mat<T>) -> Result<f64> {
    need_frames(frames, 3, "seam gap ratio")?;
    let interior = adjacent_mse_profile(frames);
    let med = median(&interior).unwrap_or(0.0);
    if med <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(row_mse(frames, frames.rows() - 1, 0) / med)
}

pub fn is_degenerate(ratio: f64) -> bool {
    !ratio.is_finite()
}

fn second_differences<T: Scalar>(frames: &Mat<T>, cyclic: bool) -> Vec<f64> {
    let f = frames.rows();
    let count = if cyclic { f } else { f.saturating_sub(2) };
    (0..count)
        .map(|k| {
            let (a, b, c) = if cyclic {
                (k, (k + 1) % f, (k + 2) % f)
            } else {
                (k, k + 1, k + 2)
            };
            let (ra, rb, rc) = (frames.row(a), frames.row(b), frames.row(c));
            let s: f64 = (0..frames.cols())
                .map(|i| {
                    let d = ra[i].as_f64() - 2.0 * rb[i].as_f64() + rc[i].as_f64();
                    d * d
                })
                .sum();
            s / frames.cols() as f64
        })
        .collect()
}

/// Mean squared second temporal difference; lower is smoother.
pub fn smoothness_proxy<T: Scalar>(frames: &Mat<T>) -> Result<f64> {
    need_frames(frames, 3, "smoothness proxy")?;
    Ok(mean(&second_differences(frames, false)))
}

/// [`smoothness_proxy`] with the two second differences that straddle the
/// seam included.
pub fn cyclic_smoothness_proxy<T: Scalar>(frames: &Mat<T>) -> Result<f64> {
    need_frames(frames, 3, "smoothness proxy")?;
    Ok(mean(&second_differences(frames, true)))
}

/// Mean adjacent-frame MSE.
pub fn dynamic_proxy<T: Scalar>(frames: &Mat<T>) -> Result<f64> {
    need_frames(frames, 2, "dynamic proxy")?;
    Ok(mean(&adjacent_mse_profile(frames)))
}

pub fn cyclic_dynamic_proxy<T: Scalar>(frames: &Mat<T>) -> Result<f64> {
    need_frames(frames, 2, "dynamic proxy")?;
    Ok(mean(&wrap_adjacent_profile(frames)))
}

/// Frame entered by the largest wrap-aware step: `(argmax + 1) mod F`, so a
/// jump across the seam is located at frame 0.
pub fn largest_jump_frame<T: Scalar>(frames: &Mat<T>) -> Result<usize> {
    need_frames(frames, 2, "jump location")?;
    let p = wrap_adjacent_profile(frames);
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    Ok((best + 1) % frames.rows())
}

/// Report keys in serialization order.
pub const REPORT_KEYS: [&str; 8] = [
    "frames",
    "first_last_mse",
    "seam_gap_ratio",
    "degenerate",
    "smoothness_proxy",
    "dynamic_proxy",
    "max_jump_frame",
    "adjacent_mse_profile",
];

#[derive(Debug, Clone, PartialEq)]
pub struct LoopReport {
    pub frames: usize,
    pub first_last_mse: f64,
    pub seam_gap_ratio: f64,
    /// Wrap-aware, length `F`; the last entry is the seam step.
    pub adjacent_mse_profile: Vec<f64>,
    pub smoothness_proxy: f64,
    pub dynamic_proxy: f64,
    pub max_jump_frame: usize,
}

impl LoopReport {
    /// Computes every statistic treating the video as a loop (the proxies
    /// include the seam terms).
    pub fn compute<T: Scalar>(frames: &Mat<T>) -> Result<Self> {
        need_frames(frames, 3, "loop report")?;
        if !frames.all_finite() {
            return Err(Error::config("frames contain non-finite values"));
        }
        Ok(Self {
            frames: frames.rows(),
            first_last_mse: first_last_mse(frames)?,
            seam_gap_ratio: seam_gap_ratio(frames)?,
            adjacent_mse_profile: wrap_adjacent_profile(frames),
            smoothness_proxy: cyclic_smoothness_proxy(frames)?,
            dynamic_proxy: cyclic_dynamic_proxy(frames)?,
            max_jump_frame: largest_jump_frame(frames)?,
        })
    }

    pub fn degenerate(&self) -> bool {
        is_degenerate(self.seam_gap_ratio)
    }

    /// One `name=value` line per key of [`REPORT_KEYS`]; the profile is
    /// comma-separated.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let profile: Vec<String> = self.adjacent_mse_profile.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "frames={}", self.frames);
        let _ = writeln!(s, "first_last_mse={}", self.first_last_mse);
        let _ = writeln!(s, "seam_gap_ratio={}", self.seam_gap_ratio);
        let _ = writeln!(s, "degenerate={}", u8::from(self.degenerate()));
        let _ = writeln!(s, "smoothness_proxy={}", self.smoothness_proxy);
        let _ = writeln!(s, "dynamic_proxy={}", self.dynamic_proxy);
        let _ = writeln!(s, "max_jump_frame={}", self.max_jump_frame);
        let _ = writeln!(s, "adjacent_mse_profile={}", profile.join(","));
        s
    }

    /// Parses the block written by [`LoopReport::to_text`]; other keys are
    /// ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let kv = parse_kv_block(text)?;
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| Error::format(format!("report is missing `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|_| Error::format(format!("report value for `{k}` is not a number")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse::<usize>()
                .map_err(|_| Error::format(format!("report value for `{k}` is not an integer")))
        };
        let profile = get("adjacent_mse_profile")?
            .split(',')
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<f64>().map_err(|_| Error::format("bad profile entry")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            frames: int("frames")?,
            first_last_mse: num("first_last_mse")?,
            seam_gap_ratio: num("seam_gap_ratio")?,
            adjacent_mse_profile: profile,
            smoothness_proxy: num("smoothness_proxy")?,
            dynamic_proxy: num("dynamic_proxy")?,
            max_jump_frame: int("max_jump_frame")?,
        })
    }
}

/// Parses `name=value` lines; blank lines and `#` comments are skipped and a
/// repeated key is an error.
pub fn parse_kv_block(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("line {}: expected name=value", no + 1)))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::format(format!("line {}: duplicate key `{}`", no + 1, k.trim())));
        }
    }
    Ok(out)
}

/// Paired sign test of "first is smaller than second".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided `P(X >= wins)` for `X ~ Binomial(wins + losses, 1/2)`.
    pub p_value: f64,
}

pub fn sign_test(pairs: &[(f64, f64)]) -> SignTest {
    let wins = pairs.iter().filter(|(a, b)| a < b).count();
    let losses = pairs.iter().filter(|(a, b)| a > b).count();
    let n = wins + losses;
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_choose = 0.0;
    let mut p = 0.0;
    for k in 0..=n {
        if k > 0 {
            ln_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= wins {
            p += (ln_choose + ln_half_n).exp();
        }
    }
    SignTest {
        wins,
        losses,
        ties: pairs.len() - n,
        p_value: p.min(1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_frames(v: &[f64]) -> Mat<f64> {
        Mat::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    fn circle(f: usize) -> Mat<f64> {
        Mat::from_fn(f, 2, |i, c| {
            let a = std::f64::consts::TAU * i as f64 / f as f64;
            if c == 0 { a.sin() } else { a.cos() }
        })
    }

    #[test]
    fn first_last_examples() {
        assert_eq!(first_last_mse(&Mat::from_fn(5, 3, |_, _| 2.0)).unwrap(), 0.0);
        assert_eq!(first_last_mse(&scalar_frames(&[0.0, 1.0, 2.0, 3.0])).unwrap(), 9.0);
        assert!(first_last_mse(&scalar_frames(&[1.0])).is_err());
    }

    #[test]
    fn ramp_ratio_is_squared_length() {
        for f in 3..20 {
            let ramp = scalar_frames(&(0..f).map(|i| i as f64).collect::<Vec<_>>());
            let r = seam_gap_ratio(&ramp).unwrap();
            assert!((r - ((f - 1) * (f - 1)) as f64).abs() < 1e-9, "{f}: {r}");
        }
    }

    #[test]
    fn circle_is_seamless() {
        for f in [8, 16, 33] {
            let r = seam_gap_ratio(&circle(f)).unwrap();
            assert!((r - 1.0).abs() < 0.1, "{r}");
        }
    }

    #[test]
    fn constant_video_is_degenerate() {
        let c = Mat::from_fn(6, 2, |_, _| 0.3);
        assert!(is_degenerate(seam_gap_ratio(&c).unwrap()));
        let rep = LoopReport::compute(&c).unwrap();
        assert!(rep.degenerate());
        assert_eq!(rep.dynamic_proxy, 0.0);
        assert_eq!(rep.smoothness_proxy, 0.0);
        assert!(seam_gap_ratio(&scalar_frames(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn ramp_has_zero_second_difference() {
        let ramp = scalar_frames(&[0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(smoothness_proxy(&ramp).unwrap(), 0.0);
        assert!(dynamic_proxy(&ramp).unwrap() > 0.0);
    }

    #[test]
    fn noise_is_rougher_than_sinusoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let smooth = smoothness_proxy(&circle(16)).unwrap();
        for _ in 0..1000 {
            let noise = Mat::from_fn(16, 2, |_, _| rng.gen_range(-1.0..1.0));
            assert!(smoothness_proxy(&noise).unwrap() > smooth);
        }
    }

    #[test]
    fn offset_scale_and_rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = Mat::from_fn(12, 3, |_, _| rng.gen_range(-1.0..1.0));
        let base = LoopReport::compute(&v).unwrap();
        let shifted = LoopReport::compute(&v.map(|x| x + 0.25)).unwrap();
        assert!((base.first_last_mse - shifted.first_last_mse).abs() < 1e-12);
        assert!((base.seam_gap_ratio - shifted.seam_gap_ratio).abs() < 1e-9);
        assert!((base.dynamic_proxy - shifted.dynamic_proxy).abs() < 1e-12);
        assert!((base.smoothness_proxy - shifted.smoothness_proxy).abs() < 1e-12);
        let scaled = v.map(|x| x * 4.0);
        assert_eq!(seam_gap_ratio(&scaled).unwrap(), base.seam_gap_ratio);
        for m in 0..12 {
            let rot = LoopReport::compute(&v.rotate_rows(m)).unwrap();
            assert!((rot.dynamic_proxy - base.dynamic_proxy).abs() < 1e-12);
            assert!((rot.smoothness_proxy - base.smoothness_proxy).abs() < 1e-12);
        }
    }

    #[test]
    fn jump_location() {
        let ramp = scalar_frames(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(largest_jump_frame(&ramp).unwrap(), 0);
        let spike = scalar_frames(&[0.0, 0.1, 5.0, 5.1, 5.0, 0.1]);
        assert_eq!(largest_jump_frame(&spike).unwrap(), 2);
    }

    #[test]
    fn report_text_round_trip() {
        let rep = LoopReport::compute(&circle(9)).unwrap();
        let text = rep.to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap()).collect();
        assert_eq!(keys, REPORT_KEYS);
        assert_eq!(LoopReport::from_text(&text).unwrap(), rep);
        assert!(parse_kv_block("a=1\na=2").is_err());
        assert!(parse_kv_block("novalue").is_err());
    }

    #[test]
    fn sign_test_values() {
        // 9 of 10: P(X >= 9) = 11 / 1024
        let mut pairs = vec![(0.0, 1.0); 9];
        pairs.push((1.0, 0.0));
        pairs.push((2.0, 2.0));
        let t = sign_test(&pairs);
        assert_eq!((t.wins, t.losses, t.ties), (9, 1, 1));
        assert!((t.p_value - 11.0 / 1024.0).abs() < 1e-12);
        assert_eq!(sign_test(&[]).p_value, 1.0);
        assert!((sign_test(&[(1.0, 0.0)]).p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
