//! Seeded synthesizers turning ideal RGB images into non-ideal counterparts.
//!
//! Four parametric models stand in for externally generated degraded
//! datasets: Koschmieder fog (airlight blend along a vertical depth ramp),
//! additive anti-aliased rain streaks, gain/gamma/read-noise low light, and an
//! RGGB Bayer mosaic. Every model is a pure function of `(image, spec)`;
//! rain and dark draw all randomness from a [`SplitMix64`] stream seeded by
//! the spec.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::ImageRGB;
use crate::rng::SplitMix64;

/// Which degradation to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegradeKind {
    Rain,
    Fog,
    Dark,
    Bayer,
}

/// One non-ideal transform. `intensity` is ignored for `Bayer`; `seed` only
/// matters for `Rain` and `Dark`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeSpec {
    pub kind: DegradeKind,
    pub intensity: f64,
    pub seed: u64,
}

impl DegradeSpec {
    pub fn new(kind: DegradeKind, intensity: f64, seed: u64) -> Self {
        DegradeSpec { kind, intensity, seed }
    }

    pub fn validate(&self) -> Result<()> {
        check_intensity(self.intensity)
    }
}

/// Model constants for the synthesizers. The defaults are what the named
/// `apply_*` operations use; everything here can be overridden.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeModel {
    /// Fog ambient light level.
    pub airlight: f64,
    /// Extinction coefficient at intensity 1.
    pub fog_k_max: f64,
    /// Depth ramp value at the bottom row (top row is 1.0).
    pub depth_min: f64,
    /// Rain streaks per pixel at intensity 1.
    pub streak_density: f64,
    /// Additive brightness deposited along a streak.
    pub streak_gain: f64,
    pub streak_len_min: f64,
    pub streak_len_max: f64,
    /// Fall angle bounds, degrees from horizontal.
    pub angle_min_deg: f64,
    pub angle_max_deg: f64,
    /// Rain intensity above which the streak layer gets a 3x3 box blur.
    pub blur_threshold: f64,
    /// Brightness gain reduction at intensity 1: gain = 1 - dark_gain * i.
    pub dark_gain: f64,
    /// Gamma increase at intensity 1: exponent = 1 + dark_gamma * i.
    pub dark_gamma: f64,
    /// Read-noise standard deviation per unit intensity.
    pub dark_noise_std: f64,
}

impl Default for DegradeModel {
    fn default() -> Self {
        DegradeModel {
            airlight: 0.9,
            fog_k_max: 3.0,
            depth_min: 0.2,
            streak_density: 0.02,
            streak_gain: 0.25,
            streak_len_min: 8.0,
            streak_len_max: 16.0,
            angle_min_deg: 80.0,
            angle_max_deg: 100.0,
            blur_threshold: 0.5,
            dark_gain: 0.8,
            dark_gamma: 1.5,
            dark_noise_std: 0.02,
        }
    }
}

/// Koschmieder fog: `out = img * t + L * (1 - t)` with transmission
/// `t = exp(-k * d(y))`, `k = fog_k_max * intensity`, and a depth ramp rising
/// from `depth_min` at the bottom row to 1.0 at the top.
pub fn apply_fog(img: &ImageRGB, intensity: f64) -> Result<ImageRGB> {
    apply_fog_with(img, intensity, &DegradeModel::default())
}

pub fn apply_fog_with(img: &ImageRGB, intensity: f64, model: &DegradeModel) -> Result<ImageRGB> {
    check_intensity(intensity)?;
    if intensity == 0.0 {
        return Ok(img.clone());
    }
    let h = img.height();
    let k = model.fog_k_max * intensity;
    let depth: Vec<f64> = (0..h)
        .map(|y| {
            if h == 1 {
                1.0
            } else {
                1.0 - (1.0 - model.depth_min) * y as f64 / (h - 1) as f64
            }
        })
        .collect();
    Ok(img.map_indexed_clamped(|_, _, y, v| {
        let t = libm::exp(-k * depth[y]);
        v * t + model.airlight * (1.0 - t)
    }))
}

/// Additive rain streaks: `round(intensity * density * W * H)` anti-aliased
/// bright streaks at near-vertical fall angles, drawn from the seeded stream;
/// the streak layer is box-blurred once when intensity exceeds the threshold,
/// then added onto the image and clamped.
pub fn apply_rain(img: &ImageRGB, intensity: f64, seed: u64) -> Result<ImageRGB> {
    apply_rain_with(img, intensity, seed, &DegradeModel::default())
}

pub fn apply_rain_with(
    img: &ImageRGB,
    intensity: f64,
    seed: u64,
    model: &DegradeModel,
) -> Result<ImageRGB> {
    check_intensity(intensity)?;
    let (w, h) = (img.width(), img.height());
    let n = libm::round(intensity * model.streak_density * (w * h) as f64) as usize;
    if n == 0 {
        return Ok(img.clone());
    }
    let mut rng = SplitMix64::new(seed);
    let mut layer = vec![0.0f64; w * h];
    for _ in 0..n {
        let x0 = rng.uniform(0.0, w as f64);
        let y0 = rng.uniform(0.0, h as f64);
        let len = rng.uniform(model.streak_len_min, model.streak_len_max);
        let angle = rng.uniform(model.angle_min_deg, model.angle_max_deg) * core::f64::consts::PI / 180.0;
        let (dx, dy) = (libm::cos(angle), libm::sin(angle));
        let steps = libm::ceil(len) as usize;
        for s in 0..steps {
            let t = s as f64;
            splat(&mut layer, w, h, x0 + t * dx, y0 + t * dy, model.streak_gain);
        }
    }
    if intensity > model.blur_threshold {
        layer = box_blur(&layer, w, h);
    }
    Ok(img.map_indexed_clamped(|_, x, y, v| v + layer[y * w + x]))
}

/// Bilinear deposit of `amount` around a sub-pixel point.
fn splat(layer: &mut [f64], w: usize, h: usize, x: f64, y: f64, amount: f64) {
    let xf = libm::floor(x);
    let yf = libm::floor(y);
    let (fx, fy) = (x - xf, y - yf);
    let weights = [
        (xf as isize, yf as isize, (1.0 - fx) * (1.0 - fy)),
        (xf as isize + 1, yf as isize, fx * (1.0 - fy)),
        (xf as isize, yf as isize + 1, (1.0 - fx) * fy),
        (xf as isize + 1, yf as isize + 1, fx * fy),
    ];
    for (px, py, wgt) in weights {
        if px >= 0 && (px as usize) < w && py >= 0 && (py as usize) < h {
            layer[py as usize * w + px as usize] += amount * wgt;
        }
    }
}

/// 3x3 box blur with replicate borders.
fn box_blur(layer: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            for dy in -1isize..=1 {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for dx in -1isize..=1 {
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    sum += layer[yy * w + xx];
                }
            }
            out[y * w + x] = sum / 9.0;
        }
    }
    out
}

/// Low light: `out = clamp((img * gain)^gamma + noise)` with
/// `gain = 1 - dark_gain * i`, `gamma = 1 + dark_gamma * i`, and zero-mean
/// Gaussian read noise of std `dark_noise_std * i`.
pub fn apply_dark(img: &ImageRGB, intensity: f64, seed: u64) -> Result<ImageRGB> {
    apply_dark_with(img, intensity, seed, &DegradeModel::default())
}

pub fn apply_dark_with(
    img: &ImageRGB,
    intensity: f64,
    seed: u64,
    model: &DegradeModel,
) -> Result<ImageRGB> {
    let dimmed = gain_gamma_dark_with(img, intensity, model)?;
    if intensity == 0.0 {
        return Ok(dimmed);
    }
    let std = model.dark_noise_std * intensity;
    let mut rng = SplitMix64::new(seed);
    Ok(dimmed.map_clamped(|v| v + std * rng.gaussian()))
}

/// The noise-free part of [`apply_dark`]; exposed so monotonicity in intensity
/// can be checked without the noise term.
pub fn gain_gamma_dark(img: &ImageRGB, intensity: f64) -> Result<ImageRGB> {
    gain_gamma_dark_with(img, intensity, &DegradeModel::default())
}

pub fn gain_gamma_dark_with(img: &ImageRGB, intensity: f64, model: &DegradeModel) -> Result<ImageRGB> {
    check_intensity(intensity)?;
    if intensity == 0.0 {
        return Ok(img.clone());
    }
    let gain = 1.0 - model.dark_gain * intensity;
    let gamma = 1.0 + model.dark_gamma * intensity;
    Ok(img.map_clamped(|v| libm::pow(v * gain, gamma)))
}

/// RGGB mosaic: per 2x2 cell, R survives at (even, even), G at the two mixed
/// parities, B at (odd, odd); the other two channels of each pixel are zeroed.
/// The channel count stays 3. Requires even width and height.
pub fn apply_bayer(img: &ImageRGB) -> Result<ImageRGB> {
    if img.width() % 2 != 0 || img.height() % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "Bayer mosaic needs even dims, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(img.map_indexed_clamped(|c, x, y, v| {
        if c == bayer_channel(x, y) {
            v
        } else {
            0.0
        }
    }))
}

/// The surviving channel at pixel `(x, y)` under the RGGB pattern.
pub fn bayer_channel(x: usize, y: usize) -> usize {
    match (x % 2, y % 2) {
        (0, 0) => 0,
        (1, 1) => 2,
        _ => 1,
    }
}

/// Dispatch on the spec's kind.
pub fn degrade_image(img: &ImageRGB, spec: &DegradeSpec) -> Result<ImageRGB> {
    spec.validate()?;
    match spec.kind {
        DegradeKind::Fog => apply_fog(img, spec.intensity),
        DegradeKind::Rain => apply_rain(img, spec.intensity, spec.seed),
        DegradeKind::Dark => apply_dark(img, spec.intensity, spec.seed),
        DegradeKind::Bayer => apply_bayer(img),
    }
}

fn check_intensity(intensity: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&intensity) {
        return Err(Error::Domain(format!("intensity {intensity} outside [0, 1]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(seed: u64, w: usize, h: usize) -> ImageRGB {
        let mut rng = SplitMix64::new(seed);
        let data: Vec<f64> = (0..3 * w * h).map(|_| rng.next_f64()).collect();
        ImageRGB::from_vec(w, h, data).unwrap()
    }

    #[test]
    fn zero_intensity_is_identity() {
        let img = test_image(1, 8, 6);
        assert_eq!(apply_fog(&img, 0.0).unwrap(), img);
        assert_eq!(apply_rain(&img, 0.0, 7).unwrap(), img);
        assert_eq!(apply_dark(&img, 0.0, 7).unwrap(), img);
    }

    #[test]
    fn fog_top_row_anchor() {
        // Full fog over a black pixel at the top row: L * (1 - exp(-3)).
        let img = ImageRGB::new(4, 4, 0.0).unwrap();
        let out = apply_fog(&img, 1.0).unwrap();
        let expect = 0.9 * (1.0 - libm::exp(-3.0));
        assert!((out.get(0, 0, 0) - expect).abs() < 1e-12);
        assert!((expect - 0.8552).abs() < 1e-4);
    }

    #[test]
    fn fog_pulls_toward_airlight_monotonically() {
        let img = test_image(2, 6, 6);
        let mut prev = img.clone();
        for step in 1..=10 {
            let out = apply_fog(&img, step as f64 / 10.0).unwrap();
            for (o, p) in out.data().iter().zip(prev.data().iter()) {
                assert!((o - 0.9).abs() <= (p - 0.9).abs() + 1e-12);
            }
            prev = out;
        }
    }

    #[test]
    fn rain_is_deterministic_and_brightening() {
        let img = test_image(3, 32, 32);
        for &intensity in &[0.3, 0.8] {
            let a = apply_rain(&img, intensity, 99).unwrap();
            let b = apply_rain(&img, intensity, 99).unwrap();
            assert_eq!(a, b);
            assert!(a.mean() >= img.mean());
            // Per-pixel never darker: the streak layer is non-negative.
            for (o, i) in a.data().iter().zip(img.data().iter()) {
                assert!(o + 1e-12 >= *i);
            }
            let c = apply_rain(&img, intensity, 100).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn dark_anchor_and_monotonicity() {
        let img = ImageRGB::new(2, 2, 1.0).unwrap();
        let out = gain_gamma_dark(&img, 1.0).unwrap();
        let expect = libm::pow(0.2, 2.5);
        assert!((out.get(0, 0, 0) - expect).abs() < 1e-12);
        assert!((expect - 0.01789).abs() < 1e-5);

        let img = test_image(4, 8, 8);
        let mut prev = img.mean();
        for step in 1..=10 {
            let m = gain_gamma_dark(&img, step as f64 / 10.0).unwrap().mean();
            assert!(m < prev, "mean not decreasing at step {step}");
            prev = m;
        }
    }

    #[test]
    fn dark_noise_is_seeded() {
        let img = test_image(5, 8, 8);
        let a = apply_dark(&img, 0.7, 1).unwrap();
        let b = apply_dark(&img, 0.7, 1).unwrap();
        let c = apply_dark(&img, 0.7, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn bayer_pattern() {
        let img = test_image(6, 8, 6);
        let out = apply_bayer(&img).unwrap();
        for y in 0..6 {
            for x in 0..8 {
                let keep = bayer_channel(x, y);
                for c in 0..3 {
                    if c == keep {
                        assert_eq!(out.get(c, x, y), img.get(c, x, y));
                    } else {
                        assert_eq!(out.get(c, x, y), 0.0);
                    }
                }
            }
        }
        // Summing channels at each pixel reproduces the selected input channel.
        for y in 0..6 {
            for x in 0..8 {
                let sum: f64 = (0..3).map(|c| out.get(c, x, y)).sum();
                assert_eq!(sum, img.get(bayer_channel(x, y), x, y));
            }
        }
    }

    #[test]
    fn bayer_green_sites_are_half() {
        let mut data = vec![0.0; 3 * 4 * 4];
        for y in 0..4 {
            for x in 0..4 {
                data[(1 * 4 + y) * 4 + x] = 0.5; // pure green input
            }
        }
        let img = ImageRGB::from_vec(4, 4, data).unwrap();
        let out = apply_bayer(&img).unwrap();
        let nonzero = out.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 8); // half of 16 pixels
    }

    #[test]
    fn bayer_idempotent_and_rejects_odd() {
        let img = test_image(7, 6, 4);
        let once = apply_bayer(&img).unwrap();
        let twice = apply_bayer(&once).unwrap();
        assert_eq!(once, twice);
        let odd = test_image(8, 5, 4);
        assert!(apply_bayer(&odd).is_err());
    }

    #[test]
    fn dispatch_and_validation() {
        let img = test_image(9, 4, 4);
        let spec = DegradeSpec::new(DegradeKind::Fog, 0.0, 0);
        assert_eq!(degrade_image(&img, &spec).unwrap(), img);
        let bad = DegradeSpec::new(DegradeKind::Rain, 1.5, 0);
        assert!(degrade_image(&img, &bad).is_err());
    }
}
