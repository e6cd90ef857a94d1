//! Extended-area structural discrepancy loss between two feature maps.
//!
//! Given a map `A` (non-ideal branch) and a reference map `B` (ideal branch),
//! the loss compares their Sobel gradient magnitudes through two terms:
//! a local term `exp(-dS) * dS` on the per-cell magnitude difference `dS`,
//! and a neighborhood consistency term that penalizes mismatched
//! center-to-neighbor gradient drops over a `(2r+1)^2` window. Both terms are
//! averaged over batch, channels, and the spatial grid, then scaled by a
//! time-varying attenuation `exp(-alpha * delta^beta)` so the correction fades
//! late in training. The neighborhood radius halves per pyramid level,
//! clamped below at 1.
//!
//! All sums are accumulated in f64 in a fixed (index) order, so results do not
//! depend on any parallel schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grad::{self, sobel_filter};
use crate::tensor::{FeatureMap, FeaturePyramid};

/// Scalar hyperparameters of the loss.
///
/// `lambda_consistency` weighs the neighborhood term inside the loss;
/// `lambda_fs` weighs the whole loss against the detection loss during
/// feature-corrected training and is unused by [`eansdl`] itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EansdlParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_consistency: f64,
    pub lambda_fs: f64,
    pub r0: usize,
    pub delta: f64,
}

impl Default for EansdlParams {
    fn default() -> Self {
        EansdlParams {
            alpha: 3.0,
            beta: 2.0,
            lambda_consistency: 1.0,
            lambda_fs: 0.1,
            r0: 2,
            delta: 0.0,
        }
    }
}

impl EansdlParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Domain(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Domain(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.lambda_consistency >= 0.0) {
            return Err(Error::Domain(format!(
                "lambda_consistency must be >= 0, got {}",
                self.lambda_consistency
            )));
        }
        if !(self.lambda_fs >= 0.0) {
            return Err(Error::Domain(format!("lambda_fs must be >= 0, got {}", self.lambda_fs)));
        }
        if self.r0 == 0 {
            return Err(Error::Domain("r0 must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Domain(format!("delta must be in [0, 1], got {}", self.delta)));
        }
        Ok(())
    }
}

/// The loss value and its sub-terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Mean of `exp(-dS) * dS` over all cells.
    pub local_term: f64,
    /// Mean of the neighborhood consistency term over all cells.
    pub consistency_term: f64,
    /// The attenuation factor applied to the sum.
    pub attenuation: f64,
    /// The neighborhood radius actually used at this level.
    pub radius_used: usize,
    /// `attenuation * (local_term + lambda_consistency * consistency_term)`.
    pub total: f64,
}

/// Time-varying attenuation `exp(-alpha * delta^beta)`.
pub fn attenuation(delta: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Domain(format!("delta must be in [0, 1], got {delta}")));
    }
    if !(alpha > 0.0) || !(beta > 0.0) {
        return Err(Error::Domain(format!("alpha and beta must be > 0, got {alpha}, {beta}")));
    }
    if delta == 0.0 {
        return Ok(1.0);
    }
    Ok(libm::exp(-alpha * libm::pow(delta, beta)))
}

/// Neighborhood radius at a pyramid level: `r0 / 2^level`, floored, never below 1.
pub fn level_radius(r0: usize, level: usize) -> usize {
    if level >= usize::BITS as usize {
        return 1;
    }
    (r0 >> level).max(1)
}

/// Elementwise `|magA - magB|`.
pub fn local_discrepancy(mag_a: &FeatureMap, mag_b: &FeatureMap) -> Result<FeatureMap> {
    mag_a.zip(mag_b, |a, b| (a - b).abs())
}

/// Elementwise `exp(-ds) * ds`; peaks at `ds = 1` so moderate discrepancies
/// dominate and very large ones are penalized less.
pub fn weighted_local(ds: &FeatureMap) -> Result<FeatureMap> {
    if let Some(&bad) = ds.data().iter().find(|&&v| v < 0.0) {
        return Err(Error::Domain(format!("weighted_local input must be >= 0, got {bad}")));
    }
    Ok(ds.map(|v| libm::exp(-v) * v))
}

/// Neighborhood gradient-consistency field at radius `r`.
///
/// With `d = magA - magB`, the value at a cell is the mean over the
/// `(2r+1)^2` window of `|d(center) - d(neighbor)|`, out-of-bounds neighbors
/// read via replicate padding. The normalization stays `(2r+1)^2` even at the
/// borders.
pub fn extended_consistency(mag_a: &FeatureMap, mag_b: &FeatureMap, r: usize) -> Result<FeatureMap> {
    mag_a.check_same_dims(mag_b)?;
    let dims = mag_a.dims();
    let (w, h) = (dims.width, dims.height);
    let spatial = dims.spatial();
    let norm = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut out = vec![0.0; dims.len()];
    let ri = r as isize;
    for bc in 0..dims.batch * dims.channels {
        let start = bc * spatial;
        let a = &mag_a.data()[start..start + spatial];
        let b = &mag_b.data()[start..start + spatial];
        let diff: Vec<f64> = a.iter().zip(b.iter()).map(|(&p, &q)| p - q).collect();
        let omega = &mut out[start..start + spatial];
        for x in 0..w {
            for y in 0..h {
                let center = diff[x * h + y];
                let mut sum = 0.0;
                for i in -ri..=ri {
                    let xx = grad::clamp_idx(x as isize + i, w);
                    for j in -ri..=ri {
                        let yy = grad::clamp_idx(y as isize + j, h);
                        sum += (center - diff[xx * h + yy]).abs();
                    }
                }
                omega[x * h + y] = sum / norm;
            }
        }
    }
    FeatureMap::from_vec(dims, out)
}

/// Full loss between two maps at one pyramid level.
pub fn eansdl(a: &FeatureMap, b: &FeatureMap, params: &EansdlParams, level: usize) -> Result<LossBreakdown> {
    params.validate()?;
    a.check_same_dims(b)?;
    let mag_a = sobel_filter(a).magnitude;
    let mag_b = sobel_filter(b).magnitude;
    let ds = local_discrepancy(&mag_a, &mag_b)?;
    let local = weighted_local(&ds)?;
    let radius = level_radius(params.r0, level);
    let omega = extended_consistency(&mag_a, &mag_b, radius)?;
    let att = attenuation(params.delta, params.alpha, params.beta)?;
    let local_term = local.mean();
    let consistency_term = omega.mean();
    Ok(LossBreakdown {
        local_term,
        consistency_term,
        attenuation: att,
        radius_used: radius,
        total: att * (local_term + params.lambda_consistency * consistency_term),
    })
}

/// Mean of the per-level losses over two matching pyramids; level `k` uses
/// radius `level_radius(r0, k)`.
pub fn eansdl_pyramid(pa: &FeaturePyramid, pb: &FeaturePyramid, params: &EansdlParams) -> Result<f64> {
    if pa.len() != pb.len() {
        return Err(Error::ShapeMismatch(format!(
            "pyramids have {} vs {} levels",
            pa.len(),
            pb.len()
        )));
    }
    let mut sum = 0.0;
    for (k, (a, b)) in pa.levels().iter().zip(pb.levels().iter()).enumerate() {
        sum += eansdl(a, b, params, k)?.total;
    }
    Ok(sum / pa.len() as f64)
}

/// Analytic gradient of `eansdl(a, b, params, level).total` with respect to `a`.
///
/// Subgradients of `|x|` and of `sqrt` at 0 are taken as 0, so the gradient at
/// `a == b` is exactly zero.
pub fn eansdl_backward(
    a: &FeatureMap,
    b: &FeatureMap,
    params: &EansdlParams,
    level: usize,
) -> Result<FeatureMap> {
    params.validate()?;
    a.check_same_dims(b)?;
    let dims = a.dims();
    let (w, h) = (dims.width, dims.height);
    let spatial = dims.spatial();
    let ga = sobel_filter(a);
    let gb = sobel_filter(b);
    let radius = level_radius(params.r0, level);
    let att = attenuation(params.delta, params.alpha, params.beta)?;
    let scale = att / dims.len() as f64;
    let norm = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let ri = radius as isize;

    let mut d_input = vec![0.0; dims.len()];
    let mut d_mag = vec![0.0; spatial];
    let mut d_gx = vec![0.0; spatial];
    let mut d_gy = vec![0.0; spatial];
    for bc in 0..dims.batch * dims.channels {
        let start = bc * spatial;
        let mag_a = &ga.magnitude.data()[start..start + spatial];
        let mag_b = &gb.magnitude.data()[start..start + spatial];
        let diff: Vec<f64> = mag_a.iter().zip(mag_b.iter()).map(|(&p, &q)| p - q).collect();

        // Local branch: d/d(magA) of exp(-|d|)*|d| is exp(-|d|)*(1-|d|)*sign(d).
        for (dm, &d) in d_mag.iter_mut().zip(diff.iter()) {
            let ds = d.abs();
            *dm = scale * libm::exp(-ds) * (1.0 - ds) * sign(d);
        }

        // Consistency branch: every window term |d(p) - d(q)| pushes +sign/K
        // onto its center and -sign/K onto the (clamped) neighbor.
        if params.lambda_consistency != 0.0 {
            let k = scale * params.lambda_consistency / norm;
            for x in 0..w {
                for y in 0..h {
                    let center = diff[x * h + y];
                    let mut center_acc = 0.0;
                    for i in -ri..=ri {
                        let xx = grad::clamp_idx(x as isize + i, w);
                        for j in -ri..=ri {
                            let yy = grad::clamp_idx(y as isize + j, h);
                            let s = sign(center - diff[xx * h + yy]);
                            center_acc += s;
                            d_mag[xx * h + yy] -= k * s;
                        }
                    }
                    d_mag[x * h + y] += k * center_acc;
                }
            }
        }

        // Magnitude back to directional gradients: d(mag)/d(gx) = gx / mag,
        // with the zero-magnitude subgradient set to 0.
        let gx = &ga.gx.data()[start..start + spatial];
        let gy = &ga.gy.data()[start..start + spatial];
        for idx in 0..spatial {
            let m = mag_a[idx];
            if m == 0.0 {
                d_gx[idx] = 0.0;
                d_gy[idx] = 0.0;
            } else {
                d_gx[idx] = d_mag[idx] * gx[idx] / m;
                d_gy[idx] = d_mag[idx] * gy[idx] / m;
            }
        }

        grad::sobel_adjoint_slice(&d_gx, &d_gy, w, h, &mut d_input[start..start + spatial]);
        d_mag.iter_mut().for_each(|v| *v = 0.0);
    }
    FeatureMap::from_vec(dims, d_input)
}

/// Central-difference gradient of the loss with respect to `a`; the
/// verification oracle for [`eansdl_backward`].
pub fn finite_diff_grad(
    a: &FeatureMap,
    b: &FeatureMap,
    params: &EansdlParams,
    level: usize,
    eps: f64,
) -> Result<FeatureMap> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be > 0, got {eps}")));
    }
    let dims = a.dims();
    let mut out = Vec::with_capacity(dims.len());
    let mut data = a.data().to_vec();
    for i in 0..dims.len() {
        let orig = data[i];
        data[i] = orig + eps;
        let plus = eansdl(&FeatureMap::from_vec(dims, data.clone())?, b, params, level)?.total;
        data[i] = orig - eps;
        let minus = eansdl(&FeatureMap::from_vec(dims, data.clone())?, b, params, level)?.total;
        data[i] = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    FeatureMap::from_vec(dims, out)
}

/// Marks the elements of `a` whose central difference at step `eps` is
/// guaranteed kink-free.
///
/// The loss is piecewise smooth: |.| kinks wherever a magnitude difference or
/// a window term crosses zero, plus a sqrt kink at zero magnitude. Finite
/// differences are only trustworthy where no kink lies inside the probe
/// interval. A single input element moves a Sobel gradient by at most 4*eps
/// per axis (replicate padding can stack taps at the border), hence a
/// magnitude by at most sqrt(32)*eps < 6*eps. Small magnitudes are risky even
/// without a sign change: sqrt curvature grows like 1/magnitude^2 and bloats
/// the truncation error, so the magnitude margin uses a larger factor (both
/// effects scale linearly in eps). A cell is risky when its magnitude, its
/// magnitude difference, or any non-degenerate window term it enters is
/// within the relevant margin; an element is certified when no cell in its
/// 3x3 influence zone is risky.
pub fn smoothness_mask(
    a: &FeatureMap,
    b: &FeatureMap,
    params: &EansdlParams,
    level: usize,
    eps: f64,
) -> Result<Vec<bool>> {
    params.validate()?;
    a.check_same_dims(b)?;
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be > 0, got {eps}")));
    }
    let dims = a.dims();
    let (w, h) = (dims.width, dims.height);
    let spatial = dims.spatial();
    let mag_margin = 6.0 * eps;
    let ga = sobel_filter(a);
    let gb = sobel_filter(b);
    let ri = level_radius(params.r0, level) as isize;
    let mut certified = vec![false; dims.len()];
    for bc in 0..dims.batch * dims.channels {
        let start = bc * spatial;
        let mag_a = &ga.magnitude.data()[start..start + spatial];
        let mag_b = &gb.magnitude.data()[start..start + spatial];
        let d: Vec<f64> = mag_a.iter().zip(mag_b.iter()).map(|(&p, &q)| p - q).collect();
        let mut risky = vec![false; spatial];
        for idx in 0..spatial {
            if mag_a[idx] <= 120.0 * eps || d[idx].abs() <= 2.0 * mag_margin {
                risky[idx] = true;
            }
        }
        if params.lambda_consistency != 0.0 {
            for x in 0..w {
                for y in 0..h {
                    let q = x * h + y;
                    for i in -ri..=ri {
                        let xx = grad::clamp_idx(x as isize + i, w);
                        for j in -ri..=ri {
                            let yy = grad::clamp_idx(y as isize + j, h);
                            let n = xx * h + yy;
                            // A clamped self-pair is identically zero and
                            // stays smooth; anything else must clear twice
                            // the single-cell margin since both ends move.
                            if n != q && (d[q] - d[n]).abs() <= 4.0 * mag_margin {
                                risky[q] = true;
                                risky[n] = true;
                            }
                        }
                    }
                }
            }
        }
        for x in 0..w {
            for y in 0..h {
                let mut ok = true;
                'scan: for i in -1isize..=1 {
                    let xx = grad::clamp_idx(x as isize + i, w);
                    for j in -1isize..=1 {
                        if risky[xx * h + grad::clamp_idx(y as isize + j, h)] {
                            ok = false;
                            break 'scan;
                        }
                    }
                }
                certified[start + x * h + y] = ok;
            }
        }
    }
    Ok(certified)
}

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Worst relative error over certified elements, measured against the
    /// larger of the two values or the gradient's own scale (so elements
    /// whose gradient happens to be tiny don't amplify truncation noise).
    pub max_rel_error: f64,
    /// Certified elements actually compared.
    pub checked: usize,
    /// Elements skipped as too close to a kink for this probe size.
    pub skipped: usize,
}

/// Compares [`eansdl_backward`] against [`finite_diff_grad`] at the smooth
/// points of one map pair.
pub fn gradient_check(
    a: &FeatureMap,
    b: &FeatureMap,
    params: &EansdlParams,
    level: usize,
    eps: f64,
) -> Result<GradCheck> {
    let analytic = eansdl_backward(a, b, params, level)?;
    let fd = finite_diff_grad(a, b, params, level, eps)?;
    let mask = smoothness_mask(a, b, params, level, eps)?;
    let scale = fd.data().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let mut out = GradCheck { max_rel_error: 0.0, checked: 0, skipped: 0 };
    for (i, &ok) in mask.iter().enumerate() {
        if !ok {
            out.skipped += 1;
            continue;
        }
        let (an, f) = (analytic.data()[i], fd.data()[i]);
        let rel = (an - f).abs() / an.abs().max(f.abs()).max(scale);
        out.max_rel_error = out.max_rel_error.max(rel);
        out.checked += 1;
    }
    Ok(out)
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::tensor::Dims;

    fn random_map(dims: Dims, rng: &mut SplitMix64) -> FeatureMap {
        FeatureMap::from_fn(dims, |_, _, _, _| rng.uniform(-1.0, 1.0)).unwrap()
    }

    #[test]
    fn attenuation_anchors() {
        assert_eq!(attenuation(0.0, 3.0, 2.0).unwrap(), 1.0);
        assert!((attenuation(0.5, 3.0, 2.0).unwrap() - 0.4723665527410147).abs() < 1e-12);
        assert!((attenuation(1.0, 3.0, 2.0).unwrap() - 0.049787068367863944).abs() < 1e-12);
        assert!(attenuation(1.5, 3.0, 2.0).is_err());
        assert!(attenuation(-0.1, 3.0, 2.0).is_err());
    }

    #[test]
    fn attenuation_strictly_decreasing() {
        let mut prev = attenuation(0.0, 3.0, 2.0).unwrap();
        for i in 1..=20 {
            let d = i as f64 / 20.0;
            let a = attenuation(d, 3.0, 2.0).unwrap();
            assert!(a < prev, "not decreasing at delta={d}");
            prev = a;
        }
    }

    #[test]
    fn radius_schedule() {
        assert_eq!(level_radius(8, 0), 8);
        assert_eq!(level_radius(8, 1), 4);
        assert_eq!(level_radius(8, 2), 2);
        assert_eq!(level_radius(8, 3), 1);
        assert_eq!(level_radius(8, 5), 1);
        assert_eq!(level_radius(8, 500), 1);
        assert_eq!(level_radius(5, 1), 2);
    }

    #[test]
    fn weighted_local_anchors() {
        let one = FeatureMap::new(Dims::new(1, 1, 1, 1), 1.0).unwrap();
        let w = weighted_local(&one).unwrap();
        assert!((w.data()[0] - 0.36787944117144233).abs() < 1e-12);
        let two = FeatureMap::new(Dims::new(1, 1, 1, 1), 2.0).unwrap();
        let w2 = weighted_local(&two).unwrap();
        assert!((w2.data()[0] - 0.2706705664732254).abs() < 1e-12);
        assert!(w2.data()[0] < w.data()[0]);
        let zero = FeatureMap::new(Dims::new(1, 1, 1, 1), 0.0).unwrap();
        assert_eq!(weighted_local(&zero).unwrap().data()[0], 0.0);
        let neg = FeatureMap::new(Dims::new(1, 1, 1, 1), -0.5).unwrap();
        assert!(weighted_local(&neg).is_err());
    }

    #[test]
    fn local_discrepancy_symmetric() {
        let mut rng = SplitMix64::new(3);
        let a = random_map(Dims::new(1, 2, 4, 4), &mut rng);
        let b = random_map(Dims::new(1, 2, 4, 4), &mut rng);
        let ab = local_discrepancy(&a, &b).unwrap();
        let ba = local_discrepancy(&b, &a).unwrap();
        assert_eq!(ab, ba);
        let aa = local_discrepancy(&a, &a).unwrap();
        assert!(aa.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn consistency_radius_zero_is_zero() {
        let mut rng = SplitMix64::new(4);
        let a = random_map(Dims::new(2, 1, 5, 5), &mut rng);
        let b = random_map(Dims::new(2, 1, 5, 5), &mut rng);
        let omega = extended_consistency(&a, &b, 0).unwrap();
        assert!(omega.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn consistency_delta_spike() {
        let mut a = vec![0.0; 9];
        a[1 * 3 + 1] = 1.0;
        let a = FeatureMap::from_vec(Dims::new(1, 1, 3, 3), a).unwrap();
        let b = FeatureMap::new(Dims::new(1, 1, 3, 3), 0.0).unwrap();
        let omega = extended_consistency(&a, &b, 1).unwrap();
        assert!((omega.get(0, 0, 1, 1) - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn identical_inputs_give_exact_zero() {
        let mut rng = SplitMix64::new(5);
        let a = random_map(Dims::new(2, 3, 7, 6), &mut rng);
        let bd = eansdl(&a, &a, &EansdlParams::default(), 0).unwrap();
        assert_eq!(bd.total, 0.0);
        assert_eq!(bd.local_term, 0.0);
        assert_eq!(bd.consistency_term, 0.0);
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = SplitMix64::new(6);
        let a = random_map(Dims::new(1, 2, 6, 6), &mut rng);
        let b = random_map(Dims::new(1, 2, 6, 6), &mut rng);
        let p = EansdlParams { delta: 0.3, ..Default::default() };
        let ab = eansdl(&a, &b, &p, 1).unwrap();
        let ba = eansdl(&b, &a, &p, 1).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn breakdown_consistent_and_bounded() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..10 {
            let a = random_map(Dims::new(1, 2, 6, 5), &mut rng);
            let b = random_map(Dims::new(1, 2, 6, 5), &mut rng);
            let p = EansdlParams { delta: rng.next_f64(), ..Default::default() };
            let bd = eansdl(&a, &b, &p, 0).unwrap();
            assert!(bd.local_term >= 0.0);
            assert!(bd.local_term <= (-1.0f64).exp() + 1e-15);
            assert!(bd.consistency_term >= 0.0);
            assert!(bd.total >= 0.0);
            let recomputed =
                bd.attenuation * (bd.local_term + p.lambda_consistency * bd.consistency_term);
            assert_eq!(bd.total, recomputed);
        }
    }

    #[test]
    fn pyramid_of_one_level_matches_single() {
        let mut rng = SplitMix64::new(8);
        let a = random_map(Dims::new(1, 2, 8, 8), &mut rng);
        let b = random_map(Dims::new(1, 2, 8, 8), &mut rng);
        let p = EansdlParams::default();
        let single = eansdl(&a, &b, &p, 0).unwrap().total;
        let pa = FeaturePyramid::new(vec![a]).unwrap();
        let pb = FeaturePyramid::new(vec![b]).unwrap();
        assert_eq!(eansdl_pyramid(&pa, &pb, &p).unwrap(), single);
    }

    #[test]
    fn pyramid_is_mean_of_levels() {
        let mut rng = SplitMix64::new(9);
        let p = EansdlParams { r0: 4, ..Default::default() };
        let a0 = random_map(Dims::new(1, 2, 8, 8), &mut rng);
        let b0 = random_map(Dims::new(1, 2, 8, 8), &mut rng);
        let a1 = random_map(Dims::new(1, 2, 4, 4), &mut rng);
        let b1 = random_map(Dims::new(1, 2, 4, 4), &mut rng);
        let l0 = eansdl(&a0, &b0, &p, 0).unwrap().total;
        let l1 = eansdl(&a1, &b1, &p, 1).unwrap().total;
        let pa = FeaturePyramid::new(vec![a0, a1]).unwrap();
        let pb = FeaturePyramid::new(vec![b0, b1]).unwrap();
        let total = eansdl_pyramid(&pa, &pb, &p).unwrap();
        assert!((total - (l0 + l1) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn pyramid_level_count_mismatch() {
        let a = FeatureMap::new(Dims::new(1, 1, 4, 4), 0.0).unwrap();
        let pa = FeaturePyramid::new(vec![a.clone(), a.clone()]).unwrap();
        let pb = FeaturePyramid::new(vec![a]).unwrap();
        assert!(eansdl_pyramid(&pa, &pb, &EansdlParams::default()).is_err());
    }

    #[test]
    fn backward_zero_at_minimum() {
        let mut rng = SplitMix64::new(10);
        let a = random_map(Dims::new(1, 2, 5, 5), &mut rng);
        let g = eansdl_backward(&a, &a, &EansdlParams::default(), 0).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_linear_in_attenuation() {
        // With the consistency weight off, scaling the attenuation scales the
        // gradient by the same factor.
        let mut rng = SplitMix64::new(12);
        let a = random_map(Dims::new(1, 1, 6, 6), &mut rng);
        let b = random_map(Dims::new(1, 1, 6, 6), &mut rng);
        let p0 = EansdlParams { lambda_consistency: 0.0, delta: 0.0, ..Default::default() };
        // alpha=ln(2), beta=1, delta=1 gives attenuation exactly 0.5.
        let p1 = EansdlParams {
            lambda_consistency: 0.0,
            alpha: core::f64::consts::LN_2,
            beta: 1.0,
            delta: 1.0,
            ..Default::default()
        };
        let g0 = eansdl_backward(&a, &b, &p0, 0).unwrap();
        let g1 = eansdl_backward(&a, &b, &p1, 0).unwrap();
        for (x, y) in g0.data().iter().zip(g1.data().iter()) {
            assert!((x * 0.5 - y).abs() < 1e-15, "{x} vs {y}");
        }
    }

    #[test]
    fn finite_diff_near_zero_at_minimum() {
        let mut rng = SplitMix64::new(13);
        let a = random_map(Dims::new(1, 1, 4, 4), &mut rng);
        // The loss has |.| kinks at its minimum, so central differences there
        // are first-order in eps rather than vanishing: the bound scales with
        // the step.
        for eps in [1e-3, 1e-5, 1e-7] {
            let g = finite_diff_grad(&a, &a, &EansdlParams::default(), 0, eps).unwrap();
            let max = g.data().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            assert!(max <= 10.0 * eps, "eps {eps:e}: max {max:e}");
        }
        let g = finite_diff_grad(&a, &a, &EansdlParams::default(), 0, 1e-7).unwrap();
        assert!(g.data().iter().all(|&v| v.abs() <= 1e-6));
    }

    #[test]
    fn rejects_bad_params() {
        let a = FeatureMap::new(Dims::new(1, 1, 4, 4), 0.0).unwrap();
        let p = EansdlParams { alpha: -1.0, ..Default::default() };
        assert!(eansdl(&a, &a, &p, 0).is_err());
        let p = EansdlParams { delta: 2.0, ..Default::default() };
        assert!(eansdl(&a, &a, &p, 0).is_err());
        let b = FeatureMap::new(Dims::new(1, 1, 4, 5), 0.0).unwrap();
        assert!(eansdl(&a, &b, &EansdlParams::default(), 0).is_err());
    }
}
