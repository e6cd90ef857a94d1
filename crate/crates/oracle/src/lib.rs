//! Naive reference implementations of the structural discrepancy loss.
//!
//! Everything here is written as literal direct summation against the
//! definitions, with its own Sobel taps and neighborhood loops. It shares no
//! code with the optimized kernels in `fctl-core` beyond the `FeatureMap`
//! accessors, and it is deliberately slow. Tests freeze expected values from
//! this crate; it must never be used on the implementation path.

use fctl_core::eansdl::EansdlParams;
use fctl_core::tensor::FeatureMap;

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

fn clamp(i: isize, len: usize) -> usize {
    i.max(0).min(len as isize - 1) as usize
}

/// Gradient magnitude of one (batch, channel) slice at one cell, replicate
/// padding, by explicit 3x3 correlation. The kernel row of `SOBEL_X` steps
/// along y so that gx differentiates along the width axis.
fn magnitude_at(map: &FeatureMap, b: usize, c: usize, x: usize, y: usize) -> f64 {
    let (w, h) = (map.dims().width, map.dims().height);
    let mut gx = 0.0;
    let mut gy = 0.0;
    for i in 0..3usize {
        for j in 0..3usize {
            let xx = clamp(x as isize + i as isize - 1, w);
            let yy = clamp(y as isize + j as isize - 1, h);
            let v = map.get(b, c, xx, yy);
            // Kernels are written [row][col] with the row as the y offset, so
            // SOBEL_X's +-1/+-2 column runs along the x offset.
            gx += SOBEL_X[j][i] * v;
            gy += SOBEL_Y[j][i] * v;
        }
    }
    (gx * gx + gy * gy).sqrt()
}

/// Sobel gradient magnitude of a whole map, one call to `magnitude_at` per
/// cell.
pub fn naive_magnitude(map: &FeatureMap) -> FeatureMap {
    FeatureMap::from_fn(map.dims(), |b, c, x, y| magnitude_at(map, b, c, x, y)).unwrap()
}

/// Per-cell neighborhood consistency field at an explicit radius, quadruple
/// loop over the window with replicate clamping, normalized by (2r+1)^2.
pub fn naive_consistency(a: &FeatureMap, b: &FeatureMap, r: usize) -> FeatureMap {
    let dims = a.dims();
    assert_eq!(dims, b.dims(), "oracle expects matching shapes");
    let (w, h) = (dims.width, dims.height);
    let ri = r as isize;
    FeatureMap::from_fn(dims, |bi, ci, x, y| {
        let mut omega = 0.0;
        for i in -ri..=ri {
            for j in -ri..=ri {
                let xx = clamp(x as isize + i, w);
                let yy = clamp(y as isize + j, h);
                let da = magnitude_at(a, bi, ci, x, y) - magnitude_at(a, bi, ci, xx, yy);
                let db = magnitude_at(b, bi, ci, x, y) - magnitude_at(b, bi, ci, xx, yy);
                omega += (da - db).abs();
            }
        }
        omega / ((2 * r + 1) * (2 * r + 1)) as f64
    })
    .unwrap()
}

fn radius(r0: usize, level: usize) -> usize {
    let mut r = r0;
    for _ in 0..level {
        r /= 2;
    }
    r.max(1)
}

/// Direct-summation loss value: attenuation times the mean over batch,
/// channels, and grid of `exp(-dS)*dS + lambda * Omega`, with every term
/// evaluated by literal loops.
pub fn naive_eansdl(a: &FeatureMap, b: &FeatureMap, params: &EansdlParams, level: usize) -> f64 {
    let dims = a.dims();
    assert_eq!(dims, b.dims(), "oracle expects matching shapes");
    let (w, h) = (dims.width, dims.height);
    let r = radius(params.r0, level) as isize;
    let att = (-params.alpha * params.delta.powf(params.beta)).exp();
    let mut sum = 0.0;
    for bi in 0..dims.batch {
        for ci in 0..dims.channels {
            for x in 0..w {
                for y in 0..h {
                    let ds = (magnitude_at(a, bi, ci, x, y) - magnitude_at(b, bi, ci, x, y)).abs();
                    let mut omega = 0.0;
                    for i in -r..=r {
                        for j in -r..=r {
                            let xx = clamp(x as isize + i, w);
                            let yy = clamp(y as isize + j, h);
                            let da = magnitude_at(a, bi, ci, x, y) - magnitude_at(a, bi, ci, xx, yy);
                            let db = magnitude_at(b, bi, ci, x, y) - magnitude_at(b, bi, ci, xx, yy);
                            omega += (da - db).abs();
                        }
                    }
                    omega /= ((2 * r + 1) * (2 * r + 1)) as f64;
                    sum += (-ds).exp() * ds + params.lambda_consistency * omega;
                }
            }
        }
    }
    att * sum / dims.len() as f64
}
