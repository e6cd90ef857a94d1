//! Sobel directional gradients and gradient magnitude.
//!
//! The sliding operation is a correlation (no kernel flip); both Sobel kernels
//! are antisymmetric, so relative to flipped convolution only the signs of
//! `gx`/`gy` change, never the magnitude. Borders use replicate padding:
//! out-of-bounds taps read the nearest edge element. `gx` responds to
//! variation along the width (x) axis, `gy` along the height (y) axis.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::FeatureMap;

/// Per-channel directional gradients and their magnitude, same dims as the input.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub gx: FeatureMap,
    pub gy: FeatureMap,
    pub magnitude: FeatureMap,
}

// Separable Sobel factors: difference along the gradient axis, smoothing
// across it. Index 0..=2 corresponds to offset -1..=1.
const DIFF: [f64; 3] = [-1.0, 0.0, 1.0];
const SMOOTH: [f64; 3] = [1.0, 2.0, 1.0];

/// Sobel gradients of every `(batch, channel)` slice independently.
pub fn sobel_filter(map: &FeatureMap) -> GradientField {
    let dims = map.dims();
    let (w, h) = (dims.width, dims.height);
    let mut gx = vec![0.0; dims.len()];
    let mut gy = vec![0.0; dims.len()];
    let spatial = dims.spatial();
    for bc in 0..dims.batch * dims.channels {
        let start = bc * spatial;
        let input = &map.data()[start..start + spatial];
        sobel_slice(input, w, h, &mut gx[start..start + spatial], &mut gy[start..start + spatial]);
    }
    let magnitude: Vec<f64> = gx
        .iter()
        .zip(gy.iter())
        .map(|(&a, &b)| libm::sqrt(a * a + b * b))
        .collect();
    GradientField {
        gx: FeatureMap::from_vec(dims, gx).expect("gx shape matches input"),
        gy: FeatureMap::from_vec(dims, gy).expect("gy shape matches input"),
        magnitude: FeatureMap::from_vec(dims, magnitude).expect("magnitude shape matches input"),
    }
}

/// One W x H slice (x-major layout), writing gx/gy in place.
pub(crate) fn sobel_slice(input: &[f64], w: usize, h: usize, gx: &mut [f64], gy: &mut [f64]) {
    for x in 0..w {
        for y in 0..h {
            let mut sx = 0.0;
            let mut sy = 0.0;
            for (di, (&dw, &sm_x)) in DIFF.iter().zip(SMOOTH.iter()).enumerate() {
                let xx = clamp_idx(x as isize + di as isize - 1, w);
                for (dj, (&dh, &sm_y)) in DIFF.iter().zip(SMOOTH.iter()).enumerate() {
                    let yy = clamp_idx(y as isize + dj as isize - 1, h);
                    let v = input[xx * h + yy];
                    sx += dw * sm_y * v;
                    sy += sm_x * dh * v;
                }
            }
            gx[x * h + y] = sx;
            gy[x * h + y] = sy;
        }
    }
}

/// Adjoint of [`sobel_slice`]: scatters cotangents of (gx, gy) back onto the
/// input, honoring the replicate-padding clamp. Accumulates into `d_input`.
pub(crate) fn sobel_adjoint_slice(
    d_gx: &[f64],
    d_gy: &[f64],
    w: usize,
    h: usize,
    d_input: &mut [f64],
) {
    for x in 0..w {
        for y in 0..h {
            let cx = d_gx[x * h + y];
            let cy = d_gy[x * h + y];
            if cx == 0.0 && cy == 0.0 {
                continue;
            }
            for (di, (&dw, &sm_x)) in DIFF.iter().zip(SMOOTH.iter()).enumerate() {
                let xx = clamp_idx(x as isize + di as isize - 1, w);
                for (dj, (&dh, &sm_y)) in DIFF.iter().zip(SMOOTH.iter()).enumerate() {
                    let yy = clamp_idx(y as isize + dj as isize - 1, h);
                    d_input[xx * h + yy] += dw * sm_y * cx + sm_x * dh * cy;
                }
            }
        }
    }
}

#[inline]
pub(crate) fn clamp_idx(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn constant_map_has_zero_gradients() {
        let m = FeatureMap::new(Dims::new(1, 2, 5, 5), 3.0).unwrap();
        let g = sobel_filter(&m);
        assert!(g.gx.data().iter().all(|&v| v == 0.0));
        assert!(g.gy.data().iter().all(|&v| v == 0.0));
        assert!(g.magnitude.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_along_x() {
        // f(x, y) = x: interior gx is the full correlation sum 8, gy is 0.
        let m = FeatureMap::from_fn(Dims::new(1, 1, 5, 5), |_, _, x, _| x as f64).unwrap();
        let g = sobel_filter(&m);
        for x in 1..4 {
            for y in 1..4 {
                assert_eq!(g.gx.get(0, 0, x, y), 8.0);
                assert_eq!(g.gy.get(0, 0, x, y), 0.0);
                assert_eq!(g.magnitude.get(0, 0, x, y), 8.0);
            }
        }
    }

    #[test]
    fn ramp_along_y() {
        let m = FeatureMap::from_fn(Dims::new(1, 1, 5, 5), |_, _, _, y| y as f64).unwrap();
        let g = sobel_filter(&m);
        for x in 1..4 {
            for y in 1..4 {
                assert_eq!(g.gy.get(0, 0, x, y), 8.0);
                assert_eq!(g.gx.get(0, 0, x, y), 0.0);
            }
        }
    }

    #[test]
    fn sign_flip() {
        let m = FeatureMap::from_fn(Dims::new(1, 1, 6, 4), |_, _, x, y| {
            libm::sin(x as f64 * 0.7 + y as f64 * 1.3)
        })
        .unwrap();
        let neg = m.map(|v| -v);
        let g = sobel_filter(&m);
        let gn = sobel_filter(&neg);
        for i in 0..m.dims().len() {
            assert_eq!(gn.gx.data()[i], -g.gx.data()[i]);
            assert_eq!(gn.gy.data()[i], -g.gy.data()[i]);
            assert_eq!(gn.magnitude.data()[i], g.magnitude.data()[i]);
        }
    }

    #[test]
    fn transpose_swaps_axes() {
        let dims = Dims::new(1, 1, 5, 7);
        let m = FeatureMap::from_fn(dims, |_, _, x, y| {
            libm::cos(x as f64 * 0.9) * libm::sin(y as f64 * 0.4) + x as f64 * 0.1
        })
        .unwrap();
        let t = FeatureMap::from_fn(Dims::new(1, 1, 7, 5), |_, _, x, y| m.get(0, 0, y, x)).unwrap();
        let g = sobel_filter(&m);
        let gt = sobel_filter(&t);
        for x in 0..5 {
            for y in 0..7 {
                assert!((gt.gx.get(0, 0, y, x) - g.gy.get(0, 0, x, y)).abs() < 1e-12);
                assert!((gt.gy.get(0, 0, y, x) - g.gx.get(0, 0, x, y)).abs() < 1e-12);
                assert!((gt.magnitude.get(0, 0, y, x) - g.magnitude.get(0, 0, x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn replicate_ring_matches_interior() {
        // Extending the map by one replicated ring makes the extended map's
        // interior gradients equal the original's full output.
        let dims = Dims::new(1, 1, 4, 5);
        let m = FeatureMap::from_fn(dims, |_, _, x, y| {
            (x * x) as f64 * 0.3 - (y as f64) * 1.1 + libm::sin((x + 2 * y) as f64)
        })
        .unwrap();
        let ext = FeatureMap::from_fn(Dims::new(1, 1, 6, 7), |_, _, x, y| {
            let xi = clamp_idx(x as isize - 1, 4);
            let yi = clamp_idx(y as isize - 1, 5);
            m.get(0, 0, xi, yi)
        })
        .unwrap();
        let g = sobel_filter(&m);
        let ge = sobel_filter(&ext);
        for x in 0..4 {
            for y in 0..5 {
                assert!((ge.gx.get(0, 0, x + 1, y + 1) - g.gx.get(0, 0, x, y)).abs() < 1e-12);
                assert!((ge.gy.get(0, 0, x + 1, y + 1) - g.gy.get(0, 0, x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_is_transpose_of_forward() {
        // <S u, v> == <u, S^T v> for random u, v.
        let (w, h) = (6, 5);
        let mut rng = crate::rng::SplitMix64::new(11);
        let u: alloc::vec::Vec<f64> = (0..w * h).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let vx: alloc::vec::Vec<f64> = (0..w * h).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let vy: alloc::vec::Vec<f64> = (0..w * h).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        sobel_slice(&u, w, h, &mut gx, &mut gy);
        let forward: f64 = gx.iter().zip(&vx).map(|(a, b)| a * b).sum::<f64>()
            + gy.iter().zip(&vy).map(|(a, b)| a * b).sum::<f64>();
        let mut adj = vec![0.0; w * h];
        sobel_adjoint_slice(&vx, &vy, w, h, &mut adj);
        let transposed: f64 = adj.iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!((forward - transposed).abs() < 1e-10, "{forward} vs {transposed}");
    }
}
