//! A small convolutional backbone with a three-level feature pyramid and a
//! dense objectness head, forward and reverse passes written by hand.
//!
//! Architecture (input `S x S` RGB, `S` in {64, 128}):
//!
//! | name    | kind       | shape        | stride | activation |
//! |---------|------------|--------------|--------|------------|
//! | stem    | conv 3x3   | 3 -> 8       | 1      | leaky 0.1  |
//! | down1   | conv 3x3   | 8 -> 8       | 2      | leaky 0.1  |
//! | down2   | conv 3x3   | 8 -> 16     | 2      | leaky 0.1  |
//! | lateral | conv 1x1   | {8,8,16} -> 8 | 1    | linear     |
//! | head    | conv 1x1   | 8 -> 1       | 1      | linear     |
//!
//! Pyramid level `k` has spatial dims `S / 2^k` and 8 channels. The backward
//! pass accepts an optional extra pyramid cotangent so a feature-similarity
//! gradient can be injected at the pyramid nodes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::ImageRGB;
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{Dims, FeatureMap, FeaturePyramid};

pub const LEVELS: usize = 3;
pub const PYRAMID_CHANNELS: usize = 8;
const LEAKY_SLOPE: f64 = 0.1;
/// Loss weight on mask-positive cells.
pub const POSITIVE_WEIGHT: f64 = 10.0;

/// One convolution layer. Weight layout: `[out][in][kx][ky]`, flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub stride: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv {
    fn zeros(in_ch: usize, out_ch: usize, ksize: usize, stride: usize) -> Self {
        Conv {
            in_ch,
            out_ch,
            ksize,
            stride,
            weights: vec![0.0; out_ch * in_ch * ksize * ksize],
            bias: vec![0.0; out_ch],
        }
    }

    fn init(in_ch: usize, out_ch: usize, ksize: usize, stride: usize, rng: &mut SplitMix64) -> Self {
        let mut conv = Conv::zeros(in_ch, out_ch, ksize, stride);
        let fan_in = (in_ch * ksize * ksize) as f64;
        let fan_out = (out_ch * ksize * ksize) as f64;
        let bound = libm::sqrt(6.0 / (fan_in + fan_out));
        for w in conv.weights.iter_mut() {
            *w = rng.uniform(-bound, bound);
        }
        conv
    }

    fn pad(&self) -> usize {
        self.ksize / 2
    }

    fn out_spatial(&self, w: usize, h: usize) -> (usize, usize) {
        let p = self.pad();
        (
            (w + 2 * p - self.ksize) / self.stride + 1,
            (h + 2 * p - self.ksize) / self.stride + 1,
        )
    }

    /// Zero-padded correlation over a `(1, in_ch, W, H)` map.
    fn forward(&self, input: &FeatureMap) -> FeatureMap {
        let d = input.dims();
        debug_assert_eq!(d.channels, self.in_ch);
        let (w2, h2) = self.out_spatial(d.width, d.height);
        let (w, h) = (d.width, d.height);
        let pad = self.pad() as isize;
        let data_in = input.data();
        let mut out = vec![0.0; self.out_ch * w2 * h2];
        for o in 0..self.out_ch {
            let plane = &mut out[o * w2 * h2..(o + 1) * w2 * h2];
            for v in plane.iter_mut() {
                *v = self.bias[o];
            }
            for i in 0..self.in_ch {
                let in_plane = &data_in[i * w * h..(i + 1) * w * h];
                for kx in 0..self.ksize {
                    for ky in 0..self.ksize {
                        let wgt = self.weights
                            [((o * self.in_ch + i) * self.ksize + kx) * self.ksize + ky];
                        if wgt == 0.0 {
                            continue;
                        }
                        for x2 in 0..w2 {
                            let xi = (x2 * self.stride) as isize + kx as isize - pad;
                            if xi < 0 || xi >= w as isize {
                                continue;
                            }
                            let row_in = &in_plane[xi as usize * h..(xi as usize + 1) * h];
                            let row_out = &mut plane[x2 * h2..(x2 + 1) * h2];
                            let ky_off = ky as isize - pad;
                            for (y2, out_v) in row_out.iter_mut().enumerate() {
                                let yi = (y2 * self.stride) as isize + ky_off;
                                if yi >= 0 && yi < h as isize {
                                    *out_v += wgt * row_in[yi as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        FeatureMap::from_vec(Dims::new(1, self.out_ch, w2, h2), out)
            .expect("conv output shape is consistent")
    }

    /// Reverse pass: given the cached input and the output cotangent, returns
    /// (weight grads, bias grads, input cotangent).
    fn backward(&self, input: &FeatureMap, d_out: &FeatureMap) -> (Vec<f64>, Vec<f64>, FeatureMap) {
        let d = input.dims();
        let (w, h) = (d.width, d.height);
        let od = d_out.dims();
        let (w2, h2) = (od.width, od.height);
        let pad = self.pad() as isize;
        let data_in = input.data();
        let data_dout = d_out.data();
        let mut d_w = vec![0.0; self.weights.len()];
        let mut d_b = vec![0.0; self.bias.len()];
        let mut d_in = vec![0.0; data_in.len()];
        for o in 0..self.out_ch {
            let dout_plane = &data_dout[o * w2 * h2..(o + 1) * w2 * h2];
            d_b[o] += dout_plane.iter().sum::<f64>();
            for i in 0..self.in_ch {
                let in_plane = &data_in[i * w * h..(i + 1) * w * h];
                let din_plane = &mut d_in[i * w * h..(i + 1) * w * h];
                for kx in 0..self.ksize {
                    for ky in 0..self.ksize {
                        let widx = ((o * self.in_ch + i) * self.ksize + kx) * self.ksize + ky;
                        let wgt = self.weights[widx];
                        let mut acc = 0.0;
                        let ky_off = ky as isize - pad;
                        for x2 in 0..w2 {
                            let xi = (x2 * self.stride) as isize + kx as isize - pad;
                            if xi < 0 || xi >= w as isize {
                                continue;
                            }
                            let row_in = &in_plane[xi as usize * h..(xi as usize + 1) * h];
                            let row_din = &mut din_plane[xi as usize * h..(xi as usize + 1) * h];
                            let row_dout = &dout_plane[x2 * h2..(x2 + 1) * h2];
                            for (y2, &g) in row_dout.iter().enumerate() {
                                let yi = (y2 * self.stride) as isize + ky_off;
                                if yi >= 0 && yi < h as isize {
                                    acc += g * row_in[yi as usize];
                                    row_din[yi as usize] += wgt * g;
                                }
                            }
                        }
                        d_w[widx] += acc;
                    }
                }
            }
        }
        let d_input = FeatureMap::from_vec(d, d_in).expect("input grad shape matches input");
        (d_w, d_b, d_input)
    }
}

/// All trainable tensors. The same struct doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNetParams {
    pub stem: Conv,
    pub down1: Conv,
    pub down2: Conv,
    pub lateral: [Conv; LEVELS],
    pub head: [Conv; LEVELS],
}

/// Head bias init: logit of the weighted positive prior (~1.4% of cells after
/// the x10 positive weighting). Starting the heads near the background
/// operating point keeps the sea of negatives from swamping the few positive
/// gradients in a short training run.
const HEAD_BIAS_INIT: f64 = -3.8;

impl ToyNetParams {
    /// Seeded uniform init in +-sqrt(6 / (fan_in + fan_out)); biases zero
    /// except the heads, which start at the background prior.
    pub fn init(seed: u64) -> Self {
        let mut streams = (0..9u64).map(|i| SplitMix64::new(derive_seed(seed, i)));
        let mut next = move || streams.next().expect("stream count matches layer count");
        let mut params = ToyNetParams {
            stem: Conv::init(3, 8, 3, 1, &mut next()),
            down1: Conv::init(8, 8, 3, 2, &mut next()),
            down2: Conv::init(8, 16, 3, 2, &mut next()),
            lateral: [
                Conv::init(8, PYRAMID_CHANNELS, 1, 1, &mut next()),
                Conv::init(8, PYRAMID_CHANNELS, 1, 1, &mut next()),
                Conv::init(16, PYRAMID_CHANNELS, 1, 1, &mut next()),
            ],
            head: [
                Conv::init(PYRAMID_CHANNELS, 1, 1, 1, &mut next()),
                Conv::init(PYRAMID_CHANNELS, 1, 1, 1, &mut next()),
                Conv::init(PYRAMID_CHANNELS, 1, 1, 1, &mut next()),
            ],
        };
        for h in params.head.iter_mut() {
            h.bias[0] = HEAD_BIAS_INIT;
        }
        params
    }

    pub fn zeros_like(&self) -> Self {
        let z = |c: &Conv| Conv::zeros(c.in_ch, c.out_ch, c.ksize, c.stride);
        ToyNetParams {
            stem: z(&self.stem),
            down1: z(&self.down1),
            down2: z(&self.down2),
            lateral: [z(&self.lateral[0]), z(&self.lateral[1]), z(&self.lateral[2])],
            head: [z(&self.head[0]), z(&self.head[1]), z(&self.head[2])],
        }
    }

    fn convs(&self) -> [&Conv; 9] {
        [
            &self.stem,
            &self.down1,
            &self.down2,
            &self.lateral[0],
            &self.lateral[1],
            &self.lateral[2],
            &self.head[0],
            &self.head[1],
            &self.head[2],
        ]
    }

    fn convs_mut(&mut self) -> [&mut Conv; 9] {
        let ToyNetParams { stem, down1, down2, lateral, head } = self;
        let [l0, l1, l2] = lateral.each_mut();
        let [h0, h1, h2] = head.each_mut();
        [stem, down1, down2, l0, l1, l2, h0, h1, h2]
    }

    /// All parameters in a fixed order (weights then bias, layer by layer).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in self.convs() {
            out.extend_from_slice(&c.weights);
            out.extend_from_slice(&c.bias);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        let expected: usize = self.convs().iter().map(|c| c.weights.len() + c.bias.len()).sum();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "flat parameter vector has {} values, expected {expected}",
                values.len()
            )));
        }
        let mut offset = 0;
        for c in self.convs_mut() {
            let nw = c.weights.len();
            c.weights.copy_from_slice(&values[offset..offset + nw]);
            offset += nw;
            let nb = c.bias.len();
            c.bias.copy_from_slice(&values[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }
}

/// Forward activations kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub input: FeatureMap,
    /// Post-activation outputs of stem, down1, down2.
    pub act: [FeatureMap; LEVELS],
    pub pyramid: FeaturePyramid,
    pub logits: Vec<FeatureMap>,
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

/// Derivative of the leaky rectifier read off the post-activation value.
fn leaky_deriv(post: f64) -> f64 {
    if post > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn image_to_map(img: &ImageRGB) -> Result<FeatureMap> {
    let (w, h) = (img.width(), img.height());
    FeatureMap::from_fn(Dims::new(1, 3, w, h), |_, c, x, y| img.get(c, x, y))
}

/// Deterministic forward pass. The image must be square with side divisible by 4.
pub fn forward(params: &ToyNetParams, img: &ImageRGB) -> Result<ForwardPass> {
    if img.width() != img.height() || img.width() % 4 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "expected square image with side divisible by 4, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let input = image_to_map(img)?;
    let a0 = params.stem.forward(&input).map(leaky);
    let a1 = params.down1.forward(&a0).map(leaky);
    let a2 = params.down2.forward(&a1).map(leaky);
    let act = [a0, a1, a2];
    let mut levels = Vec::with_capacity(LEVELS);
    let mut logits = Vec::with_capacity(LEVELS);
    for k in 0..LEVELS {
        let p = params.lateral[k].forward(&act[k]);
        logits.push(params.head[k].forward(&p));
        levels.push(p);
    }
    Ok(ForwardPass { input, act, pyramid: FeaturePyramid::new(levels)?, logits })
}

/// Exact reverse-mode gradients for one image.
///
/// `d_logits` are the cotangents of the per-level logit maps; `d_pyramid`,
/// when given, is added at the pyramid nodes (the feature-correction
/// pathway). Passing all-zero `d_pyramid` maps reproduces the detection-only
/// gradients bitwise.
pub fn backward(
    params: &ToyNetParams,
    pass: &ForwardPass,
    d_logits: &[FeatureMap],
    d_pyramid: Option<&[FeatureMap]>,
) -> Result<ToyNetParams> {
    if d_logits.len() != LEVELS {
        return Err(Error::ShapeMismatch(format!(
            "expected {LEVELS} logit cotangents, got {}",
            d_logits.len()
        )));
    }
    if let Some(dp) = d_pyramid {
        if dp.len() != LEVELS {
            return Err(Error::ShapeMismatch(format!(
                "expected {LEVELS} pyramid cotangents, got {}",
                dp.len()
            )));
        }
    }
    let mut grads = params.zeros_like();

    // Per-level: head, then lateral, collecting cotangents of the backbone acts.
    let mut d_act: Vec<FeatureMap> = Vec::with_capacity(LEVELS);
    for k in 0..LEVELS {
        pass.logits[k].check_same_dims(&d_logits[k])?;
        let p = &pass.pyramid.levels()[k];
        let (dw, db, mut d_p) = params.head[k].backward(p, &d_logits[k]);
        grads.head[k].weights = dw;
        grads.head[k].bias = db;
        if let Some(dp) = d_pyramid {
            d_p = d_p.zip(&dp[k], |a, b| a + b)?;
        }
        let (dw, db, d_a) = params.lateral[k].backward(&pass.act[k], &d_p);
        grads.lateral[k].weights = dw;
        grads.lateral[k].bias = db;
        d_act.push(d_a);
    }

    // Backbone chain, deepest first. act[k] feeds both lateral[k] and the
    // next down conv, so cotangents add before the activation derivative.
    let d_z2 = d_act[2].zip(&pass.act[2], |g, post| g * leaky_deriv(post))?;
    let (dw, db, d_a1_from_down2) = params.down2.backward(&pass.act[1], &d_z2);
    grads.down2.weights = dw;
    grads.down2.bias = db;

    let d_a1 = d_act[1].zip(&d_a1_from_down2, |a, b| a + b)?;
    let d_z1 = d_a1.zip(&pass.act[1], |g, post| g * leaky_deriv(post))?;
    let (dw, db, d_a0_from_down1) = params.down1.backward(&pass.act[0], &d_z1);
    grads.down1.weights = dw;
    grads.down1.bias = db;

    let d_a0 = d_act[0].zip(&d_a0_from_down1, |a, b| a + b)?;
    let d_z0 = d_a0.zip(&pass.act[0], |g, post| g * leaky_deriv(post))?;
    let (dw, db, _) = params.stem.backward(&pass.input, &d_z0);
    grads.stem.weights = dw;
    grads.stem.bias = db;

    Ok(grads)
}

/// Weighted binary cross-entropy with logits: per-level cell means averaged
/// over levels, so every pyramid level carries equal weight regardless of its
/// cell count. Positive cells count [`POSITIVE_WEIGHT`] times.
pub fn detection_loss(logits: &[FeatureMap], masks: &[FeatureMap]) -> Result<f64> {
    Ok(detection_loss_and_grad(logits, masks)?.0)
}

/// Loss plus its gradient with respect to the logits.
pub fn detection_loss_and_grad(
    logits: &[FeatureMap],
    masks: &[FeatureMap],
) -> Result<(f64, Vec<FeatureMap>)> {
    if logits.len() != masks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit levels vs {} mask levels",
            logits.len(),
            masks.len()
        )));
    }
    if logits.is_empty() || logits.iter().any(|l| l.dims().len() == 0) {
        return Err(Error::InvalidDims("no cells to score".into()));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (l, m) in logits.iter().zip(masks.iter()) {
        l.check_same_dims(m)?;
        let inv = 1.0 / (logits.len() * l.dims().len()) as f64;
        let g = l.zip(m, |z, t| {
            let w = if t > 0.5 { POSITIVE_WEIGHT } else { 1.0 };
            w * (sigmoid(z) - t) * inv
        })?;
        for (&z, &t) in l.data().iter().zip(m.data().iter()) {
            let w = if t > 0.5 { POSITIVE_WEIGHT } else { 1.0 };
            // Numerically stable BCE-with-logits.
            loss += w * (z.max(0.0) - z * t + libm::log(1.0 + libm::exp(-z.abs()))) * inv;
        }
        grads.push(g);
    }
    Ok((loss, grads))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `params - lr * grads`, elementwise.
pub fn sgd_step(params: &ToyNetParams, grads: &ToyNetParams, lr: f64) -> Result<ToyNetParams> {
    if !(lr >= 0.0) {
        return Err(Error::Domain(format!("learning rate must be >= 0, got {lr}")));
    }
    let mut out = params.clone();
    for (p, g) in out.convs_mut().into_iter().zip(grads.convs()) {
        if p.weights.len() != g.weights.len() || p.bias.len() != g.bias.len() {
            return Err(Error::ShapeMismatch("gradient shapes do not match parameters".into()));
        }
        for (w, gw) in p.weights.iter_mut().zip(g.weights.iter()) {
            *w -= lr * gw;
        }
        for (b, gb) in p.bias.iter_mut().zip(g.bias.iter()) {
            *b -= lr * gb;
        }
    }
    Ok(out)
}
