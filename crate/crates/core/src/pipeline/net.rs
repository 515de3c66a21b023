//! A small convolutional classifier with hand-written backpropagation.
//!
//! Each block is a 3x3 same-padded convolution, ReLU and 2x2 max-pooling.
//! The last feature map is globally average-pooled into a linear head.
//! All parameters live in one flat vector so optimizers and snapshots can
//! treat them uniformly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::softmax;
use super::transform::ImageTensor;
use crate::error::{Error, Result};
use crate::rng::rng_for_index;

const KERNEL: usize = 3;
const INIT_STREAM: u64 = 0x696e_6974;
const HEAD_STREAM: u64 = 0x6865_6164;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Output channels of each conv block.
    pub channels: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct ConvSlot {
    in_c: usize,
    out_c: usize,
    weight: usize,
    bias: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvNet {
    arch: Architecture,
    in_channels: usize,
    num_classes: usize,
    convs: Vec<ConvSlot>,
    head_weight: usize,
    head_bias: usize,
    pub params: Vec<f64>,
}

struct BlockCache {
    input: ImageTensor,
    /// Post-ReLU activation.
    activated: ImageTensor,
    /// Flat index into `activated` chosen by each pooled cell.
    pool_argmax: Vec<usize>,
    pooled_shape: (usize, usize, usize),
}

pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    features: Vec<f64>,
    last_shape: (usize, usize, usize),
}

impl ConvNet {
    /// Kaiming-uniform conv weights with zero biases; the head is drawn
    /// uniformly from ±1/sqrt(feature_dim) like a standard linear layer.
    pub fn new(arch: &Architecture, in_channels: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if arch.channels.is_empty() || arch.channels.contains(&0) {
            return Err(Error::invalid("architecture needs at least one non-empty block"));
        }
        if num_classes < 2 {
            return Err(Error::invalid("classifier needs at least 2 classes"));
        }
        let mut convs = Vec::new();
        let mut offset = 0;
        let mut in_c = in_channels;
        for &out_c in &arch.channels {
            let weight = offset;
            offset += out_c * in_c * KERNEL * KERNEL;
            let bias = offset;
            offset += out_c;
            convs.push(ConvSlot { in_c, out_c, weight, bias });
            in_c = out_c;
        }
        let head_weight = offset;
        offset += num_classes * in_c;
        let head_bias = offset;
        offset += num_classes;

        let mut params = vec![0.0; offset];
        let mut rng = rng_for_index(seed, INIT_STREAM, 0);
        for slot in &convs {
            let fan_in = (slot.in_c * KERNEL * KERNEL) as f64;
            let bound = (6.0 / fan_in).sqrt();
            for w in &mut params[slot.weight..slot.bias] {
                *w = rng.random_range(-bound..bound);
            }
        }
        let mut net = ConvNet {
            arch: arch.clone(),
            in_channels,
            num_classes,
            convs,
            head_weight,
            head_bias,
            params,
        };
        net.init_head(seed);
        Ok(net)
    }

    fn init_head(&mut self, seed: u64) {
        let bound = 1.0 / (self.feature_dim() as f64).sqrt();
        let mut rng = rng_for_index(seed, HEAD_STREAM, self.num_classes as u64);
        for p in &mut self.params[self.head_weight..] {
            *p = rng.random_range(-bound..bound);
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.channels[self.arch.channels.len() - 1]
    }

    /// Replaces the classification head with a freshly initialized one for
    /// `num_classes` outputs, keeping the convolutional body.
    pub fn reset_head(&mut self, num_classes: usize, seed: u64) {
        let f = self.feature_dim();
        self.params.truncate(self.head_weight);
        self.params.extend(std::iter::repeat_n(0.0, num_classes * f + num_classes));
        self.head_bias = self.head_weight + num_classes * f;
        self.num_classes = num_classes;
        self.init_head(seed);
    }

    fn check_input(&self, x: &ImageTensor) -> Result<()> {
        if x.channels != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} channels, got {}",
                self.in_channels, x.channels
            )));
        }
        Ok(())
    }

    pub fn logits(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        self.forward(x).map(|(z, _)| z)
    }

    pub fn predict_proba(&self, x: &ImageTensor) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn forward(&self, x: &ImageTensor) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let mut blocks = Vec::with_capacity(self.convs.len());
        let mut current = x.clone();
        for slot in &self.convs {
            let mut act = conv_forward(&current, &self.params, slot);
            for v in &mut act.data {
                *v = v.max(0.0);
            }
            let (pooled, argmax) = max_pool(&act);
            let pooled_shape = pooled.shape();
            blocks.push(BlockCache {
                input: std::mem::replace(&mut current, pooled),
                activated: act,
                pool_argmax: argmax,
                pooled_shape,
            });
        }
        let last_shape = current.shape();
        let plane = (last_shape.1 * last_shape.2).max(1);
        let features: Vec<f64> = current
            .data
            .chunks(plane)
            .map(|ch| ch.iter().sum::<f64>() / plane as f64)
            .collect();
        let f = features.len();
        let logits = (0..self.num_classes)
            .map(|k| {
                let row = &self.params[self.head_weight + k * f..self.head_weight + (k + 1) * f];
                self.params[self.head_bias + k] + row.iter().zip(&features).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        Ok((
            logits,
            ForwardCache {
                blocks,
                features,
                last_shape,
            },
        ))
    }

    /// Accumulates the parameter gradient for `dlogits` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64], grad: &mut [f64]) {
        let f = cache.features.len();
        let mut dfeat = vec![0.0; f];
        for (k, &dz) in dlogits.iter().enumerate() {
            grad[self.head_bias + k] += dz;
            let base = self.head_weight + k * f;
            for j in 0..f {
                grad[base + j] += dz * cache.features[j];
                dfeat[j] += dz * self.params[base + j];
            }
        }

        let (c, h, w) = cache.last_shape;
        let plane = h * w;
        let mut dcur = ImageTensor::zeros(c, h, w);
        for (ch, d) in dfeat.iter().enumerate() {
            let v = d / plane.max(1) as f64;
            dcur.data[ch * plane..(ch + 1) * plane].fill(v);
        }

        for (slot, block) in self.convs.iter().zip(&cache.blocks).rev() {
            debug_assert_eq!(dcur.shape(), block.pooled_shape);
            let (ac, ah, aw) = block.activated.shape();
            let mut dact = ImageTensor::zeros(ac, ah, aw);
            for (i, &src) in block.pool_argmax.iter().enumerate() {
                // ReLU: gradient passes only where the activation was positive.
                if block.activated.data[src] > 0.0 {
                    dact.data[src] += dcur.data[i];
                }
            }
            dcur = conv_backward(&block.input, &dact, &self.params, slot, grad);
        }
    }

    /// Loss gradient for one sample, returning `(loss, probabilities)`.
    pub fn sample_gradient(
        &self,
        x: &ImageTensor,
        label: usize,
        loss: &super::loss::LossKind,
        grad: &mut [f64],
    ) -> Result<(f64, Vec<f64>)> {
        let (logits, cache) = self.forward(x)?;
        let (value, dlogits) = loss.value_and_grad(&logits, label)?;
        self.backward(&cache, &dlogits, grad);
        Ok((value, softmax(&logits)))
    }
}

fn conv_forward(x: &ImageTensor, params: &[f64], slot: &ConvSlot) -> ImageTensor {
    let (ic, h, w) = x.shape();
    let mut out = ImageTensor::zeros(slot.out_c, h, w);
    let plane = h * w;
    for o in 0..slot.out_c {
        let dst = &mut out.data[o * plane..(o + 1) * plane];
        dst.fill(params[slot.bias + o]);
        for i in 0..ic {
            let src = &x.data[i * plane..(i + 1) * plane];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = params[slot.weight + ((o * ic + i) * KERNEL + ky) * KERNEL + kx];
                    let (y0, y1) = valid_range(ky, h);
                    let (x0, x1) = valid_range(kx, w);
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let d = &mut dst[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (a, b) in d.iter_mut().zip(s) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward(
    x: &ImageTensor,
    dout: &ImageTensor,
    params: &[f64],
    slot: &ConvSlot,
    grad: &mut [f64],
) -> ImageTensor {
    let (ic, h, w) = x.shape();
    let plane = h * w;
    let mut dx = ImageTensor::zeros(ic, h, w);
    for o in 0..slot.out_c {
        let g = &dout.data[o * plane..(o + 1) * plane];
        grad[slot.bias + o] += g.iter().sum::<f64>();
        for i in 0..ic {
            let src = &x.data[i * plane..(i + 1) * plane];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let widx = slot.weight + ((o * ic + i) * KERNEL + ky) * KERNEL + kx;
                    let wv = params[widx];
                    let (y0, y1) = valid_range(ky, h);
                    let (x0, x1) = valid_range(kx, w);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let gr = &g[y * w + x0..y * w + x1];
                        let s = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        acc += gr.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        let d = &mut dx.data[i * plane + sy * w + x0 + kx - 1..i * plane + sy * w + x1 + kx - 1];
                        for (dv, gv) in d.iter_mut().zip(gr) {
                            *dv += wv * gv;
                        }
                    }
                    grad[widx] += acc;
                }
            }
        }
    }
    dx
}

/// Output rows `y` for which input row `y + k - 1` exists.
#[inline]
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = (n + 1).saturating_sub(k).min(n);
    (lo.min(hi), hi)
}

/// 2x2 stride-2 max pooling; a dimension of size 1 is left unpooled.
fn max_pool(x: &ImageTensor) -> (ImageTensor, Vec<usize>) {
    let (c, h, w) = x.shape();
    let (sy, sx) = (if h >= 2 { 2 } else { 1 }, if w >= 2 { 2 } else { 1 });
    let (oh, ow) = (h / sy, w / sx);
    let mut out = ImageTensor::zeros(c, oh, ow);
    let mut argmax = vec![0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = usize::MAX;
                let mut best_v = f64::NEG_INFINITY;
                for dy in 0..sy {
                    for dx in 0..sx {
                        let idx = (ch * h + y * sy + dy) * w + xo * sx + dx;
                        if x.data[idx] > best_v {
                            best_v = x.data[idx];
                            best = idx;
                        }
                    }
                }
                let o = (ch * oh + y) * ow + xo;
                out.data[o] = best_v;
                argmax[o] = best;
            }
        }
    }
    (out, argmax)
}
