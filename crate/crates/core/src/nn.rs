//! Neural building blocks: spatial attention over pooled channel statistics,
//! a small multi-stage encoder, the bias-free 1x1 channel projection, and a
//! segmentation-style lane head with row-wise polyline decoding.

use crate::error::{Error, Result};
use crate::lane::Lane;
use crate::tensor::{Element, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn uniform_init<T: Element>(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).unwrap().requires_grad()
}

/// Spatial attention: a conv over [avg-pool; max-pool] channel statistics,
/// squashed to (0,1) and broadcast-multiplied back onto the feature map.
pub struct SpatialAttention<T: Element> {
    pub kernel: Tensor<T>, // [1,2,k,k]
    pub bias: Tensor<T>,   // [1]
    pub k: usize,
}

impl<T: Element> SpatialAttention<T> {
    pub fn zeros(k: usize) -> Self {
        SpatialAttention {
            kernel: Tensor::zeros(vec![1, 2, k, k]).requires_grad(),
            bias: Tensor::zeros(vec![1]).requires_grad(),
            k,
        }
    }

    pub fn seeded(k: usize, rng: &mut ChaCha8Rng) -> Self {
        SpatialAttention {
            kernel: uniform_init(rng, vec![1, 2, k, k], 2 * k * k),
            bias: Tensor::zeros(vec![1]).requires_grad(),
            k,
        }
    }

    /// Returns (attention map [1,H,W], filtered features [C,H,W]).
    pub fn forward(&self, features: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let avg = features.pool_channels_avg()?;
        let max = features.pool_channels_max()?;
        let stacked = avg.concat_channels(&max)?;
        let logits = stacked.conv2d(&self.kernel, Some(&self.bias), 1, (self.k - 1) / 2)?;
        let w_sa = logits.sigmoid();
        let filtered = features.mul(&w_sa)?;
        Ok((w_sa, filtered))
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        vec![self.kernel.clone(), self.bias.clone()]
    }
}

/// One encoder stage: 3x3 conv (padding 1) + ReLU, then 2x2 average pooling,
/// so each stage halves the spatial extent.
pub struct ConvStage<T: Element> {
    pub weight: Tensor<T>, // [C_out,C_in,3,3]
    pub bias: Tensor<T>,   // [C_out]
}

pub struct Encoder<T: Element> {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub stages: Vec<ConvStage<T>>,
}

impl<T: Element> Encoder<T> {
    pub fn seeded(in_channels: usize, widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut stages = Vec::new();
        let mut c_in = in_channels;
        for &c_out in widths {
            stages.push(ConvStage {
                weight: uniform_init(rng, vec![c_out, c_in, 3, 3], c_in * 9),
                bias: Tensor::zeros(vec![c_out]).requires_grad(),
            });
            c_in = c_out;
        }
        Encoder {
            in_channels,
            widths: widths.to_vec(),
            stages,
        }
    }

    pub fn zeros(in_channels: usize, widths: &[usize]) -> Self {
        let mut stages = Vec::new();
        let mut c_in = in_channels;
        for &c_out in widths {
            stages.push(ConvStage {
                weight: Tensor::zeros(vec![c_out, c_in, 3, 3]).requires_grad(),
                bias: Tensor::zeros(vec![c_out]).requires_grad(),
            });
            c_in = c_out;
        }
        Encoder {
            in_channels,
            widths: widths.to_vec(),
            stages,
        }
    }

    /// Feature pyramid [F_1..F_L]; stage l has half the spatial extent of
    /// stage l-1. H and W must be divisible by 2^L.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let s = image.shape();
        if s.len() != 3 || s[0] != self.in_channels {
            return Err(Error::Dim(format!(
                "encoder expects [{},H,W], got {:?}",
                self.in_channels, s
            )));
        }
        let div = 1usize << self.stages.len();
        if s[1] % div != 0 || s[2] % div != 0 {
            return Err(Error::Dim(format!(
                "encoder input {}x{} not divisible by 2^{}",
                s[1],
                s[2],
                self.stages.len()
            )));
        }
        let mut pyramid = Vec::with_capacity(self.stages.len());
        let mut x = image.clone();
        for stage in &self.stages {
            x = x
                .conv2d(&stage.weight, Some(&stage.bias), 1, 1)?
                .relu()
                .avg_pool2x2()?;
            pyramid.push(x.clone());
        }
        Ok(pyramid)
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.stages
            .iter()
            .flat_map(|s| [s.weight.clone(), s.bias.clone()])
            .collect()
    }
}

/// Bias-free 1x1 channel projection; linear and homogeneous by construction.
pub struct Projection<T: Element> {
    pub weight: Tensor<T>, // [C_out,C_in,1,1]
}

impl<T: Element> Projection<T> {
    pub fn identity(channels: usize) -> Self {
        let mut data = vec![T::zero(); channels * channels];
        for c in 0..channels {
            data[c * channels + c] = T::one();
        }
        Projection {
            weight: Tensor::from_vec(vec![channels, channels, 1, 1], data).unwrap().requires_grad(),
        }
    }

    pub fn seeded(c_out: usize, c_in: usize, rng: &mut ChaCha8Rng) -> Self {
        Projection {
            weight: uniform_init(rng, vec![c_out, c_in, 1, 1], c_in),
        }
    }

    pub fn forward(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        features.conv2d(&self.weight, None, 1, 0)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Segmentation lane head: nearest-neighbor upsample of the deepest stage
/// back to input resolution, a 3x3 conv to one channel, sigmoid.
pub struct LaneHead<T: Element> {
    pub weight: Tensor<T>, // [1,C,3,3]
    pub bias: Tensor<T>,   // [1]
    pub upsample: usize,
}

impl<T: Element> LaneHead<T> {
    pub fn seeded(channels: usize, upsample: usize, rng: &mut ChaCha8Rng) -> Self {
        LaneHead {
            weight: uniform_init(rng, vec![1, channels, 3, 3], channels * 9),
            bias: Tensor::zeros(vec![1]).requires_grad(),
            upsample,
        }
    }

    pub fn zeros(channels: usize, upsample: usize) -> Self {
        LaneHead {
            weight: Tensor::zeros(vec![1, channels, 3, 3]).requires_grad(),
            bias: Tensor::zeros(vec![1]).requires_grad(),
            upsample,
        }
    }

    /// Per-pixel lane probability [1,H,W] at input resolution.
    pub fn forward(&self, deepest: &Tensor<T>) -> Result<Tensor<T>> {
        let up = deepest.upsample_nearest(self.upsample)?;
        Ok(up.conv2d(&self.weight, Some(&self.bias), 1, 1)?.sigmoid())
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

/// Row-wise polyline decoding of a probability map. Each sampled row turns
/// connected above-threshold runs into points at run centroids; points are
/// linked to the nearest open polyline within `gap_tol_x` pixels. Polylines
/// shorter than 2 points are dropped.
pub fn decode_lanes<T: Element>(
    prob_map: &Tensor<T>,
    row_stride: usize,
    threshold: f64,
    gap_tol_x: f64,
) -> Result<Vec<Lane>> {
    let s = prob_map.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::Dim(format!("decode_lanes expects [1,H,W], got {:?}", s)));
    }
    assert!(threshold > 0.0 && threshold < 1.0, "threshold must be in (0,1)");
    let (h, w) = (s[1], s[2]);
    let data = prob_map.data();
    let row_stride = row_stride.max(1);
    // a polyline stays open for two sampled rows without a match
    let max_row_gap = (2 * row_stride) as f64;

    struct Open {
        points: Vec<(f64, f64)>,
        last_x: f64,
        last_y: f64,
    }
    let mut open: Vec<Open> = Vec::new();
    let mut done: Vec<Vec<(f64, f64)>> = Vec::new();

    for y in (0..h).step_by(row_stride) {
        // connected runs of above-threshold pixels in this row
        let mut runs: Vec<f64> = Vec::new();
        let mut start: Option<usize> = None;
        for x in 0..=w {
            let on = x < w && data[y * w + x].as_f64() > threshold;
            match (on, start) {
                (true, None) => start = Some(x),
                (false, Some(s0)) => {
                    runs.push((s0 + x - 1) as f64 / 2.0);
                    start = None;
                }
                _ => {}
            }
        }

        let mut taken = vec![false; open.len()];
        for &cx in &runs {
            let mut best: Option<(usize, f64)> = None;
            for (i, o) in open.iter().enumerate() {
                if taken[i] {
                    continue;
                }
                let dx = (cx - o.last_x).abs();
                if dx <= gap_tol_x && best.map_or(true, |(_, b)| dx < b) {
                    best = Some((i, dx));
                }
            }
            match best {
                Some((i, _)) => {
                    taken[i] = true;
                    open[i].points.push((cx, y as f64));
                    open[i].last_x = cx;
                    open[i].last_y = y as f64;
                }
                None => {
                    open.push(Open {
                        points: vec![(cx, y as f64)],
                        last_x: cx,
                        last_y: y as f64,
                    });
                    taken.push(true); // fresh polyline takes no second point this row
                }
            }
        }

        // retire polylines that have gone stale
        let mut i = 0;
        while i < open.len() {
            if y as f64 - open[i].last_y > max_row_gap {
                done.push(open.swap_remove(i).points);
            } else {
                i += 1;
            }
        }
    }
    done.extend(open.into_iter().map(|o| o.points));

    let mut lanes: Vec<Lane> = done
        .into_iter()
        .filter(|p| p.len() >= 2)
        .map(|p| Lane::new(p).expect("decoder emits monotone rows"))
        .collect();
    // deterministic output order: by x of first point, then y
    lanes.sort_by(|a, b| {
        a.points[0]
            .partial_cmp(&b.points[0])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(lanes)
}
