//! Training loops: masked-image pretraining for the oracle encoder, and
//! lane-detection fine-tuning with the feature-space regularizer.
//!
//! Everything is desk scale and single threaded; determinism in the seed is
//! part of the contract, so all randomness flows through one ChaCha8 stream
//! per run.

use crate::error::{Error, Result};
use crate::gradcheck::{fd_max_rel_err, DEFAULT_STEP};
use crate::metrics::render_lane_mask;
use crate::nn::{Encoder, LaneHead, Projection, SpatialAttention};
use crate::reg::{
    self, lane_detection_loss, samiro_loss, total_loss, ChannelScale, LossConfig, Variant,
};
use crate::synth::{Image, Scene};
use crate::tensor::{Element, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SGD with classical momentum: v <- m*v + g, p <- p - lr*v. Velocity
/// buffers persist across steps; gradients are cleared after each step.
pub struct Sgd<T: Element> {
    pub lr: T,
    pub momentum: T,
    params: Vec<Tensor<T>>,
    velocity: Vec<Vec<T>>,
}

impl<T: Element> Sgd<T> {
    pub fn new(params: Vec<Tensor<T>>, lr: f64, momentum: f64) -> Self {
        let velocity = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        Sgd {
            lr: T::from_f64(lr),
            momentum: T::from_f64(momentum),
            params,
            velocity,
        }
    }

    /// Applies one update from the accumulated gradients. Parameters without
    /// a gradient (unused in this step's graph) are left alone.
    pub fn step(&mut self) -> Result<()> {
        for (p, v) in self.params.iter().zip(self.velocity.iter_mut()) {
            let Some(g) = p.grad() else { continue };
            for (vi, gi) in v.iter_mut().zip(&g) {
                *vi = self.momentum * *vi + *gi;
            }
            let lr = self.lr;
            p.apply_update(|i, x| x - lr * v[i]);
            p.zero_grad();
        }
        Ok(())
    }
}

pub fn image_to_tensor(img: &Image) -> Tensor<f32> {
    Tensor::from_vec(vec![img.channels, img.h, img.w], img.data.clone()).unwrap()
}

/// Union of the per-lane masks rendered at `width_px`, as a [1,H,W] tensor of
/// 0/1 values.
pub fn gt_mask_tensor(scene: &Scene, width_px: usize) -> Result<Tensor<f32>> {
    let (h, w) = (scene.image.h, scene.image.w);
    let mut data = vec![0.0f32; h * w];
    for lane in &scene.lanes {
        let m = render_lane_mask(lane, width_px, h, w)?;
        for (d, &b) in data.iter_mut().zip(&m.data) {
            if b {
                *d = 1.0;
            }
        }
    }
    Tensor::from_vec(vec![1, h, w], data)
}

/// Deterministic patch mask: exactly ceil(mask_ratio * P) of the P patches
/// are masked, drawn without replacement.
pub fn mask_patches(
    h: usize,
    w: usize,
    patch: usize,
    mask_ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<bool>> {
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Config(format!(
            "patch size {patch} must divide image extents {h}x{w}"
        )));
    }
    if !(0.0..=1.0).contains(&mask_ratio) {
        return Err(Error::Config(format!("mask_ratio must be in [0,1], got {mask_ratio}")));
    }
    let p = (h / patch) * (w / patch);
    let k = (mask_ratio * p as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..p).collect();
    // Fisher-Yates
    for i in (1..p).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut mask = vec![false; p];
    for &idx in order.iter().take(k) {
        mask[idx] = true;
    }
    Ok(mask)
}

#[derive(Debug, Clone)]
pub struct MimConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub mask_ratio: f64,
    pub patch: usize,
    pub widths: Vec<usize>,
    pub seed: u64,
}

impl Default for MimConfig {
    fn default() -> Self {
        MimConfig {
            steps: 200,
            lr: 0.05,
            momentum: 0.9,
            mask_ratio: 0.6,
            patch: 8,
            widths: vec![8, 16, 32],
            seed: 0,
        }
    }
}

pub struct MimOutcome {
    pub encoder: Encoder<f32>,
    /// Per-step masked-pixel MSE (noisy: each step sees one image and one
    /// fresh mask draw).
    pub losses: Vec<f64>,
    /// Whole-set masked MSE with untrained weights, fixed evaluation masks.
    pub initial_eval: f64,
    /// Same evaluation after the last step.
    pub final_eval: f64,
}

/// Masked copy of `img` plus the pixel-level mask and masked-pixel count.
fn masked_view(
    img: &Image,
    patch: usize,
    mask_ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<f32>, Tensor<f32>, usize)> {
    let (h, w) = (img.h, img.w);
    let patch_mask = mask_patches(h, w, patch, mask_ratio, rng)?;
    let px = w / patch;
    let mut masked = img.data.clone();
    let mut pix_mask = vec![0.0f32; h * w];
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if patch_mask[(y / patch) * px + x / patch] {
                pix_mask[y * w + x] = 1.0;
                count += 1;
                for c in 0..img.channels {
                    masked[(c * h + y) * w + x] = 0.0;
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(vec![img.channels, h, w], masked)?,
        Tensor::from_vec(vec![1, h, w], pix_mask)?,
        count,
    ))
}

struct MimDecoder {
    w: Tensor<f32>,
    b: Tensor<f32>,
    factor: usize,
}

fn mim_loss(
    encoder: &Encoder<f32>,
    dec: &MimDecoder,
    img: &Image,
    input: &Tensor<f32>,
    mask_t: &Tensor<f32>,
    masked_count: usize,
) -> Result<Tensor<f32>> {
    let target = image_to_tensor(img);
    let pyramid = encoder.forward(input)?;
    let recon = pyramid
        .last()
        .unwrap()
        .upsample_nearest(dec.factor)?
        .conv2d(&dec.w, Some(&dec.b), 1, 1)?;
    let diff = recon.sub(&target)?.mul(mask_t)?;
    let denom = (masked_count * img.channels).max(1) as f32;
    Ok(diff.mul(&diff)?.sum_all().scale(1.0f32 / denom))
}

/// Whole-set masked MSE under a fixed evaluation mask stream; forward only.
fn mim_eval(
    encoder: &Encoder<f32>,
    dec: &MimDecoder,
    images: &[Image],
    cfg: &MimConfig,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d1e_aa55);
    let mut acc = 0.0f64;
    for img in images {
        let (input, mask_t, count) = masked_view(img, cfg.patch, cfg.mask_ratio, &mut rng)?;
        let (input, mask_t) = (input.detach(), mask_t.detach());
        acc += mim_loss(encoder, dec, img, &input, &mask_t, count)?.item() as f64;
    }
    Ok(acc / images.len() as f64)
}

/// Masked-image pretraining: zero out a random subset of patches, encode,
/// reconstruct with a light decoder (nearest upsample + 3x3 conv), and take
/// the MSE over the masked pixels only. `initial_eval`/`final_eval` measure
/// the whole set under identical masks before and after training, which is
/// the stable progress signal (per-step losses jump with the image drawn).
pub fn mim_pretrain(images: &[Image], cfg: &MimConfig) -> Result<MimOutcome> {
    if images.is_empty() {
        return Err(Error::Config("mim_pretrain: empty image set".into()));
    }
    let in_channels = images[0].channels;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let encoder = Encoder::seeded(in_channels, &cfg.widths, &mut rng);
    let depth = cfg.widths.len();
    let deepest = *cfg.widths.last().unwrap();
    // decoder: upsample back to input extent, then one conv to pixel space
    let dec = MimDecoder {
        w: crate::nn::uniform_init(&mut rng, vec![in_channels, deepest, 3, 3], deepest * 9),
        b: Tensor::<f32>::zeros(vec![in_channels]).requires_grad(),
        factor: 1 << depth,
    };

    let mut params = encoder.params();
    params.push(dec.w.clone());
    params.push(dec.b.clone());
    let mut sgd = Sgd::new(params, cfg.lr, cfg.momentum);

    let initial_eval = mim_eval(&encoder, &dec, images, cfg)?;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let img = &images[step % images.len()];
        let (input, mask_t, count) = masked_view(img, cfg.patch, cfg.mask_ratio, &mut rng)?;
        let loss = mim_loss(&encoder, &dec, img, &input, &mask_t, count)?;
        losses.push(loss.item() as f64);
        loss.backward()?;
        sgd.step()?;
    }
    let final_eval = mim_eval(&encoder, &dec, images, cfg)?;
    Ok(MimOutcome {
        encoder,
        losses,
        initial_eval,
        final_eval,
    })
}

/// Frozen oracle: encoder weights detached from any tape, so its forward
/// pass records nothing and it never receives updates.
pub struct Oracle<T: Element> {
    pub encoder: Encoder<T>,
}

impl<T: Element> Oracle<T> {
    pub fn from_encoder(src: &Encoder<T>) -> Self {
        let mut frozen = Encoder::zeros(src.in_channels, &src.widths);
        for (dst, s) in frozen.stages.iter_mut().zip(&src.stages) {
            dst.weight = s.weight.detach();
            dst.bias = s.bias.detach();
        }
        Oracle { encoder: frozen }
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.encoder.forward(image)
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Target encoder widths; may differ from the oracle's.
    pub widths: Vec<usize>,
    pub attention_kernel: usize,
    pub lane_width_px: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 300,
            lr: 0.1,
            momentum: 0.9,
            seed: 0,
            widths: vec![8, 16, 32],
            attention_kernel: 7,
            lane_width_px: 5,
            loss: LossConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepLog {
    pub step: usize,
    pub l_ld: f64,
    /// One entry per stage in the configured stage set, in order.
    pub l_reg: Vec<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunRecord {
    pub logs: Vec<StepLog>,
}

impl RunRecord {
    pub fn initial_total(&self) -> f64 {
        self.logs.first().map_or(f64::NAN, |l| l.total)
    }

    pub fn final_total(&self) -> f64 {
        self.logs.last().map_or(f64::NAN, |l| l.total)
    }

    pub fn csv(&self) -> String {
        let stages = self.logs.first().map_or(0, |l| l.l_reg.len());
        let mut out = String::from("step,l_ld");
        for i in 0..stages {
            out.push_str(&format!(",l_reg_stage_{}", i + 1));
        }
        out.push_str(",total\n");
        for l in &self.logs {
            out.push_str(&format!("{},{}", l.step, l.l_ld));
            for v in &l.l_reg {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", l.total));
        }
        out
    }
}

/// The target model under fine-tuning.
pub struct LaneModel<T: Element> {
    pub encoder: Encoder<T>,
    pub head: LaneHead<T>,
}

impl<T: Element> LaneModel<T> {
    pub fn seeded(in_channels: usize, widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let encoder = Encoder::seeded(in_channels, widths, rng);
        let head = LaneHead::seeded(*widths.last().unwrap(), 1 << widths.len(), rng);
        LaneModel { encoder, head }
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let pyramid = self.encoder.forward(image)?;
        self.head.forward(pyramid.last().unwrap())
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }
}

pub struct FinetuneOutcome {
    pub model: LaneModel<f32>,
    pub record: RunRecord,
}

/// Fine-tunes a fresh target model on the scenes with the configured
/// regularizer against the frozen oracle. Attention filters, projections,
/// and per-channel scales are trained jointly with the target; the oracle is
/// never touched.
pub fn finetune(
    scenes: &[Scene],
    oracle: &Oracle<f32>,
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    if scenes.is_empty() {
        return Err(Error::Config("finetune: empty scene set".into()));
    }
    let in_channels = scenes[0].image.channels;
    if in_channels != oracle.encoder.in_channels {
        return Err(Error::Config(format!(
            "scene channels {} do not match oracle input channels {}",
            in_channels, oracle.encoder.in_channels
        )));
    }
    let active = cfg.loss.variant != Variant::None && cfg.loss.lambda != 0.0;
    let depth_t = cfg.widths.len();
    let depth_o = oracle.encoder.widths.len();
    if active {
        for &s in &cfg.loss.stage_set {
            if s == 0 || s > depth_t || s > depth_o {
                return Err(Error::Config(format!(
                    "stage {s} outside both encoders (target depth {depth_t}, oracle depth {depth_o})"
                )));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = LaneModel::seeded(in_channels, &cfg.widths, &mut rng);

    // per configured stage: attention over oracle features, projection from
    // target channels into oracle channels, and a learnable channel scale
    let mut attn = Vec::new();
    let mut proj = Vec::new();
    let mut scale = Vec::new();
    if active {
        for &s in &cfg.loss.stage_set {
            let c_o = oracle.encoder.widths[s - 1];
            let c_t = cfg.widths[s - 1];
            attn.push(SpatialAttention::seeded(cfg.attention_kernel, &mut rng));
            proj.push(Projection::seeded(c_o, c_t, &mut rng));
            scale.push(ChannelScale::<f32>::ones(c_o));
        }
    }

    let mut params = model.params();
    for a in &attn {
        params.extend(a.params());
    }
    for p in &proj {
        params.push(p.weight.clone());
    }
    for w in &scale {
        params.push(w.raw.clone());
    }
    let mut sgd = Sgd::new(params, cfg.lr, cfg.momentum);

    let mut record = RunRecord::default();
    for step in 0..cfg.steps {
        let scene = &scenes[step % scenes.len()];
        let x = image_to_tensor(&scene.image);
        let gt = gt_mask_tensor(scene, cfg.lane_width_px)?;

        let pyramid = model.encoder.forward(&x)?;
        let prob = model.head.forward(pyramid.last().unwrap())?;
        let l_ld = lane_detection_loss(&prob, &gt)?;

        let mut per_stage = Vec::new();
        if active {
            let oracle_pyramid = oracle.forward(&x)?;
            for (i, &s) in cfg.loss.stage_set.iter().enumerate() {
                let f_s = &oracle_pyramid[s - 1];
                let f_hat = if cfg.loss.use_attention {
                    attn[i].forward(f_s)?.1
                } else {
                    f_s.clone()
                };
                let (f_hat, f_t) = reg::align_spatial(f_hat, pyramid[s - 1].clone())?;
                let l = match cfg.loss.variant {
                    Variant::Samiro => samiro_loss(&f_hat, &f_t, &proj[i], &scale[i], &cfg.loss)?,
                    Variant::Miro => {
                        let b = proj[i].forward(&f_t)?;
                        reg::miro_loss(&f_hat, &b, &scale[i])?
                    }
                    Variant::PlainL2 => reg::plain_l2_distill(&f_hat, &f_t, &proj[i])?,
                    Variant::None => unreachable!(),
                };
                per_stage.push(l);
            }
        }
        let total = total_loss(&l_ld, &per_stage, &cfg.loss)?;

        record.logs.push(StepLog {
            step,
            l_ld: l_ld.item() as f64,
            l_reg: per_stage.iter().map(|t| t.item() as f64).collect(),
            total: total.item() as f64,
        });
        total.backward()?;
        sgd.step()?;
    }
    Ok(FinetuneOutcome { model, record })
}

#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub cases: Vec<GradCheckCase>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_err(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.max_rel_err.is_finite()) && self.max_err() < self.tol
    }
}

fn seed_vec(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> (Vec<usize>, Vec<f64>) {
    let n: usize = shape.iter().product();
    (
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
}

/// Central-difference verification of every backward rule, per op and on the
/// full composed training graph, in 64-bit arithmetic. `tol` is the maximum
/// relative error accepted by `passed()`.
pub fn gradcheck_suite(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<GradCheckCase> = Vec::new();
    let mut run = |name: &str,
                   seeds: Vec<(Vec<usize>, Vec<f64>)>,
                   f: Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>|
     -> Result<()> {
        let err = fd_max_rel_err(f.as_ref(), &seeds, DEFAULT_STEP)?;
        cases.push(GradCheckCase {
            name: name.to_string(),
            max_rel_err: err,
        });
        Ok(())
    };

    let s2 = seed_vec(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let s3 = seed_vec(&mut rng, &[2, 3, 4], 0.5, 2.0);
    run(
        "add_mul_sub",
        vec![s2.clone(), s3.clone()],
        Box::new(|t| Ok(t[0].add(&t[1])?.mul(&t[0].sub(&t[1])?)?.sum_all())),
    )?;
    run(
        "div",
        vec![s2.clone(), s3.clone()],
        Box::new(|t| Ok(t[0].div(&t[1])?.sum_all())),
    )?;
    run(
        "broadcast_channel",
        vec![s2.clone(), seed_vec(&mut rng, &[2, 1, 1], 0.5, 2.0)],
        Box::new(|t| Ok(t[0].div(&t[1])?.mul(&t[1].sqrt_elem())?.sum_all())),
    )?;
    run(
        "sigmoid_relu",
        vec![s2.clone()],
        Box::new(|t| Ok(t[0].sigmoid().mul(&t[0].relu())?.sum_all())),
    )?;
    run(
        "log_abs",
        vec![s3.clone()],
        Box::new(|t| Ok(t[0].log_abs().sum_all())),
    )?;
    run(
        "reductions",
        vec![s2.clone()],
        Box::new(|t| {
            Ok(t[0]
                .reduce_sq_l2(&[1, 2])?
                .sqrt_elem()
                .mean_all()
                .add(&t[0].reduce_mean(&[0])?.sum_all())?)
        }),
    )?;
    run(
        "conv2d",
        vec![
            seed_vec(&mut rng, &[2, 6, 6], -1.0, 1.0),
            seed_vec(&mut rng, &[3, 2, 3, 3], -0.5, 0.5),
            seed_vec(&mut rng, &[3], -0.5, 0.5),
        ],
        Box::new(|t| Ok(t[0].conv2d(&t[1], Some(&t[2]), 1, 1)?.sum_all())),
    )?;
    run(
        "pooling_upsample",
        vec![seed_vec(&mut rng, &[2, 4, 4], -1.0, 1.0)],
        Box::new(|t| {
            Ok(t[0]
                .avg_pool2x2()?
                .upsample_nearest(2)?
                .mul(&t[0])?
                .sum_all())
        }),
    )?;
    run(
        "channel_pool_concat",
        vec![seed_vec(&mut rng, &[3, 4, 4], -1.0, 1.0)],
        Box::new(|t| {
            let avg = t[0].pool_channels_avg()?;
            let mx = t[0].pool_channels_max()?;
            Ok(avg.concat_channels(&mx)?.sum_all())
        }),
    )?;
    run(
        "attention_block",
        vec![
            seed_vec(&mut rng, &[3, 4, 4], -1.0, 1.0),
            seed_vec(&mut rng, &[1, 2, 3, 3], -0.5, 0.5),
            seed_vec(&mut rng, &[1], -0.2, 0.2),
        ],
        Box::new(|t| {
            let sa = SpatialAttention {
                kernel: t[1].clone(),
                bias: t[2].clone(),
                k: 3,
            };
            Ok(sa.forward(&t[0])?.1.sum_all())
        }),
    )?;
    run(
        "samiro_loss",
        vec![
            seed_vec(&mut rng, &[3, 4, 4], -1.0, 1.0),
            seed_vec(&mut rng, &[2, 4, 4], -1.0, 1.0),
            seed_vec(&mut rng, &[3, 2, 1, 1], -0.5, 0.5),
            seed_vec(&mut rng, &[3, 1, 1], 0.5, 2.0),
        ],
        Box::new(|t| {
            let g = Projection { weight: t[2].clone() };
            let w = ChannelScale::from_tensor(t[3].clone());
            samiro_loss(&t[0], &t[1], &g, &w, &LossConfig::default())
        }),
    )?;
    run(
        "miro_loss",
        vec![
            seed_vec(&mut rng, &[3, 4, 4], -1.0, 1.0),
            seed_vec(&mut rng, &[3, 4, 4], -1.0, 1.0),
            seed_vec(&mut rng, &[3, 1, 1], 0.5, 2.0),
        ],
        Box::new(|t| {
            let w = ChannelScale::from_tensor(t[2].clone());
            reg::miro_loss(&t[0], &t[1], &w)
        }),
    )?;
    run(
        "detection_loss",
        vec![seed_vec(&mut rng, &[1, 4, 4], 0.05, 0.95)],
        Box::new(|t| {
            let gt = Tensor::from_vec(
                vec![1, 4, 4],
                (0..16).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect(),
            )?;
            lane_detection_loss(&t[0], &gt)
        }),
    )?;

    // full composed graph: encoder + head + attention + projection +
    // regularized total loss, every leaf perturbed
    run(
        "full_training_graph",
        vec![
            seed_vec(&mut rng, &[2, 1, 3, 3], -0.5, 0.5), // enc stage 1 w
            seed_vec(&mut rng, &[2], -0.2, 0.2),          // enc stage 1 b
            seed_vec(&mut rng, &[3, 2, 3, 3], -0.4, 0.4), // enc stage 2 w
            seed_vec(&mut rng, &[3], -0.2, 0.2),          // enc stage 2 b
            seed_vec(&mut rng, &[1, 3, 3, 3], -0.4, 0.4), // head w
            seed_vec(&mut rng, &[1], -0.2, 0.2),          // head b
            seed_vec(&mut rng, &[1, 2, 3, 3], -0.4, 0.4), // attention w
            seed_vec(&mut rng, &[1], -0.2, 0.2),          // attention b
            seed_vec(&mut rng, &[2, 3, 1, 1], -0.5, 0.5), // projection (oracle ch 2 <- target ch 3)
            seed_vec(&mut rng, &[2, 1, 1], 0.5, 2.0),     // channel scale
        ],
        {
            let mut orng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let oracle_f32: Encoder<f32> = Encoder::seeded(1, &[2, 2], &mut orng);
            let mut oracle = Encoder::<f64>::zeros(1, &[2, 2]);
            for (dst, s) in oracle.stages.iter_mut().zip(&oracle_f32.stages) {
                dst.weight = s.weight.cast::<f64>();
                dst.bias = s.bias.cast::<f64>();
            }
            let img: Vec<f64> = {
                let mut irng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
                (0..64).map(|_| irng.gen_range(0.0..1.0)).collect()
            };
            let gt: Vec<f64> = (0..64).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
            Box::new(move |t: &[Tensor<f64>]| {
                let encoder = Encoder {
                    in_channels: 1,
                    widths: vec![2, 3],
                    stages: vec![
                        crate::nn::ConvStage { weight: t[0].clone(), bias: t[1].clone() },
                        crate::nn::ConvStage { weight: t[2].clone(), bias: t[3].clone() },
                    ],
                };
                let head = LaneHead {
                    weight: t[4].clone(),
                    bias: t[5].clone(),
                    upsample: 4,
                };
                let x = Tensor::from_vec(vec![1, 8, 8], img.clone())?;
                let gt_t = Tensor::from_vec(vec![1, 8, 8], gt.clone())?;
                let pyramid = encoder.forward(&x)?;
                let prob = head.forward(&pyramid[1])?;
                let l_ld = lane_detection_loss(&prob, &gt_t)?;

                let o_pyr = oracle.forward(&x)?;
                let sa = SpatialAttention { kernel: t[6].clone(), bias: t[7].clone(), k: 3 };
                let f_hat = sa.forward(&o_pyr[1])?.1;
                let g = Projection { weight: t[8].clone() };
                let w = ChannelScale::from_tensor(t[9].clone());
                let cfg = LossConfig { stage_set: vec![2], ..LossConfig::default() };
                let l_reg = samiro_loss(&f_hat, &pyramid[1], &g, &w, &cfg)?;
                total_loss(&l_ld, &[l_reg], &cfg)
            })
        },
    )?;

    Ok(GradCheckReport { cases, tol })
}
