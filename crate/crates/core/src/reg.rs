//! Feature-transfer regularization losses.
//!
//! `miro_loss` is the mutual-information-style baseline: a per-channel
//! learnable scale `w_c` weights the squared feature residual by 1/|w_c| and
//! pays log|w_c| for it. `samiro_loss` stabilizes the log term with a ReLU
//! (the loss can no longer go negative) and compares channel-normalized,
//! attention-filtered oracle features against a bias-free 1x1 projection of
//! the target features. `plain_l2_distill` is the indiscriminate
//! feature-matching baseline used for comparison.

use crate::error::{Error, Result};
use crate::nn::Projection;
use crate::tensor::{Element, Tensor};

pub const EPS_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Each channel slice divided by its spatial L2 norm (default).
    PerChannelSpatial,
    /// Each spatial position's channel vector divided by its L2 norm.
    PerPositionChannel,
    /// Whole map divided by its Frobenius norm.
    GlobalFrobenius,
}

impl NormMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per_channel_spatial" => Ok(NormMode::PerChannelSpatial),
            "per_position_channel" => Ok(NormMode::PerPositionChannel),
            "global_frobenius" => Ok(NormMode::GlobalFrobenius),
            other => Err(Error::Config(format!("unknown norm_mode '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NormMode::PerChannelSpatial => "per_channel_spatial",
            NormMode::PerPositionChannel => "per_position_channel",
            NormMode::GlobalFrobenius => "global_frobenius",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Samiro,
    Miro,
    PlainL2,
    None,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "samiro" => Ok(Variant::Samiro),
            "miro" => Ok(Variant::Miro),
            "plain_l2" => Ok(Variant::PlainL2),
            "none" => Ok(Variant::None),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Samiro => "samiro",
            Variant::Miro => "miro",
            Variant::PlainL2 => "plain_l2",
            Variant::None => "none",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Regularizer weight in L = L_LD + lambda * L_reg.
    pub lambda: f64,
    pub norm_mode: NormMode,
    /// 1-based encoder stage indices that participate.
    pub stage_set: Vec<usize>,
    pub variant: Variant,
    pub eps_norm: f64,
    /// Ablation toggle: channel normalization inside samiro_loss.
    pub use_normalization: bool,
    /// Ablation toggle: spatial attention filtering of oracle features.
    pub use_attention: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.1,
            norm_mode: NormMode::PerChannelSpatial,
            stage_set: vec![1, 2, 3],
            variant: Variant::Samiro,
            eps_norm: 1e-8,
            use_normalization: true,
            use_attention: true,
        }
    }
}

/// Learnable per-channel scale, shape [C,1,1], initialized to 1 so both log
/// terms start at zero. Read through |.| floored at EPS_SCALE.
pub struct ChannelScale<T: Element> {
    pub raw: Tensor<T>,
}

impl<T: Element> ChannelScale<T> {
    pub fn ones(channels: usize) -> Self {
        ChannelScale {
            raw: Tensor::full(vec![channels, 1, 1], T::one()).requires_grad(),
        }
    }

    pub fn from_tensor(raw: Tensor<T>) -> Self {
        ChannelScale { raw }
    }

    /// |w_c| with the 1e-8 floor applied, as read by every loss.
    fn floored_abs(&self) -> Tensor<T> {
        self.raw.abs_elem().clamp_min(T::from_f64(EPS_SCALE))
    }
}

/// Divides `features` by the norm selected by `mode`, floored at `eps`.
pub fn channel_normalize<T: Element>(
    features: &Tensor<T>,
    mode: NormMode,
    eps: f64,
) -> Result<Tensor<T>> {
    let axes: Vec<usize> = match mode {
        NormMode::PerChannelSpatial => vec![1, 2],
        NormMode::PerPositionChannel => vec![0],
        NormMode::GlobalFrobenius => vec![0, 1, 2],
    };
    let norm = features
        .reduce_sq_l2(&axes)?
        .sqrt_elem()
        .clamp_min(T::from_f64(eps));
    features.div(&norm)
}

/// (1/N) sum_i [ log|w_c(i)| + (F_s_i - F_t_i)^2 / |w_c(i)| ], N = C*H*W.
pub fn miro_loss<T: Element>(
    f_s: &Tensor<T>,
    f_t: &Tensor<T>,
    w: &ChannelScale<T>,
) -> Result<Tensor<T>> {
    if f_s.shape() != f_t.shape() {
        return Err(Error::Dim(format!(
            "miro_loss feature shapes differ: {:?} vs {:?}",
            f_s.shape(),
            f_t.shape()
        )));
    }
    let diff = f_s.sub(f_t)?;
    let quad = diff.mul(&diff)?.div(&w.floored_abs())?;
    Ok(quad.add(&w.raw.log_abs())?.mean_all())
}

/// (1/N) sum_i [ ReLU(log|w_c(i)|) + (A_i - B_i)^2 / |w_c(i)| ] where A is the
/// (optionally channel-normalized) attention-filtered oracle map and B is the
/// bias-free projection of the (optionally normalized) target map. The target
/// norm is taken on the un-projected features; since g is linear this is the
/// same as dividing g(F_t) by ||F_t||.
pub fn samiro_loss<T: Element>(
    f_s_hat: &Tensor<T>,
    f_t: &Tensor<T>,
    g: &Projection<T>,
    w: &ChannelScale<T>,
    cfg: &LossConfig,
) -> Result<Tensor<T>> {
    let a = if cfg.use_normalization {
        channel_normalize(f_s_hat, cfg.norm_mode, cfg.eps_norm)?
    } else {
        f_s_hat.clone()
    };
    let b_src = if cfg.use_normalization {
        channel_normalize(f_t, cfg.norm_mode, cfg.eps_norm)?
    } else {
        f_t.clone()
    };
    let b = g.forward(&b_src)?;
    if a.shape() != b.shape() {
        return Err(Error::Dim(format!(
            "samiro_loss shapes differ after projection: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let diff = a.sub(&b)?;
    let quad = diff.mul(&diff)?.div(&w.floored_abs())?;
    Ok(quad.add(&w.raw.log_abs().relu())?.mean_all())
}

/// Mean squared error against the projected target features; no attention,
/// no normalization, no channel scale.
pub fn plain_l2_distill<T: Element>(
    f_s: &Tensor<T>,
    f_t: &Tensor<T>,
    g: &Projection<T>,
) -> Result<Tensor<T>> {
    let b = g.forward(f_t)?;
    if f_s.shape() != b.shape() {
        return Err(Error::Dim(format!(
            "plain_l2_distill shapes differ after projection: {:?} vs {:?}",
            f_s.shape(),
            b.shape()
        )));
    }
    let diff = f_s.sub(&b)?;
    Ok(diff.mul(&diff)?.mean_all())
}

/// L = L_LD + lambda * mean(per-stage regularizers). Variant `none` or
/// lambda = 0 returns L_LD itself, keeping baselines bitwise identical.
pub fn total_loss<T: Element>(
    l_ld: &Tensor<T>,
    per_stage: &[Tensor<T>],
    cfg: &LossConfig,
) -> Result<Tensor<T>> {
    if cfg.variant == Variant::None || cfg.lambda == 0.0 {
        return Ok(l_ld.clone());
    }
    if per_stage.is_empty() {
        return Err(Error::Config(
            "total_loss: empty stage loss list with an active regularizer variant".into(),
        ));
    }
    let mut acc = per_stage[0].clone();
    for s in &per_stage[1..] {
        acc = acc.add(s)?;
    }
    let mean = acc.scale(T::from_f64(1.0 / per_stage.len() as f64));
    l_ld.add(&mean.scale(T::from_f64(cfg.lambda)))
}

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7].
pub fn lane_detection_loss<T: Element>(
    prob_map: &Tensor<T>,
    gt_mask: &Tensor<T>,
) -> Result<Tensor<T>> {
    if prob_map.shape() != gt_mask.shape() {
        return Err(Error::Dim(format!(
            "lane_detection_loss shapes differ: {:?} vs {:?}",
            prob_map.shape(),
            gt_mask.shape()
        )));
    }
    if gt_mask
        .data()
        .iter()
        .any(|&v| v != T::zero() && v != T::one())
    {
        return Err(Error::Config(
            "lane_detection_loss: ground-truth mask must be binary".into(),
        ));
    }
    let lo = T::from_f64(1e-7);
    let hi = T::from_f64(1.0 - 1e-7);
    let p = prob_map.clamp(lo, hi);
    let one_minus_p = p.scale(-T::one()).add_scalar(T::one());
    let one_minus_y = gt_mask.scale(-T::one()).add_scalar(T::one());
    let ll = gt_mask
        .mul(&p.log_abs())?
        .add(&one_minus_y.mul(&one_minus_p.log_abs())?)?;
    Ok(ll.mean_all().scale(-T::one()))
}

/// Pools the spatially larger of two maps down by 2x2 averaging until the
/// extents match; errors if the sizes are not power-of-two related.
pub fn align_spatial<T: Element>(a: Tensor<T>, b: Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut a = a;
    let mut b = b;
    loop {
        let (sa, sb) = (a.shape(), b.shape());
        if sa[1] == sb[1] && sa[2] == sb[2] {
            return Ok((a, b));
        }
        if sa[1] > sb[1] && sa[2] > sb[2] {
            a = a.avg_pool2x2()?;
        } else if sb[1] > sa[1] && sb[2] > sa[2] {
            b = b.avg_pool2x2()?;
        } else {
            return Err(Error::Dim(format!(
                "cannot pair stages with spatial extents {:?} and {:?}",
                sa, sb
            )));
        }
    }
}
