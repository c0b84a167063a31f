//! Differentiable tensor operations.
//!
//! Every op computes its forward value eagerly and installs a backward rule
//! on the output when any input is tracked. Gradients of broadcast operands
//! are sum-reduced over the broadcast axes.

use super::{strides, Element, Tensor};
use crate::error::{Error, Result};

/// Broadcast result shape: shapes are right-aligned, each axis must match or
/// be 1 on one side.
fn bcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::Dim(format!(
                "cannot broadcast {:?} with {:?}: axis {} has extents {} and {}",
                a, b, i, da, db
            )));
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Effective strides of `shape` viewed as `out_shape`: broadcast axes get
/// stride 0 so a flat output index maps straight to an input index.
fn bcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let pad = rank - shape.len();
    let s = strides(shape);
    let mut eff = vec![0usize; rank];
    for i in 0..shape.len() {
        eff[pad + i] = if shape[i] == 1 { 0 } else { s[i] };
    }
    eff
}

fn for_each_bcast(out_shape: &[usize], ea: &[usize], eb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let numel: usize = out_shape.iter().product();
    let out_strides = strides(out_shape);
    for o in 0..numel {
        let mut ia = 0;
        let mut ib = 0;
        let mut rem = o;
        for ax in 0..out_shape.len() {
            let c = rem / out_strides[ax];
            rem %= out_strides[ax];
            ia += c * ea[ax];
            ib += c * eb[ax];
        }
        f(o, ia, ib);
    }
}

fn binary_op<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: fn(T, T) -> T,
    dfa: fn(T, T) -> T,
    dfb: fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let sa = a.shape();
    let sb = b.shape();
    let out_shape = bcast_shape(&sa, &sb)?;
    let ea = bcast_strides(&sa, &out_shape);
    let eb = bcast_strides(&sb, &out_shape);
    let da = a.data();
    let db = b.data();

    let numel: usize = out_shape.iter().product();
    let mut out = vec![T::zero(); numel];
    for_each_bcast(&out_shape, &ea, &eb, |o, ia, ib| {
        out[o] = f(da[ia], db[ib]);
    });

    let shape_bw = out_shape.clone();
    let (na, nb) = (da.len(), db.len());
    let backward = move |up: &[T]| -> Vec<Vec<T>> {
        let mut ga = vec![T::zero(); na];
        let mut gb = vec![T::zero(); nb];
        for_each_bcast(&shape_bw, &ea, &eb, |o, ia, ib| {
            ga[ia] = ga[ia] + up[o] * dfa(da[ia], db[ib]);
            gb[ib] = gb[ib] + up[o] * dfb(da[ia], db[ib]);
        });
        vec![ga, gb]
    };
    Ok(Tensor::from_op(
        out_shape,
        out,
        vec![a.clone(), b.clone()],
        Box::new(backward),
    ))
}

fn unary_op<T: Element>(x: &Tensor<T>, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Tensor<T> {
    let data = x.data();
    let out: Vec<T> = data.iter().map(|&v| f(v)).collect();
    let backward = move |up: &[T]| -> Vec<Vec<T>> {
        vec![up.iter().zip(&data).map(|(&u, &v)| u * df(v)).collect()]
    };
    Tensor::from_op(x.shape(), out, vec![x.clone()], Box::new(backward))
}

impl<T: Element> Tensor<T> {
    pub fn add(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        binary_op(self, b, |x, y| x + y, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        binary_op(self, b, |x, y| x - y, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        binary_op(self, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        if b.data().iter().any(|v| *v == T::zero()) {
            return Err(Error::DivideByZero);
        }
        binary_op(
            self,
            b,
            |x, y| x / y,
            |_, y| T::one() / y,
            |x, y| -x / (y * y),
        )
    }

    /// Multiplication by a plain scalar constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        unary_op(self, |v| v * c, move |_| c)
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        unary_op(self, |v| v + c, |_| T::one())
    }

    /// Numerically stable logistic sigmoid.
    pub fn sigmoid(&self) -> Tensor<T> {
        let data = self.data();
        let out: Vec<T> = data.iter().map(|&v| stable_sigmoid(v)).collect();
        let saved = out.clone();
        let backward = move |up: &[T]| -> Vec<Vec<T>> {
            vec![up
                .iter()
                .zip(&saved)
                .map(|(&u, &y)| u * y * (T::one() - y))
                .collect()]
        };
        Tensor::from_op(self.shape(), out, vec![self.clone()], Box::new(backward))
    }

    pub fn relu(&self) -> Tensor<T> {
        unary_op(
            self,
            |v| if v > T::zero() { v } else { T::zero() },
            |v| if v > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// log(max(|x|, 1e-8)); flat (zero gradient) inside the clamped region.
    pub fn log_abs(&self) -> Tensor<T> {
        let eps = T::from_f64(1e-8);
        unary_op(
            self,
            move |v| v.abs().max(eps).ln(),
            move |v| {
                if v.abs() > eps {
                    T::one() / v
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn sqrt_elem(&self) -> Tensor<T> {
        unary_op(
            self,
            |v| v.sqrt(),
            |v| {
                let y = v.sqrt();
                if y > T::zero() {
                    T::one() / (y + y)
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn abs_elem(&self) -> Tensor<T> {
        unary_op(
            self,
            |v| v.abs(),
            |v| {
                if v > T::zero() {
                    T::one()
                } else if v < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn clamp_min(&self, floor: T) -> Tensor<T> {
        unary_op(
            self,
            move |v| v.max(floor),
            move |v| if v > floor { T::one() } else { T::zero() },
        )
    }

    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        unary_op(
            self,
            move |v| v.max(lo).min(hi),
            move |v| {
                if v > lo && v < hi {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    fn check_axes(&self, axes: &[usize]) -> Result<()> {
        let rank = self.shape().len();
        for &ax in axes {
            if ax >= rank {
                return Err(Error::InvalidAxis { axis: ax, rank });
            }
        }
        Ok(())
    }

    /// Sum over `axes`, keeping reduced axes as extent 1.
    pub fn reduce_sum(&self, axes: &[usize]) -> Result<Tensor<T>> {
        self.check_axes(axes)?;
        let shape = self.shape();
        let mut out_shape = shape.clone();
        for &ax in axes {
            out_shape[ax] = 1;
        }
        let data = self.data();
        let out_strides = strides(&out_shape);
        let in_strides = strides(&shape);
        let n_in = data.len();
        let map = {
            let shape = shape.clone();
            let out_shape = out_shape.clone();
            move |i: usize| -> usize {
                let mut o = 0;
                let mut rem = i;
                for ax in 0..shape.len() {
                    let c = rem / in_strides[ax];
                    rem %= in_strides[ax];
                    if out_shape[ax] != 1 {
                        o += c * out_strides[ax];
                    }
                }
                o
            }
        };
        let mut out = vec![T::zero(); out_shape.iter().product()];
        for (i, &v) in data.iter().enumerate() {
            let o = map(i);
            out[o] = out[o] + v;
        }
        let backward = move |up: &[T]| -> Vec<Vec<T>> {
            vec![(0..n_in).map(|i| up[map(i)]).collect()]
        };
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(backward),
        ))
    }

    /// Mean over `axes` (keepdims).
    pub fn reduce_mean(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let shape = self.shape();
        let mut count = 1usize;
        self.check_axes(axes)?;
        for &ax in axes {
            count *= shape[ax];
        }
        Ok(self.reduce_sum(axes)?.scale(T::one() / T::from_f64(count as f64)))
    }

    /// Sum of squares over `axes` (keepdims).
    pub fn reduce_sq_l2(&self, axes: &[usize]) -> Result<Tensor<T>> {
        self.mul(self)?.reduce_sum(axes)
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let rank = self.shape().len();
        let axes: Vec<usize> = (0..rank).collect();
        let mut t = self.reduce_sum(&axes).unwrap();
        t = t.reshaped(vec![1]);
        t
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel();
        self.sum_all().scale(T::one() / T::from_f64(n as f64))
    }

    /// Same data, new shape (numel preserved). Gradient passes through.
    pub fn reshaped(&self, new_shape: Vec<usize>) -> Tensor<T> {
        let numel: usize = new_shape.iter().product();
        assert_eq!(numel, self.numel(), "reshape changes element count");
        let backward = move |up: &[T]| -> Vec<Vec<T>> { vec![up.to_vec()] };
        Tensor::from_op(new_shape, self.data(), vec![self.clone()], Box::new(backward))
    }

    /// Channel-axis concatenation of two [C,H,W] maps.
    pub fn concat_channels(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        let sa = self.shape();
        let sb = b.shape();
        if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
            return Err(Error::Dim(format!(
                "concat_channels needs [C,H,W] with equal spatial extents, got {:?} and {:?}",
                sa, sb
            )));
        }
        let na = self.numel();
        let mut data = self.data();
        data.extend(b.data());
        let nb = b.numel();
        let out_shape = vec![sa[0] + sb[0], sa[1], sa[2]];
        let backward = move |up: &[T]| -> Vec<Vec<T>> {
            vec![up[..na].to_vec(), up[na..na + nb].to_vec()]
        };
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), b.clone()],
            Box::new(backward),
        ))
    }

    /// Channel slice [start, end) of a [C,H,W] map.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 3 || end > s[0] || start >= end {
            return Err(Error::Dim(format!(
                "slice_channels {}..{} invalid for shape {:?}",
                start, end, s
            )));
        }
        let hw = s[1] * s[2];
        let data = self.data()[start * hw..end * hw].to_vec();
        let n_in = self.numel();
        let backward = move |up: &[T]| -> Vec<Vec<T>> {
            let mut g = vec![T::zero(); n_in];
            g[start * hw..end * hw].copy_from_slice(up);
            vec![g]
        };
        Ok(Tensor::from_op(
            vec![end - start, s[1], s[2]],
            data,
            vec![self.clone()],
            Box::new(backward),
        ))
    }

    /// 2-D cross-correlation: input [C_in,H,W], kernel [C_out,C_in,k,k],
    /// optional bias [C_out]. Direct loops; shapes here are tiny.
    pub fn conv2d(
        &self,
        kernel: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<T>> {
        let si = self.shape();
        let sk = kernel.shape();
        if si.len() != 3 || sk.len() != 4 {
            return Err(Error::Dim(format!(
                "conv2d expects input [C,H,W] and kernel [O,C,k,k], got {:?} and {:?}",
                si, sk
            )));
        }
        let (c_in, h, w) = (si[0], si[1], si[2]);
        let (c_out, kc, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        if kc != c_in {
            return Err(Error::Dim(format!(
                "conv2d channel mismatch: input axis 0 is {}, kernel axis 1 is {}",
                c_in, kc
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Dim(format!("conv2d kernel must be square and odd, got {}x{}", kh, kw)));
        }
        if stride == 0 {
            return Err(Error::Dim("conv2d stride must be >= 1".into()));
        }
        let span_h = h + 2 * padding;
        let span_w = w + 2 * padding;
        if span_h < kh || span_w < kw || (span_h - kh) % stride != 0 || (span_w - kw) % stride != 0 {
            return Err(Error::Dim(format!(
                "conv2d output extent not integral: input {}x{}, k {}, stride {}, padding {}",
                h, w, kh, stride, padding
            )));
        }
        let oh = (span_h - kh) / stride + 1;
        let ow = (span_w - kw) / stride + 1;
        if let Some(b) = bias {
            if b.shape() != vec![c_out] {
                return Err(Error::Dim(format!(
                    "conv2d bias shape {:?} does not match {} output channels",
                    b.shape(),
                    c_out
                )));
            }
        }

        let x = self.data();
        let k = kernel.data();
        let b = bias.map(|b| b.data());
        let mut out = vec![T::zero(); c_out * oh * ow];
        for o in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = match &b {
                        Some(b) => b[o],
                        None => T::zero(),
                    };
                    for c in 0..c_in {
                        for i in 0..kh {
                            let iy = (oy * stride + i) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for j in 0..kw {
                                let ix = (ox * stride + j) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc = acc
                                    + x[(c * h + iy as usize) * w + ix as usize]
                                        * k[((o * c_in + c) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }

        let has_bias = bias.is_some();
        let mut parents = vec![self.clone(), kernel.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let backward = move |up: &[T]| -> Vec<Vec<T>> {
            let mut gx = vec![T::zero(); c_in * h * w];
            let mut gk = vec![T::zero(); c_out * c_in * kh * kw];
            let mut gb = vec![T::zero(); c_out];
            for o in 0..c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let u = up[(o * oh + oy) * ow + ox];
                        gb[o] = gb[o] + u;
                        for c in 0..c_in {
                            for i in 0..kh {
                                let iy = (oy * stride + i) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for j in 0..kw {
                                    let ix = (ox * stride + j) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = (c * h + iy as usize) * w + ix as usize;
                                    let ki = ((o * c_in + c) * kh + i) * kw + j;
                                    gx[xi] = gx[xi] + u * k[ki];
                                    gk[ki] = gk[ki] + u * x[xi];
                                }
                            }
                        }
                    }
                }
            }
            let mut grads = vec![gx, gk];
            if has_bias {
                grads.push(gb);
            }
            grads
        };
        Ok(Tensor::from_op(
            vec![c_out, oh, ow],
            out,
            parents,
            Box::new(backward),
        ))
    }

    /// Mean over the channel axis: [C,H,W] -> [1,H,W].
    pub fn pool_channels_avg(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 3 || s[0] == 0 {
            return Err(Error::Dim(format!("pool_over_channels needs non-empty [C,H,W], got {:?}", s)));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let inv = T::one() / T::from_f64(c as f64);
        let data = self.data();
        let mut out = vec![T::zero(); h * w];
        for ch in 0..c {
            for p in 0..h * w {
                out[p] = out[p] + data[ch * h * w + p];
            }
        }
        for v in out.iter_mut() {
            *v = *v * inv;
        }
        let backward = move |up: &[T]| -> Vec<Vec<T>> {
            let mut g = vec![T::zero(); c * h * w];
            for ch in 0..c {
                for p in 0..h * w {
                    g[ch * h * w + p] = up[p] * inv;
                }
            }
            vec![g]
        };
        Ok(Tensor::from_op(vec![1, h, w], out, vec![self.clone()], Box::new(backward)))
    }

    /// Max over the channel axis: [C,H,W] -> [1,H,W]. Gradient routes to the
    /// argmax element; first channel wins ties.
    pub fn pool_channels_max(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 3 || s[0] == 0 {
            return Err(Error::Dim(format!("pool_over_channels needs non-empty [C,H,W], got {:?}", s)));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let data = self.data();
        let mut out = vec![T::zero(); h * w];
        let mut argmax = vec![0usize; h * w];
        for p in 0..h * w {
            let mut best = data[p];
            let mut best_c = 0;
            for ch in 1..c {
                let v = data[ch * h * w + p];
                if v > best {
                    best = v;
                    best_c = ch;
                }
            }
            out[p] = best;
            argmax[p] = best_c;
        }
        let backward = move |up: &[T]| -> Vec<Vec<T>> {
            let mut g = vec![T::zero(); c * h * w];
            for p in 0..h * w {
                g[argmax[p] * h * w + p] = up[p];
            }
            vec![g]
        };
        Ok(Tensor::from_op(vec![1, h, w], out, vec![self.clone()], Box::new(backward)))
    }

    /// 2x2 average pooling with stride 2; spatial extents must be even.
    pub fn avg_pool2x2(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(Error::Dim(format!("avg_pool2x2 needs even [C,H,W], got {:?}", s)));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h / 2, w / 2);
        let data = self.data();
        let q = T::from_f64(0.25);
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let base = (ch * h + 2 * y) * w + 2 * x;
                    out[(ch * oh + y) * ow + x] =
                        (data[base] + data[base + 1] + data[base + w] + data[base + w + 1]) * q;
                }
            }
        }
        let backward = move |up: &[T]| -> Vec<Vec<T>> {
            let mut g = vec![T::zero(); c * h * w];
            for ch in 0..c {
                for y in 0..oh {
                    for x in 0..ow {
                        let u = up[(ch * oh + y) * ow + x] * q;
                        let base = (ch * h + 2 * y) * w + 2 * x;
                        g[base] = u;
                        g[base + 1] = u;
                        g[base + w] = u;
                        g[base + w + 1] = u;
                    }
                }
            }
            vec![g]
        };
        Ok(Tensor::from_op(vec![c, oh, ow], out, vec![self.clone()], Box::new(backward)))
    }

    /// Nearest-neighbor spatial upsampling by an integer factor.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 3 || factor == 0 {
            return Err(Error::Dim(format!("upsample_nearest needs [C,H,W] and factor >= 1, got {:?}", s)));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h * factor, w * factor);
        let data = self.data();
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    out[(ch * oh + y) * ow + x] = data[(ch * h + y / factor) * w + x / factor];
                }
            }
        }
        let backward = move |up: &[T]| -> Vec<Vec<T>> {
            let mut g = vec![T::zero(); c * h * w];
            for ch in 0..c {
                for y in 0..oh {
                    for x in 0..ow {
                        let gi = (ch * h + y / factor) * w + x / factor;
                        g[gi] = g[gi] + up[(ch * oh + y) * ow + x];
                    }
                }
            }
            vec![g]
        };
        Ok(Tensor::from_op(vec![c, oh, ow], out, vec![self.clone()], Box::new(backward)))
    }
}

fn stable_sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
