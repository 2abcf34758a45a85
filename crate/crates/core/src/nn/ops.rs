//! Forward kernels and their adjoints.
//!
//! Every differentiable operation exists twice: as a pure function on
//! [`Tensor4`] values (used for inference and by the tape), and as a
//! `*_backward` companion that maps an output gradient to input gradients.
//! Convolutions lower to GEMM through an explicit im2col buffer.

use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};

/// Geometry of one strided, zero-padded 2D correlation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    fn new(
        channels: usize,
        in_h: usize,
        in_w: usize,
        k_h: usize,
        k_w: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("stride must be >= 1"));
        }
        if in_h + 2 * pad < k_h {
            return Err(Error::Shape {
                op: "conv2d",
                dim: "padded height",
                expected: k_h,
                actual: in_h + 2 * pad,
            });
        }
        if in_w + 2 * pad < k_w {
            return Err(Error::Shape {
                op: "conv2d",
                dim: "padded width",
                expected: k_w,
                actual: in_w + 2 * pad,
            });
        }
        Ok(Self {
            channels,
            in_h,
            in_w,
            k_h,
            k_w,
            stride,
            pad,
            out_h: (in_h + 2 * pad - k_h) / stride + 1,
            out_w: (in_w + 2 * pad - k_w) / stride + 1,
        })
    }

    #[inline]
    fn col_rows(&self) -> usize {
        self.channels * self.k_h * self.k_w
    }

    #[inline]
    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Range of output positions `o` with `0 <= o*stride - pad + k < len`.
    #[inline]
    fn valid_range(&self, k: usize, len: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // o*s + off >= 0  ->  o >= ceil(-off / s)
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // o*s + off <= len - 1  ->  o <= floor((len - 1 - off) / s)
        let hi_num = len as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.min(out as isize) as usize;
        let hi_excl = ((hi + 1).max(0) as usize).min(out);
        (lo, hi_excl.max(lo))
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let ncols = g.col_cols();
    debug_assert_eq!(cols.len(), g.col_rows() * ncols);
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.k_h {
            let (oh_lo, oh_hi) = g.valid_range(ki, g.in_h, g.out_h);
            for kj in 0..g.k_w {
                let (ow_lo, ow_hi) = g.valid_range(kj, g.in_w, g.out_w);
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                // only the padding taps need zeros; the rest is overwritten
                dst[..oh_lo * g.out_w].fill(T::ZERO);
                dst[oh_hi.max(oh_lo) * g.out_w..].fill(T::ZERO);
                for oh in oh_lo..oh_hi {
                    let ih = oh * g.stride + ki - g.pad;
                    let src_row = &plane[ih * g.in_w..(ih + 1) * g.in_w];
                    let drow = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    drow[..ow_lo].fill(T::ZERO);
                    drow[ow_hi.max(ow_lo)..].fill(T::ZERO);
                    if g.stride == 1 {
                        let iw0 = ow_lo + kj - g.pad;
                        let n = ow_hi - ow_lo;
                        drow[ow_lo..ow_hi].copy_from_slice(&src_row[iw0..iw0 + n]);
                    } else {
                        for ow in ow_lo..ow_hi {
                            drow[ow] = src_row[ow * g.stride + kj - g.pad];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let ncols = g.col_cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.k_h {
            let (oh_lo, oh_hi) = g.valid_range(ki, g.in_h, g.out_h);
            for kj in 0..g.k_w {
                let (ow_lo, ow_hi) = g.valid_range(kj, g.in_w, g.out_w);
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oh in oh_lo..oh_hi {
                    let ih = oh * g.stride + ki - g.pad;
                    let dst_row = &mut plane[ih * g.in_w..(ih + 1) * g.in_w];
                    let srow = &src[oh * g.out_w..(oh + 1) * g.out_w];
                    if g.stride == 1 {
                        let iw0 = ow_lo + kj - g.pad;
                        for (d, &s) in dst_row[iw0..iw0 + (ow_hi - ow_lo)]
                            .iter_mut()
                            .zip(&srow[ow_lo..ow_hi])
                        {
                            *d += s;
                        }
                    } else {
                        for ow in ow_lo..ow_hi {
                            dst_row[ow * g.stride + kj - g.pad] += srow[ow];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// True when im2col is the identity and can be skipped.
#[inline]
fn is_pointwise(g: &ConvGeom) -> bool {
    g.k_h == 1 && g.k_w == 1 && g.stride == 1 && g.pad == 0
}

fn check_rank_match(op: &'static str, dim: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape {
            op,
            dim,
            expected,
            actual,
        });
    }
    Ok(())
}

fn conv_geom<T: Real>(input: &Tensor4<T>, kernel: &Tensor4<T>, stride: usize, pad: usize) -> Result<ConvGeom> {
    check_rank_match("conv2d", "input channels", kernel.channels(), input.channels())?;
    ConvGeom::new(
        input.channels(),
        input.height(),
        input.width(),
        kernel.height(),
        kernel.width(),
        stride,
        pad,
    )
}

/// Strided zero-padded cross-correlation. `kernel` is `(out, in, kh, kw)`.
pub fn conv2d<T: Real>(input: &Tensor4<T>, kernel: &Tensor4<T>, stride: usize, padding: usize) -> Result<Tensor4<T>> {
    let g = conv_geom(input, kernel, stride, padding)?;
    let c_out = kernel.batch();
    let (k, m) = (g.col_rows(), g.col_cols());
    let mut out = Tensor4::zeros([input.batch(), c_out, g.out_h, g.out_w]);
    let mut cols = if is_pointwise(&g) { Vec::new() } else { vec![T::ZERO; k * m] };
    for n in 0..input.batch() {
        let b: &[T] = if is_pointwise(&g) {
            input.sample(n)
        } else {
            im2col(input.sample(n), &g, &mut cols);
            &cols
        };
        T::gemm(
            c_out,
            k,
            m,
            T::ONE,
            kernel.data(),
            (k as isize, 1),
            b,
            (m as isize, 1),
            T::ZERO,
            out.sample_mut(n),
            (m as isize, 1),
        );
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its input and kernel.
pub fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    kernel: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    stride: usize,
    padding: usize,
    need_input: bool,
    need_kernel: bool,
) -> Result<(Option<Tensor4<T>>, Option<Tensor4<T>>)> {
    let g = conv_geom(input, kernel, stride, padding)?;
    let c_out = kernel.batch();
    let (k, m) = (g.col_rows(), g.col_cols());
    let pointwise = is_pointwise(&g);
    let mut cols = if pointwise { Vec::new() } else { vec![T::ZERO; k * m] };
    let mut d_in = need_input.then(|| Tensor4::zeros(input.shape()));
    let mut d_k = need_kernel.then(|| Tensor4::zeros(kernel.shape()));
    for n in 0..input.batch() {
        let dy = grad_out.sample(n);
        if let Some(dk) = d_k.as_mut() {
            let b: &[T] = if pointwise {
                input.sample(n)
            } else {
                im2col(input.sample(n), &g, &mut cols);
                &cols
            };
            // dK += dY · colsᵀ
            T::gemm(
                c_out,
                m,
                k,
                T::ONE,
                dy,
                (m as isize, 1),
                b,
                (1, m as isize),
                T::ONE,
                dk.data_mut(),
                (k as isize, 1),
            );
        }
        if let Some(dx) = d_in.as_mut() {
            // dcols = Kᵀ · dY
            if pointwise {
                T::gemm(
                    k,
                    c_out,
                    m,
                    T::ONE,
                    kernel.data(),
                    (1, k as isize),
                    dy,
                    (m as isize, 1),
                    T::ZERO,
                    dx.sample_mut(n),
                    (m as isize, 1),
                );
            } else {
                T::gemm(
                    k,
                    c_out,
                    m,
                    T::ONE,
                    kernel.data(),
                    (1, k as isize),
                    dy,
                    (m as isize, 1),
                    T::ZERO,
                    &mut cols,
                    (m as isize, 1),
                );
                col2im(&cols, &g, dx.sample_mut(n));
            }
        }
    }
    Ok((d_in, d_k))
}

fn transpose_geom<T: Real>(input: &Tensor4<T>, kernel: &Tensor4<T>, stride: usize, pad: usize) -> Result<ConvGeom> {
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    check_rank_match("conv2d_transpose", "input channels", kernel.batch(), input.channels())?;
    let (kh, kw) = (kernel.height(), kernel.width());
    let full_h = (input.height() - 1) * stride + kh;
    let full_w = (input.width() - 1) * stride + kw;
    if full_h <= 2 * pad || full_w <= 2 * pad {
        return Err(Error::Shape {
            op: "conv2d_transpose",
            dim: "output size",
            expected: 2 * pad + 1,
            actual: full_h.min(full_w),
        });
    }
    // The transposed op scatters into an image whose forward conv has the
    // input's spatial size.
    let g = ConvGeom::new(kernel.channels(), full_h - 2 * pad, full_w - 2 * pad, kh, kw, stride, pad)?;
    debug_assert_eq!((g.out_h, g.out_w), (input.height(), input.width()));
    Ok(g)
}

/// Adjoint of [`conv2d`]. `kernel` is `(in, out, kh, kw)`; the output has
/// spatial size `(H - 1)·stride − 2·padding + kH`.
pub fn conv2d_transpose<T: Real>(
    input: &Tensor4<T>,
    kernel: &Tensor4<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor4<T>> {
    let g = transpose_geom(input, kernel, stride, padding)?;
    let c_in = input.channels();
    let (k, m) = (g.col_rows(), g.col_cols());
    let mut out = Tensor4::zeros([input.batch(), g.channels, g.in_h, g.in_w]);
    let mut cols = vec![T::ZERO; k * m];
    for n in 0..input.batch() {
        // cols = Kᵀ · x
        T::gemm(
            k,
            c_in,
            m,
            T::ONE,
            kernel.data(),
            (1, k as isize),
            input.sample(n),
            (m as isize, 1),
            T::ZERO,
            &mut cols,
            (m as isize, 1),
        );
        col2im(&cols, &g, out.sample_mut(n));
    }
    Ok(out)
}

pub fn conv2d_transpose_backward<T: Real>(
    input: &Tensor4<T>,
    kernel: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    stride: usize,
    padding: usize,
    need_input: bool,
    need_kernel: bool,
) -> Result<(Option<Tensor4<T>>, Option<Tensor4<T>>)> {
    let g = transpose_geom(input, kernel, stride, padding)?;
    let c_in = input.channels();
    let (k, m) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::ZERO; k * m];
    let mut d_in = need_input.then(|| Tensor4::zeros(input.shape()));
    let mut d_k = need_kernel.then(|| Tensor4::zeros(kernel.shape()));
    for n in 0..input.batch() {
        im2col(grad_out.sample(n), &g, &mut cols);
        if let Some(dx) = d_in.as_mut() {
            T::gemm(
                c_in,
                k,
                m,
                T::ONE,
                kernel.data(),
                (k as isize, 1),
                &cols,
                (m as isize, 1),
                T::ZERO,
                dx.sample_mut(n),
                (m as isize, 1),
            );
        }
        if let Some(dk) = d_k.as_mut() {
            T::gemm(
                c_in,
                m,
                k,
                T::ONE,
                input.sample(n),
                (m as isize, 1),
                &cols,
                (1, m as isize),
                T::ONE,
                dk.data_mut(),
                (k as isize, 1),
            );
        }
    }
    Ok((d_in, d_k))
}

/// Adds a `(1, C, 1, 1)` bias to every plane of channel `c`.
pub fn add_channel_bias<T: Real>(input: &Tensor4<T>, bias: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_rank_match("add_channel_bias", "bias channels", input.channels(), bias.len())?;
    let mut out = input.clone();
    for n in 0..input.batch() {
        for c in 0..input.channels() {
            let b = bias.data()[c];
            for v in out.plane_mut(n, c) {
                *v += b;
            }
        }
    }
    Ok(out)
}

pub fn channel_sums<T: Real>(grad: &Tensor4<T>) -> Tensor4<T> {
    let mut out = Tensor4::zeros([1, grad.channels(), 1, 1]);
    for n in 0..grad.batch() {
        for c in 0..grad.channels() {
            out.data_mut()[c] += grad.plane(n, c).iter().copied().sum();
        }
    }
    out
}

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

pub fn leaky_relu<T: Real>(x: &Tensor4<T>, slope: f64) -> Tensor4<T> {
    let s = T::from_f64(slope);
    x.map(|v| if v > T::ZERO { v } else { v * s })
}

pub fn tanh<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(T::tanh)
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(sigmoid_scalar)
}

/// Softmax across the channel axis at every pixel.
pub fn softmax_channel<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut out = x.clone();
    for s in 0..n {
        let sample = out.sample_mut(s);
        for p in 0..hw {
            let mut mx = sample[p];
            for ch in 1..c {
                mx = mx.max(sample[ch * hw + p]);
            }
            let mut z = T::ZERO;
            for ch in 0..c {
                let e = (sample[ch * hw + p] - mx).exp();
                sample[ch * hw + p] = e;
                z += e;
            }
            for ch in 0..c {
                sample[ch * hw + p] = sample[ch * hw + p] / z;
            }
        }
    }
    out
}

pub fn softmax_channel_backward<T: Real>(out: &Tensor4<T>, grad: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = out.shape();
    let hw = h * w;
    let mut dx = Tensor4::zeros(out.shape());
    for s in 0..n {
        let y = out.sample(s);
        let dy = grad.sample(s);
        let d = dx.sample_mut(s);
        for p in 0..hw {
            let mut dot = T::ZERO;
            for ch in 0..c {
                dot += y[ch * hw + p] * dy[ch * hw + p];
            }
            for ch in 0..c {
                d[ch * hw + p] = y[ch * hw + p] * (dy[ch * hw + p] - dot);
            }
        }
    }
    dx
}

/// Per-sample, per-channel normalization without affine parameters.
/// Returns the output and the inverse standard deviation of each plane.
pub fn instance_norm<T: Real>(x: &Tensor4<T>, eps: f64) -> (Tensor4<T>, Vec<T>) {
    let [n, c, h, w] = x.shape();
    let hw = T::from_f64((h * w) as f64);
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(n * c);
    for s in 0..n {
        for ch in 0..c {
            let plane = out.plane_mut(s, ch);
            let mean = plane.iter().copied().sum::<T>() / hw;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / hw;
            let istd = T::ONE / (var + T::from_f64(eps)).sqrt();
            for v in plane.iter_mut() {
                *v = (*v - mean) * istd;
            }
            inv_std.push(istd);
        }
    }
    (out, inv_std)
}

pub fn instance_norm_backward<T: Real>(out: &Tensor4<T>, inv_std: &[T], grad: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = out.shape();
    let hw = T::from_f64((h * w) as f64);
    let mut dx = Tensor4::zeros(out.shape());
    for s in 0..n {
        for ch in 0..c {
            let y = out.plane(s, ch);
            let dy = grad.plane(s, ch);
            let mean_dy = dy.iter().copied().sum::<T>() / hw;
            let mean_dy_y = y.iter().zip(dy).map(|(&a, &b)| a * b).sum::<T>() / hw;
            let istd = inv_std[s * c + ch];
            for ((d, &yv), &g) in dx.plane_mut(s, ch).iter_mut().zip(y).zip(dy) {
                *d = istd * (g - mean_dy - yv * mean_dy_y);
            }
        }
    }
    dx
}

/// Concatenates along the channel axis.
pub fn concat_channels<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [n, ca, h, w] = a.shape();
    check_rank_match("concat_channels", "batch", n, b.batch())?;
    check_rank_match("concat_channels", "height", h, b.height())?;
    check_rank_match("concat_channels", "width", w, b.width())?;
    let cb = b.channels();
    let mut data = Vec::with_capacity(a.len() + b.len());
    for s in 0..n {
        data.extend_from_slice(a.sample(s));
        data.extend_from_slice(b.sample(s));
    }
    Tensor4::from_vec([n, ca + cb, h, w], data)
}

pub fn split_channels<T: Real>(x: &Tensor4<T>, first: usize) -> (Tensor4<T>, Tensor4<T>) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut a = Vec::with_capacity(n * first * hw);
    let mut b = Vec::with_capacity(n * (c - first) * hw);
    for s in 0..n {
        let smp = x.sample(s);
        a.extend_from_slice(&smp[..first * hw]);
        b.extend_from_slice(&smp[first * hw..]);
    }
    (
        Tensor4::from_vec([n, first, h, w], a).expect("split sizes"),
        Tensor4::from_vec([n, c - first, h, w], b).expect("split sizes"),
    )
}

/// 2×2 max pooling with stride 2 (odd trailing rows/columns dropped).
pub fn max_pool2<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = ((h / 2).max(1), (w / 2).max(1));
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    for s in 0..n {
        for ch in 0..c {
            let src = x.plane(s, ch);
            let dst = out.plane_mut(s, ch);
            for i in 0..oh {
                for j in 0..ow {
                    let mut m = src[(2 * i).min(h - 1) * w + (2 * j).min(w - 1)];
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let (r, q) = (2 * i + di, 2 * j + dj);
                        if r < h && q < w {
                            m = m.max(src[r * w + q]);
                        }
                    }
                    dst[i * ow + j] = m;
                }
            }
        }
    }
    out
}

/// Spatial mean of every plane, `(N, C, 1, 1)`.
pub fn global_avg_pool<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.shape();
    let hw = T::from_f64((h * w) as f64);
    let mut out = Tensor4::zeros([n, c, 1, 1]);
    for s in 0..n {
        for ch in 0..c {
            let m = x.plane(s, ch).iter().copied().sum::<T>() / hw;
            out.set(s, ch, 0, 0, m);
        }
    }
    out
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest<T: Real>(x: &Tensor4<T>, factor: usize) -> Tensor4<T> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    for s in 0..n {
        for ch in 0..c {
            let src = x.plane(s, ch);
            let dst = out.plane_mut(s, ch);
            for i in 0..oh {
                for j in 0..ow {
                    dst[i * ow + j] = src[(i / factor) * w + j / factor];
                }
            }
        }
    }
    out
}
