use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::graph::Var;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    batch: usize,
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new(x: &[usize], k: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (&[batch, in_c, h, w], &[out_c, k_in, kh, kw]) = (x, k) else {
            return Err(TensorError::Shape {
                op: "conv2d",
                detail: format!("input {x:?} and kernel {k:?} must both be rank 4"),
            });
        };
        if k_in != in_c || stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(TensorError::Shape {
                op: "conv2d",
                detail: format!("input {x:?}, kernel {k:?}, stride {stride}, padding {pad}"),
            });
        }
        let out_h = (h + 2 * pad - kh) / stride + 1;
        let out_w = (w + 2 * pad - kw) / stride + 1;
        Ok(Self { batch, in_c, h, w, out_c, kh, kw, stride, pad, out_h, out_w })
    }

    fn patch(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate for output coordinate `o` and kernel tap `k`, if inside.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.pad).filter(|&i| i < extent)
    }

    /// Output coordinates `lo..hi` whose tap `k` lands inside `0..extent`.
    #[inline]
    fn valid(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > k { (self.pad - k).div_ceil(s) } else { 0 };
        let hi = if extent + self.pad > k { ((extent + self.pad - k - 1) / s + 1).min(out) } else { 0 };
        (lo.min(hi), hi)
    }
}

/// Calls `f(row, n, oy, ox_lo, ox_hi, plane_offset_of_first_source)` for every
/// non-empty run of in-bounds taps.
#[inline]
fn for_each_run(g: &Geometry, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
    for c in 0..g.in_c {
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid(ky, g.h, g.out_h);
            for kx in 0..g.kw {
                let (ox_lo, ox_hi) = g.valid(kx, g.w, g.out_w);
                if ox_lo == ox_hi {
                    continue;
                }
                let row = (c * g.kh + ky) * g.kw + kx;
                for n in 0..g.batch {
                    let plane = (n * g.in_c + c) * g.h * g.w;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let ix = ox_lo * g.stride + kx - g.pad;
                        f(row, n, oy, ox_lo, ox_hi, plane + iy * g.w + ix);
                    }
                }
            }
        }
    }
}

/// Unfolds `x` into a `[patch, batch * positions]` matrix.
fn im2col<T: Float>(x: &[T], g: &Geometry) -> Vec<T> {
    let (cols, p, s) = (g.batch * g.positions(), g.positions(), g.stride);
    let mut out = vec![T::zero(); g.patch() * cols];
    for_each_run(g, |row, n, oy, lo, hi, src| {
        let d = row * cols + n * p + oy * g.out_w;
        let dst = &mut out[d + lo..d + hi];
        if s == 1 {
            dst.copy_from_slice(&x[src..src + dst.len()]);
        } else {
            for (i, v) in dst.iter_mut().enumerate() {
                *v = x[src + i * s];
            }
        }
    });
    out
}

/// Folds a `[patch, batch * positions]` matrix back onto the input, summing overlaps.
fn col2im<T: Float>(cols_data: &[T], g: &Geometry) -> Vec<T> {
    let (cols, p, s) = (g.batch * g.positions(), g.positions(), g.stride);
    let mut out = vec![T::zero(); g.batch * g.in_c * g.h * g.w];
    for_each_run(g, |row, n, oy, lo, hi, dst| {
        let o = row * cols + n * p + oy * g.out_w;
        let src = &cols_data[o + lo..o + hi];
        if s == 1 {
            for (d, &v) in out[dst..dst + src.len()].iter_mut().zip(src) {
                *d += v;
            }
        } else {
            for (i, &v) in src.iter().enumerate() {
                out[dst + i * s] += v;
            }
        }
    });
    out
}

/// `[out_c, batch * positions]` <-> `[batch, out_c, positions]`
fn channel_major_to_batch_major<T: Float>(src: &[T], g: &Geometry) -> Vec<T> {
    let p = g.positions();
    let mut out = vec![T::zero(); src.len()];
    for co in 0..g.out_c {
        for n in 0..g.batch {
            let s = &src[(co * g.batch + n) * p..(co * g.batch + n + 1) * p];
            out[(n * g.out_c + co) * p..(n * g.out_c + co + 1) * p].copy_from_slice(s);
        }
    }
    out
}

fn batch_major_to_channel_major<T: Float>(src: &[T], g: &Geometry) -> Vec<T> {
    let p = g.positions();
    let mut out = vec![T::zero(); src.len()];
    for n in 0..g.batch {
        for co in 0..g.out_c {
            let s = &src[(n * g.out_c + co) * p..(n * g.out_c + co + 1) * p];
            out[(co * g.batch + n) * p..(co * g.batch + n + 1) * p].copy_from_slice(s);
        }
    }
    out
}

impl<'g, T: Float> Var<'g, T> {
    /// 2-D cross-correlation of `[N, C_in, H, W]` with a `[C_out, C_in, kh, kw]`
    /// kernel, symmetric zero padding, no bias.
    pub fn conv2d(self, kernel: Var<'g, T>, stride: usize, padding: usize) -> Result<Var<'g, T>> {
        let (x, k) = (self.value(), kernel.value());
        let geo = Geometry::new(x.shape(), k.shape(), stride, padding)?;
        let cols = im2col(x.data(), &geo);
        let n_cols = geo.batch * geo.positions();
        let mut out_t = vec![T::zero(); geo.out_c * n_cols];
        T::gemm(
            geo.out_c,
            geo.patch(),
            n_cols,
            T::one(),
            k.data(),
            (geo.patch() as isize, 1),
            &cols,
            (n_cols as isize, 1),
            T::zero(),
            &mut out_t,
            (n_cols as isize, 1),
        );
        let y = Tensor::from_vec(
            [geo.batch, geo.out_c, geo.out_h, geo.out_w],
            channel_major_to_batch_major(&out_t, &geo),
        )?;
        Ok(self.graph().record(y, &[self, kernel], move || {
            Box::new(move |g, need| {
                let g_t = batch_major_to_channel_major(g.data(), &geo);
                let dx = need[0].then(|| {
                    let mut d_cols = vec![T::zero(); geo.patch() * n_cols];
                    // kernel^T [patch, out_c] x g_t [out_c, cols]
                    T::gemm(
                        geo.patch(),
                        geo.out_c,
                        n_cols,
                        T::one(),
                        k.data(),
                        (1, geo.patch() as isize),
                        &g_t,
                        (n_cols as isize, 1),
                        T::zero(),
                        &mut d_cols,
                        (n_cols as isize, 1),
                    );
                    Tensor::from_vec([geo.batch, geo.in_c, geo.h, geo.w], col2im(&d_cols, &geo))
                        .expect("input shape")
                });
                let dk = need[1].then(|| {
                    let mut d_k = vec![T::zero(); geo.out_c * geo.patch()];
                    // g_t [out_c, cols] x cols^T [cols, patch]
                    T::gemm(
                        geo.out_c,
                        n_cols,
                        geo.patch(),
                        T::one(),
                        &g_t,
                        (n_cols as isize, 1),
                        &cols,
                        (1, n_cols as isize),
                        T::zero(),
                        &mut d_k,
                        (geo.patch() as isize, 1),
                    );
                    Tensor::from_vec([geo.out_c, geo.in_c, geo.kh, geo.kw], d_k).expect("kernel shape")
                });
                vec![dx, dk]
            })
        }))
    }
}

/// Direct nested-loop convolution, used as a reference in tests.
pub fn conv2d_reference<T: Float>(x: &Tensor<T>, k: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let geo = Geometry::new(x.shape(), k.shape(), stride, padding)?;
    let mut out = Tensor::zeros([geo.batch, geo.out_c, geo.out_h, geo.out_w]);
    let (xd, kd) = (x.data(), k.data());
    let od = out.data_mut();
    for n in 0..geo.batch {
        for co in 0..geo.out_c {
            for oy in 0..geo.out_h {
                for ox in 0..geo.out_w {
                    let mut acc = T::zero();
                    for ci in 0..geo.in_c {
                        for ky in 0..geo.kh {
                            for kx in 0..geo.kw {
                                let (Some(iy), Some(ix)) = (geo.source(oy, ky, geo.h), geo.source(ox, kx, geo.w))
                                else {
                                    continue;
                                };
                                acc += xd[((n * geo.in_c + ci) * geo.h + iy) * geo.w + ix]
                                    * kd[((co * geo.in_c + ci) * geo.kh + ky) * geo.kw + kx];
                            }
                        }
                    }
                    od[((n * geo.out_c + co) * geo.out_h + oy) * geo.out_w + ox] = acc;
                }
            }
        }
    }
    Ok(out)
}
