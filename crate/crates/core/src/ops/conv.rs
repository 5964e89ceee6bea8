//! Direct 2-D cross-correlation kernels in NCHW layout.
//!
//! Convolution weights are `[out, in, k, k]`. Transposed-convolution weights
//! are `[in, out, k, k]`, so a transposed convolution with weight `W` is the
//! exact adjoint of the convolution with the same `W` and geometry.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub stride: usize,
    pub pad: usize,
}

impl Geometry {
    pub const fn new(stride: usize, pad: usize) -> Self {
        Self { stride, pad }
    }

    pub fn conv_out(&self, size: usize, k: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Invalid("stride must be at least 1".into()));
        }
        if size + 2 * self.pad < k {
            return Err(shape_err(
                "conv2d",
                format!("kernel {k} does not fit input {size} with pad {}", self.pad),
            ));
        }
        Ok((size + 2 * self.pad - k) / self.stride + 1)
    }

    pub fn transpose_out(&self, size: usize, k: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Invalid("stride must be at least 1".into()));
        }
        let full = (size - 1) * self.stride + k;
        if full <= 2 * self.pad {
            return Err(shape_err(
                "conv2d_transpose",
                format!("padding {} consumes output of size {full}", self.pad),
            ));
        }
        Ok(full - 2 * self.pad)
    }
}

fn square_kernel<T: Real>(w: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    let (a, b, kh, kw) = w.dims4()?;
    if kh != kw {
        return Err(shape_err(op, format!("kernel must be square, got {kh}x{kw}")));
    }
    Ok((a, b, kh))
}

/// Sum over the K×K window: `out[n,o,oy,ox] = Σ_c Σ_ky Σ_kx x[n,c,iy,ix]·w[o,c,ky,kx]`
/// with `iy = oy·s + ky − p` (out-of-range taps read zero).
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: Geometry,
) -> Result<Tensor<T>> {
    let (n, c, h, wd) = x.dims4()?;
    let (o, wc, k) = square_kernel(w, "conv2d")?;
    if wc != c {
        return Err(shape_err(
            "conv2d",
            format!("input has {c} channels, weight expects {wc}"),
        ));
    }
    check_bias(bias, o, "conv2d")?;
    let oh = g.conv_out(h, k)?;
    let ow = g.conv_out(wd, k)?;
    let mut out = Vec::with_capacity(n * o * oh * ow);
    let xd = x.data();
    let wdat = w.data();
    let mut row = alloc::vec![T::zero(); ow];
    for b in 0..n {
        for oc in 0..o {
            let b0 = bias.map_or(T::zero(), |t| t.data()[oc]);
            for oy in 0..oh {
                row.iter_mut().for_each(|v| *v = b0);
                for ic in 0..c {
                    let xplane = &xd[(b * c + ic) * h * wd..(b * c + ic + 1) * h * wd];
                    let wbase = (oc * c + ic) * k * k;
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &xplane[iy as usize * wd..(iy as usize + 1) * wd];
                        for kx in 0..k {
                            let wv = wdat[wbase + ky * k + kx];
                            for (ox, acc) in row.iter_mut().enumerate() {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix >= 0 && ix < wd as isize {
                                    *acc = *acc + xrow[ix as usize] * wv;
                                }
                            }
                        }
                    }
                }
                out.extend_from_slice(&row);
            }
        }
    }
    Tensor::new([n, o, oh, ow], out)
}

/// Adjoint of [`conv2d`] with respect to its input: scatters `gy` back through
/// the window into a tensor of `in_shape` spatial extent.
pub fn conv2d_backward_input<T: Real>(
    gy: &Tensor<T>,
    w: &Tensor<T>,
    in_h: usize,
    in_w: usize,
    g: Geometry,
) -> Result<Tensor<T>> {
    let (n, o, oh, ow) = gy.dims4()?;
    let (wo, c, k) = square_kernel(w, "conv2d_backward_input")?;
    if wo != o {
        return Err(shape_err(
            "conv2d_backward_input",
            format!("gradient has {o} channels, weight produces {wo}"),
        ));
    }
    let mut gx = alloc::vec![T::zero(); n * c * in_h * in_w];
    let gyd = gy.data();
    let wdat = w.data();
    for b in 0..n {
        for oc in 0..o {
            let gplane = &gyd[(b * o + oc) * oh * ow..(b * o + oc + 1) * oh * ow];
            for ic in 0..c {
                let xbase = (b * c + ic) * in_h * in_w;
                let wbase = (oc * c + ic) * k * k;
                for oy in 0..oh {
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        let xrow = xbase + iy as usize * in_w;
                        for kx in 0..k {
                            let wv = wdat[wbase + ky * k + kx];
                            for ox in 0..ow {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix >= 0 && ix < in_w as isize {
                                    let gi = xrow + ix as usize;
                                    gx[gi] = gx[gi] + gplane[oy * ow + ox] * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new([n, c, in_h, in_w], gx)
}

/// Gradient of [`conv2d`] with respect to its weight.
pub fn conv2d_backward_weight<T: Real>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    k: usize,
    g: Geometry,
) -> Result<Tensor<T>> {
    let (n, c, h, wd) = x.dims4()?;
    let (gn, o, oh, ow) = gy.dims4()?;
    if gn != n {
        return Err(shape_err("conv2d_backward_weight", "batch mismatch"));
    }
    let mut gw = alloc::vec![T::zero(); o * c * k * k];
    let xd = x.data();
    let gyd = gy.data();
    for b in 0..n {
        for oc in 0..o {
            let gplane = &gyd[(b * o + oc) * oh * ow..(b * o + oc + 1) * oh * ow];
            for ic in 0..c {
                let xplane = &xd[(b * c + ic) * h * wd..(b * c + ic + 1) * h * wd];
                let wbase = (oc * c + ic) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let mut acc = T::zero();
                        for oy in 0..oh {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = &xplane[iy as usize * wd..(iy as usize + 1) * wd];
                            for ox in 0..ow {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix >= 0 && ix < wd as isize {
                                    acc = acc + xrow[ix as usize] * gplane[oy * ow + ox];
                                }
                            }
                        }
                        gw[wbase + ky * k + kx] = gw[wbase + ky * k + kx] + acc;
                    }
                }
            }
        }
    }
    Tensor::new([o, c, k, k], gw)
}

/// Per-channel sum of an NCHW gradient, i.e. the bias gradient.
pub fn channel_sums<T: Real>(gy: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = gy.dims4()?;
    let plane = h * w;
    let mut out = alloc::vec![T::zero(); c];
    for b in 0..n {
        for (ch, acc) in out.iter_mut().enumerate() {
            let start = (b * c + ch) * plane;
            *acc = *acc + gy.data()[start..start + plane].iter().copied().sum::<T>();
        }
    }
    Tensor::new([c], out)
}

/// Transposed convolution with weight `[in, out, k, k]`.
pub fn conv2d_transpose<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: Geometry,
) -> Result<Tensor<T>> {
    let (_, c, h, wd) = x.dims4()?;
    let (wi, o, k) = square_kernel(w, "conv2d_transpose")?;
    if wi != c {
        return Err(shape_err(
            "conv2d_transpose",
            format!("input has {c} channels, weight expects {wi}"),
        ));
    }
    check_bias(bias, o, "conv2d_transpose")?;
    let oh = g.transpose_out(h, k)?;
    let ow = g.transpose_out(wd, k)?;
    let mut out = conv2d_backward_input(x, w, oh, ow, g)?;
    if let Some(b) = bias {
        add_channel_bias(&mut out, b);
    }
    Ok(out)
}

fn check_bias<T: Real>(bias: Option<&Tensor<T>>, o: usize, op: &'static str) -> Result<()> {
    match bias {
        Some(b) if b.len() != o => Err(shape_err(
            op,
            format!("bias has {} entries for {o} output channels", b.len()),
        )),
        _ => Ok(()),
    }
}

fn add_channel_bias<T: Real>(out: &mut Tensor<T>, b: &Tensor<T>) {
    let (n, c, h, w) = match out.dims4() {
        Ok(d) => d,
        Err(_) => return,
    };
    let plane = h * w;
    let data = out.data_mut();
    for bi in 0..n {
        for ch in 0..c {
            let bv = b.data()[ch];
            for v in &mut data[(bi * c + ch) * plane..(bi * c + ch + 1) * plane] {
                *v = *v + bv;
            }
        }
    }
}
