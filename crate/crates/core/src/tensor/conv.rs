//! 3×3 convolution with unit zero padding ("same" output size), lowered to
//! a matrix product per sample through an im2col buffer.

use super::gemm::{gemm, Mat};
use super::tape::{GradSink, Operation, Values};
use super::{Tape, Tensor, Var};
use crate::{Error, Result};

const K: usize = 3;

/// `cols[(c·9 + ky·3 + kx), (h·W + w)] = x[c, h+ky-1, w+kx-1]` (zero outside).
fn im2col(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &mut cols[((ci * K + ky) * K + kx) * hw..][..hw];
                for oh in 0..h {
                    let ih = oh as isize + ky as isize - 1;
                    let dst = &mut row[oh * w..(oh + 1) * w];
                    if ih < 0 || ih >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into `dx`.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..K {
            for kx in 0..K {
                let row = &cols[((ci * K + ky) * K + kx) * hw..][..hw];
                for oh in 0..h {
                    let ih = oh as isize + ky as isize - 1;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = &row[oh * w..(oh + 1) * w];
                    let dst = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

struct Conv2d {
    x: Var,
    w: Var,
    b: Var,
}

impl Operation for Conv2d {
    fn backward(&self, values: &Values<'_>, _: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let (xt, wt) = (values.get(self.x), values.get(self.w));
        let (bsz, c, h, w) = (xt.dim(0), xt.dim(1), xt.dim(2), xt.dim(3));
        let o = wt.dim(0);
        let (hw, ck) = (h * w, c * K * K);
        let g = grad.data();
        if let Some(gb) = sink.slot(self.b) {
            for bi in 0..bsz {
                for (oi, gbo) in gb.iter_mut().enumerate() {
                    *gbo += g[(bi * o + oi) * hw..][..hw].iter().sum::<f64>();
                }
            }
        }
        let want_w = sink.wants(self.w);
        let want_x = sink.wants(self.x);
        let mut cols = vec![0.0; ck * hw];
        for bi in 0..bsz {
            let gs = &g[bi * o * hw..(bi + 1) * o * hw];
            if want_w {
                im2col(&xt.data()[bi * c * hw..(bi + 1) * c * hw], c, h, w, &mut cols);
                let gw = sink.slot(self.w).unwrap();
                gemm(o, hw, ck, 1.0, Mat::row_major(gs, hw), Mat::transposed(&cols, hw), 1.0, gw);
            }
            if want_x {
                gemm(ck, o, hw, 1.0, Mat::transposed(wt.data(), ck), Mat::row_major(gs, hw), 0.0, &mut cols);
                let gx = sink.slot(self.x).unwrap();
                col2im(&cols, c, h, w, &mut gx[bi * c * hw..(bi + 1) * c * hw]);
            }
        }
    }
}

impl Tape {
    /// `x: [B, C, H, W]`, `w: [O, C, 3, 3]`, `b: [O]` → `[B, O, H, W]`.
    pub fn conv2d_3x3_same(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != K || ws[3] != K || bs != [ws[0]] {
            return Err(Error::shape("conv", format!("input {xs:?}, weight {ws:?}, bias {bs:?}")));
        }
        let (bsz, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let o = ws[0];
        let (hw, ck) = (h * wd, c * K * K);
        let mut out = vec![0.0; bsz * o * hw];
        let mut cols = vec![0.0; ck * hw];
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        for bi in 0..bsz {
            im2col(&xv[bi * c * hw..(bi + 1) * c * hw], c, h, wd, &mut cols);
            let dst = &mut out[bi * o * hw..(bi + 1) * o * hw];
            for (oi, &bias) in bv.iter().enumerate() {
                dst[oi * hw..(oi + 1) * hw].fill(bias);
            }
            gemm(o, ck, hw, 1.0, Mat::row_major(wv, ck), Mat::row_major(&cols, hw), 1.0, dst);
        }
        let value = Tensor::new(vec![bsz, o, h, wd], out)?;
        Ok(self.push(value, &[x, w, b], Conv2d { x, w, b }))
    }
}
