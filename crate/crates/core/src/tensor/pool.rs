use super::tape::{GradSink, Operation, Values};
use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Lp-norm subsampling: each output is `(mean_window x^p)^(1/p)`.
struct LpPool {
    x: Var,
    p: i32,
    kt: usize,
    kf: usize,
}

fn ipow(x: f64, p: i32) -> f64 {
    match p {
        1 => x,
        2 => x * x,
        3 => x * x * x,
        4 => {
            let x2 = x * x;
            x2 * x2
        }
        _ => x.powi(p),
    }
}

fn root(x: f64, p: i32) -> f64 {
    match p {
        2 => x.sqrt(),
        4 => x.sqrt().sqrt(),
        _ => x.powf(1.0 / p as f64),
    }
}

impl Operation for LpPool {
    fn backward(&self, values: &Values<'_>, out: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let xt = values.get(self.x);
        let (t, f) = (xt.dim(2), xt.dim(3));
        let (to, fo, kt, kf) = (t / self.kt, f / self.kf, self.kt, self.kf);
        let n = (kt * kf) as f64;
        let x = xt.data();
        let Some(gx) = sink.slot(self.x) else { return };
        // dy/dx = x^(p-1) / (n y^(p-1))
        let coef: Vec<f64> = out
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&y, &g)| if y == 0.0 { 0.0 } else { g / (n * ipow(y, self.p - 1)) })
            .collect();
        for (r, cs) in coef.chunks_exact(fo).enumerate() {
            let (plane, ot) = (r / to, r % to);
            for dt in 0..kt {
                let row = (plane * t + ot * kt + dt) * f;
                let (xr, gr) = (&x[row..row + f], &mut gx[row..row + f]);
                for ((xw, gw), &c) in xr.chunks_exact(kf).zip(gr.chunks_exact_mut(kf)).zip(cs) {
                    for (a, g) in xw.iter().zip(gw) {
                        *g += c * ipow(*a, self.p - 1);
                    }
                }
            }
        }
    }
}

impl Tape {
    /// `[B, C, T, F]` → `[B, C, T/kt, F/kf]` with an even power `p`.
    pub fn lp_pool(&mut self, x: Var, p: i32, kt: usize, kf: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || kt == 0 || kf == 0 || xs[2] % kt != 0 || xs[3] % kf != 0 {
            return Err(Error::shape("pool", format!("{xs:?} by ({kt}, {kf})")));
        }
        if p <= 0 || p % 2 != 0 {
            return Err(Error::InvalidArgument(format!("lp_pool needs an even positive p, got {p}")));
        }
        let (bc, t, f) = (xs[0] * xs[1], xs[2], xs[3]);
        let (to, fo) = (t / kt, f / kf);
        let n = (kt * kf) as f64;
        let powered: Vec<f64> = self.value(x).data().iter().map(|&a| ipow(a, p)).collect();
        let mut out = vec![0.0; bc * to * fo];
        for (r, acc) in out.chunks_exact_mut(fo).enumerate() {
            let (plane, ot) = (r / to, r % to);
            for dt in 0..kt {
                let row = (plane * t + ot * kt + dt) * f;
                for (a, w) in acc.iter_mut().zip(powered[row..row + f].chunks_exact(kf)) {
                    *a += w.iter().sum::<f64>();
                }
            }
        }
        out.iter_mut().for_each(|a| *a = root(*a / n, p));
        let value = Tensor::new(vec![xs[0], xs[1], to, fo], out)?;
        Ok(self.push(value, &[x], LpPool { x, p, kt, kf }))
    }
}
