//! Batch normalisation over the channel axis (axis 1) of `[B, C, T, ...]`.
//!
//! In training mode the statistics are taken over batch, time and any
//! trailing axes, counting only the valid time steps of each sample.

use super::tape::{GradSink, Operation, Values};
use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Per-channel batch statistics (biased variance) from a training pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

struct Layout {
    batch: usize,
    channels: usize,
    time: usize,
    inner: usize,
}

impl Layout {
    fn of(shape: &[usize]) -> Self {
        Self {
            batch: shape[0],
            channels: shape[1],
            time: shape.get(2).copied().unwrap_or(1),
            inner: shape.get(3..).map_or(1, |s| s.iter().product()),
        }
    }

    fn plane(&self) -> usize {
        self.time * self.inner
    }
}

struct BatchNormTrain {
    x: Var,
    gamma: Var,
    beta: Var,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    valid: Vec<usize>,
}

impl Operation for BatchNormTrain {
    fn backward(&self, values: &Values<'_>, _: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let xt = values.get(self.x);
        let l = Layout::of(xt.shape());
        let plane = l.plane();
        let (x, g) = (xt.data(), grad.data());
        let gamma = values.get(self.gamma).data();
        let n: usize = self.valid.iter().sum::<usize>() * l.inner;
        let mut sum_g = vec![0.0; l.channels];
        let mut sum_gx = vec![0.0; l.channels];
        for b in 0..l.batch {
            for c in 0..l.channels {
                let base = (b * l.channels + c) * plane;
                let (gs, xs) = (&g[base..base + plane], &x[base..base + plane]);
                let m = self.mean[c];
                let (mut a, mut d) = (0.0, 0.0);
                for (&gi, &xi) in gs.iter().zip(xs) {
                    a += gi;
                    d += gi * (xi - m);
                }
                sum_g[c] += a;
                sum_gx[c] += d * self.inv_std[c];
            }
        }
        if let Some(gg) = sink.slot(self.gamma) {
            gg.iter_mut().zip(&sum_gx).for_each(|(a, b)| *a += b);
        }
        if let Some(gb) = sink.slot(self.beta) {
            gb.iter_mut().zip(&sum_g).for_each(|(a, b)| *a += b);
        }
        let Some(gx) = sink.slot(self.x) else { return };
        let nf = n as f64;
        for b in 0..l.batch {
            let valid = self.valid[b] * l.inner;
            for c in 0..l.channels {
                let base = (b * l.channels + c) * plane;
                let (m, s) = (self.mean[c], self.inv_std[c]);
                let scale = gamma[c] * s;
                let (mg, mgx) = (sum_g[c] / nf, sum_gx[c] / nf);
                let (gs, xs, out) = (&g[base..base + plane], &x[base..base + plane], &mut gx[base..base + plane]);
                for ((o, &gi), &xi) in out[..valid].iter_mut().zip(&gs[..valid]).zip(&xs[..valid]) {
                    *o += scale * (gi - mg - (xi - m) * s * mgx);
                }
                for (o, &gi) in out[valid..].iter_mut().zip(&gs[valid..]) {
                    *o += scale * gi;
                }
            }
        }
    }
}

/// Affine normalisation with fixed statistics (inference mode).
struct BatchNormEval {
    x: Var,
    gamma: Var,
    beta: Var,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Operation for BatchNormEval {
    fn backward(&self, values: &Values<'_>, _: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let xt = values.get(self.x);
        let l = Layout::of(xt.shape());
        let plane = l.plane();
        let (x, g) = (xt.data(), grad.data());
        let gamma = values.get(self.gamma).data().to_vec();
        for b in 0..l.batch {
            for c in 0..l.channels {
                let base = (b * l.channels + c) * plane;
                let (m, s) = (self.mean[c], self.inv_std[c]);
                if let Some(gg) = sink.slot(self.gamma) {
                    gg[c] += (0..plane).map(|k| g[base + k] * (x[base + k] - m) * s).sum::<f64>();
                }
                if let Some(gb) = sink.slot(self.beta) {
                    gb[c] += g[base..base + plane].iter().sum::<f64>();
                }
                if let Some(gx) = sink.slot(self.x) {
                    for k in 0..plane {
                        gx[base + k] += g[base + k] * gamma[c] * s;
                    }
                }
            }
        }
    }
}

impl Tape {
    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<Layout> {
        let xs = self.shape(x);
        if xs.len() < 2 || self.shape(gamma) != [xs[1]] || self.shape(beta) != [xs[1]] {
            return Err(Error::shape(
                "batch_norm",
                format!("input {xs:?}, gamma {:?}, beta {:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        Ok(Layout::of(xs))
    }

    /// Training-mode batch norm. `lengths[b]` limits which time steps of
    /// sample `b` enter the statistics (all when `None`).
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        lengths: Option<&[usize]>,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let l = self.check_bn(x, gamma, beta)?;
        let valid: Vec<usize> = match lengths {
            Some(lens) if lens.len() == l.batch => lens.iter().map(|&n| n.min(l.time)).collect(),
            Some(lens) => {
                return Err(Error::shape("batch_norm", format!("{} lengths for batch {}", lens.len(), l.batch)))
            }
            None => vec![l.time; l.batch],
        };
        let count = valid.iter().sum::<usize>() * l.inner;
        if count == 0 {
            return Err(Error::shape("batch_norm", "no valid positions".to_string()));
        }
        let plane = l.plane();
        let v = self.value(x).data();
        let mut mean = vec![0.0; l.channels];
        let mut var = vec![0.0; l.channels];
        for b in 0..l.batch {
            for c in 0..l.channels {
                let base = (b * l.channels + c) * plane;
                mean[c] += v[base..base + valid[b] * l.inner].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for b in 0..l.batch {
            for c in 0..l.channels {
                let base = (b * l.channels + c) * plane;
                var[c] += v[base..base + valid[b] * l.inner].iter().map(|a| (a - mean[c]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|s| *s /= count as f64);
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let out = normalize(v, &l, &mean, &inv_std, self.value(gamma).data(), self.value(beta).data());
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let stats = BatchStats { mean: mean.clone(), var, count };
        let y = self.push(value, &[x, gamma, beta], BatchNormTrain { x, gamma, beta, mean, inv_std, valid });
        Ok((y, stats))
    }

    /// Inference-mode batch norm with running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let l = self.check_bn(x, gamma, beta)?;
        if running_mean.len() != l.channels || running_var.len() != l.channels {
            return Err(Error::shape("batch_norm", "running statistics do not match channels".to_string()));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let out = normalize(
            self.value(x).data(),
            &l,
            running_mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let mean = running_mean.to_vec();
        Ok(self.push(value, &[x, gamma, beta], BatchNormEval { x, gamma, beta, mean, inv_std }))
    }
}

fn normalize(v: &[f64], l: &Layout, mean: &[f64], inv_std: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let plane = l.plane();
    let mut out = Vec::with_capacity(v.len());
    for b in 0..l.batch {
        for c in 0..l.channels {
            let base = (b * l.channels + c) * plane;
            let (m, s, g, bt) = (mean[c], inv_std[c], gamma[c], beta[c]);
            out.extend(v[base..base + plane].iter().map(|a| (a - m) * s * g + bt));
        }
    }
    out
}
