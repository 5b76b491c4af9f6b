//! Gated recurrent unit over `[B, T, I]` sequences.
//!
//! Gate order in the stacked weights is (reset, update, candidate):
//!
//! ```text
//! r = σ(W_ir x + b_ir + W_hr h + b_hr)
//! z = σ(W_iz x + b_iz + W_hz h + b_hz)
//! n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```
//!
//! Each sample runs over its own valid length; steps past it output zero.

use super::gemm::{gemm, Mat};
use super::tape::{GradSink, Operation, Values};
use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Handles to the four parameter tensors of one GRU direction.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    /// `[3H, I]`
    pub w_ih: Var,
    /// `[3H, H]`
    pub w_hh: Var,
    /// `[3H]`
    pub b_ih: Var,
    /// `[3H]`
    pub b_hh: Var,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

struct Gru {
    x: Var,
    w: GruWeights,
    hidden: usize,
    lengths: Vec<usize>,
    reverse: bool,
    // per (b, t, h)
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    ghn: Vec<f64>,
    h_prev: Vec<f64>,
}

fn steps(len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    }
}

impl Operation for Gru {
    fn backward(&self, values: &Values<'_>, _: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let xt = values.get(self.x);
        let (bsz, t_len, input) = (xt.dim(0), xt.dim(1), xt.dim(2));
        let h = self.hidden;
        let g3 = 3 * h;
        let w_hh = values.get(self.w.w_hh).data();
        let w_ih = values.get(self.w.w_ih).data();
        let g = grad.data();

        let mut dgx = vec![0.0; bsz * t_len * g3];
        let mut dw_hh = vec![0.0; g3 * h];
        let mut db_hh = vec![0.0; g3];
        let mut dh = vec![0.0; h];
        let mut dgh = vec![0.0; g3];
        for b in 0..bsz {
            dh.fill(0.0);
            // reverse of the forward processing order
            for t in steps(self.lengths[b], !self.reverse) {
                let base = (b * t_len + t) * h;
                for k in 0..h {
                    dh[k] += g[base + k];
                }
                let gx_row = &mut dgx[(b * t_len + t) * g3..][..g3];
                for k in 0..h {
                    let (r, z, n) = (self.r[base + k], self.z[base + k], self.n[base + k]);
                    let hp = self.h_prev[base + k];
                    let dn = dh[k] * (1.0 - z);
                    let dz = dh[k] * (hp - n);
                    let da_n = dn * (1.0 - n * n);
                    let da_r = da_n * self.ghn[base + k] * r * (1.0 - r);
                    let da_z = dz * z * (1.0 - z);
                    gx_row[k] = da_r;
                    gx_row[h + k] = da_z;
                    gx_row[2 * h + k] = da_n;
                    dgh[k] = da_r;
                    dgh[h + k] = da_z;
                    dgh[2 * h + k] = da_n * r;
                    dh[k] *= z;
                }
                for (j, &dj) in dgh.iter().enumerate() {
                    db_hh[j] += dj;
                    let row = &mut dw_hh[j * h..(j + 1) * h];
                    let w_row = &w_hh[j * h..(j + 1) * h];
                    for k in 0..h {
                        row[k] += dj * self.h_prev[base + k];
                        dh[k] += dj * w_row[k];
                    }
                }
            }
        }

        let rows = bsz * t_len;
        if let Some(gx) = sink.slot(self.x) {
            gemm(rows, g3, input, 1.0, Mat::row_major(&dgx, g3), Mat::row_major(w_ih, input), 1.0, gx);
        }
        if let Some(gw) = sink.slot(self.w.w_ih) {
            gemm(g3, rows, input, 1.0, Mat::transposed(&dgx, g3), Mat::row_major(xt.data(), input), 1.0, gw);
        }
        if let Some(gb) = sink.slot(self.w.b_ih) {
            for row in dgx.chunks_exact(g3) {
                gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
        }
        if let Some(gw) = sink.slot(self.w.w_hh) {
            gw.iter_mut().zip(&dw_hh).for_each(|(a, b)| *a += b);
        }
        if let Some(gb) = sink.slot(self.w.b_hh) {
            gb.iter_mut().zip(&db_hh).for_each(|(a, b)| *a += b);
        }
    }
}

impl Tape {
    /// One GRU direction: `[B, T, I]` → `[B, T, H]`, starting from a zero
    /// state. `lengths` gives each sample's valid steps (all when `None`).
    pub fn gru(&mut self, x: Var, w: &GruWeights, lengths: Option<&[usize]>, reverse: bool) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w.w_hh).to_vec();
        if xs.len() != 3 || ws.len() != 2 || ws[0] != 3 * ws[1] {
            return Err(Error::shape("gru", format!("input {xs:?}, w_hh {ws:?}")));
        }
        let (bsz, t_len, input) = (xs[0], xs[1], xs[2]);
        let h = ws[1];
        let g3 = 3 * h;
        if self.shape(w.w_ih) != [g3, input] || self.shape(w.b_ih) != [g3] || self.shape(w.b_hh) != [g3] {
            return Err(Error::shape(
                "gru",
                format!("w_ih {:?} b_ih {:?} b_hh {:?}", self.shape(w.w_ih), self.shape(w.b_ih), self.shape(w.b_hh)),
            ));
        }
        let lengths: Vec<usize> = match lengths {
            Some(l) if l.len() == bsz => l.iter().map(|&n| n.min(t_len)).collect(),
            Some(l) => return Err(Error::shape("gru", format!("{} lengths for batch {bsz}", l.len()))),
            None => vec![t_len; bsz],
        };

        let rows = bsz * t_len;
        let mut gx = vec![0.0; rows * g3];
        let b_ih = self.value(w.b_ih).data();
        for row in gx.chunks_exact_mut(g3) {
            row.copy_from_slice(b_ih);
        }
        gemm(
            rows,
            input,
            g3,
            1.0,
            Mat::row_major(self.value(x).data(), input),
            Mat::transposed(self.value(w.w_ih).data(), input),
            1.0,
            &mut gx,
        );
        let w_hh = self.value(w.w_hh).data();
        let b_hh = self.value(w.b_hh).data();

        let n_state = rows * h;
        let (mut r, mut z, mut n) = (vec![0.0; n_state], vec![0.0; n_state], vec![0.0; n_state]);
        let (mut ghn, mut h_prev) = (vec![0.0; n_state], vec![0.0; n_state]);
        let mut out = vec![0.0; n_state];
        let mut state = vec![0.0; h];
        let mut gh = vec![0.0; g3];
        for b in 0..bsz {
            state.fill(0.0);
            for t in steps(lengths[b], reverse) {
                for j in 0..g3 {
                    let w_row = &w_hh[j * h..(j + 1) * h];
                    gh[j] = b_hh[j] + w_row.iter().zip(&state).map(|(a, s)| a * s).sum::<f64>();
                }
                let gx_row = &gx[(b * t_len + t) * g3..][..g3];
                let base = (b * t_len + t) * h;
                for k in 0..h {
                    let rk = sigmoid(gx_row[k] + gh[k]);
                    let zk = sigmoid(gx_row[h + k] + gh[h + k]);
                    let nk = (gx_row[2 * h + k] + rk * gh[2 * h + k]).tanh();
                    r[base + k] = rk;
                    z[base + k] = zk;
                    n[base + k] = nk;
                    ghn[base + k] = gh[2 * h + k];
                    h_prev[base + k] = state[k];
                    state[k] = (1.0 - zk) * nk + zk * state[k];
                    out[base + k] = state[k];
                }
            }
        }
        let value = Tensor::new(vec![bsz, t_len, h], out)?;
        let op = Gru { x, w: *w, hidden: h, lengths, reverse, r, z, n, ghn, h_prev };
        Ok(self.push(value, &[x, w.w_ih, w.w_hh, w.b_ih, w.b_hh], op))
    }

    /// Bidirectional GRU: forward and backward outputs concatenated on the
    /// feature axis, `[B, T, I]` → `[B, T, 2H]`.
    pub fn bigru(&mut self, x: Var, fwd: &GruWeights, bwd: &GruWeights, lengths: Option<&[usize]>) -> Result<Var> {
        let f = self.gru(x, fwd, lengths, false)?;
        let b = self.gru(x, bwd, lengths, true)?;
        self.concat_last(f, b)
    }
}
