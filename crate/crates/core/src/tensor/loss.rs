use super::tape::{GradSink, Operation, Values};
use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Masked binary cross-entropy averaged over the frames where the mask is 1.
struct MaskedBce {
    scores: Var,
    targets: Vec<f64>,
    mask: Vec<f64>,
    eps: f64,
    count: f64,
}

impl Operation for MaskedBce {
    fn backward(&self, values: &Values<'_>, _: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let s = values.get(self.scores).data();
        let g = grad.item() / self.count;
        let Some(gs) = sink.slot(self.scores) else { return };
        for i in 0..s.len() {
            // clamped scores carry no gradient
            if self.mask[i] == 0.0 || s[i] <= self.eps || s[i] >= 1.0 - self.eps {
                continue;
            }
            let y = self.targets[i];
            gs[i] -= g * self.mask[i] * (y / s[i] - (1.0 - y) / (1.0 - s[i]));
        }
    }
}

impl Tape {
    /// `−Σ m·[y log c + (1−y) log(1−c)] / Σ m` with `c = clamp(s, ε, 1−ε)`.
    pub fn bce_masked(&mut self, scores: Var, targets: &[f64], mask: &[f64], eps: f64) -> Result<Var> {
        let s = self.value(scores).data();
        if targets.len() != s.len() || mask.len() != s.len() {
            return Err(Error::shape(
                "bce",
                format!("{} scores, {} targets, {} mask entries", s.len(), targets.len(), mask.len()),
            ));
        }
        let count: f64 = mask.iter().sum();
        if count <= 0.0 {
            return Err(Error::shape("bce", "mask selects no frames".to_string()));
        }
        let mut total = 0.0;
        for i in 0..s.len() {
            if mask[i] == 0.0 {
                continue;
            }
            let c = s[i].clamp(eps, 1.0 - eps);
            let y = targets[i];
            total -= mask[i] * (y * c.ln() + (1.0 - y) * (1.0 - c).ln());
        }
        let value = Tensor::scalar(total / count);
        let op = MaskedBce { scores, targets: targets.to_vec(), mask: mask.to_vec(), eps, count };
        Ok(self.push(value, &[scores], op))
    }
}
