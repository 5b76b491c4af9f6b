//! Seeded parameter initialisers.

use rand::Rng;
use rand_distr::StandardNormal;

use super::Tensor;

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn uniform<R: Rng>(rng: &mut R, shape: Vec<usize>, bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// `n × n` orthogonal matrix from the QR factorisation (modified
/// Gram-Schmidt) of a Gaussian matrix, row-major.
pub fn orthogonal<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for j in 0..n {
        for i in 0..j {
            let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
            let (head, tail) = cols.split_at_mut(j);
            tail[0].iter_mut().zip(&head[i]).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = cols[j].iter().map(|a| a * a).sum::<f64>().sqrt();
        cols[j].iter_mut().for_each(|a| *a /= norm);
    }
    let mut out = vec![0.0; n * n];
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            out[i * n + j] = *v;
        }
    }
    out
}

/// `[blocks·n, n]` made of stacked orthogonal blocks (GRU recurrent weights).
pub fn stacked_orthogonal<R: Rng>(rng: &mut R, blocks: usize, n: usize) -> Tensor {
    let data = (0..blocks).flat_map(|_| orthogonal(rng, n)).collect();
    Tensor::new(vec![blocks * n, n], data).expect("shape matches data")
}
