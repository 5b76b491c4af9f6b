//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tagkit::dsp::MelSpectrogram;
use tagkit::metrics::{EventMetricConfig, MatchTrace};
use tagkit::model::{AudioEncoderConfig, GroundingModel, Mode, QueryRef, Vocab};
use tagkit::tensor::gradcheck::{check_gradients, GradCheckReport, FD_STEP};
use tagkit::tensor::{BatchStats, GruWeights, Tape, Tensor, Var};
use tagkit::{Result, Segment};

pub const GRAD_TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform in `±[min_abs, max_abs]`, keeping clear of kinks at zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], min_abs: f64, max_abs: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(min_abs..max_abs);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `Σ c ⊙ y` for a fixed random `c`, so every output element matters.
pub fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let c = uniform(&mut rng(seed ^ 0xc0ffee), &shape, -1.0, 1.0);
    let c = tape.constant(c);
    let p = tape.mul(y, c)?;
    Ok(tape.sum(p))
}

type Case = fn(u64) -> Result<GradCheckReport>;

fn dims(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    r.random_range(lo..=hi)
}

fn case_broadcast(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (b, t, d) = (dims(&mut r, 1, 3), dims(&mut r, 1, 4), dims(&mut r, 1, 4));
    let inputs = [uniform(&mut r, &[b, t, d], -1.0, 1.0), uniform(&mut r, &[t, 1], -1.0, 1.0)];
    check_gradients(&inputs, FD_STEP, None, |tape, v| {
        let s = tape.add(v[0], v[1])?;
        let m = tape.sub(v[0], v[1])?;
        let y = tape.mul(s, m)?;
        project(tape, y, seed)
    })
}

fn case_unary(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = [dims(&mut r, 1, 4), dims(&mut r, 1, 5)];
    let inputs = [away_from_zero(&mut r, &shape, 0.05, 1.5)];
    check_gradients(&inputs, FD_STEP, None, |tape, v| {
        let a = tape.scale(v[0], 0.7);
        let a = tape.exp(a);
        let b = tape.sigmoid(v[0]);
        let c = tape.tanh(v[0]);
        let d = tape.leaky_relu(v[0], 0.1);
        let ab = tape.mul(a, b)?;
        let cd = tape.add(c, d)?;
        let y = tape.add(ab, cd)?;
        project(tape, y, seed)
    })
}

fn case_reductions(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let shape = [dims(&mut r, 1, 3), dims(&mut r, 2, 4), dims(&mut r, 2, 4)];
    let axis = r.random_range(0..3);
    let inputs = [uniform(&mut r, &shape, -1.0, 1.0)];
    check_gradients(&inputs, FD_STEP, None, |tape, v| {
        let m = tape.mean_over_axis(v[0], axis)?;
        let n = tape.l2_norm_over_axis(v[0], axis)?;
        let y = tape.mul(m, n)?;
        let p = project(tape, y, seed)?;
        let s = tape.sum(v[0]);
        let mu = tape.mean(v[0]);
        let q = tape.mul(s, mu)?;
        tape.add(p, q)
    })
}

fn case_linear(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (n, i, o) = (dims(&mut r, 1, 4), dims(&mut r, 1, 5), dims(&mut r, 1, 4));
    let inputs = [uniform(&mut r, &[2, n, i], -1.0, 1.0), uniform(&mut r, &[o, i], -1.0, 1.0), uniform(&mut r, &[o], -1.0, 1.0)];
    check_gradients(&inputs, FD_STEP, None, |tape, v| {
        let y = tape.linear(v[0], v[1], Some(v[2]))?;
        let y = tape.tanh(y);
        project(tape, y, seed)
    })
}

fn case_embedding(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (vocab, d) = (dims(&mut r, 2, 6), dims(&mut r, 1, 5));
    let ids: Vec<usize> = (0..dims(&mut r, 1, 5)).map(|_| r.random_range(0..vocab)).collect();
    let inputs = [uniform(&mut r, &[vocab, d], -1.0, 1.0)];
    check_gradients(&inputs, FD_STEP, None, |tape, v| {
        let e = tape.embedding_lookup(v[0], &ids)?;
        let m = tape.mean_over_axis(e, 0)?;
        let m = tape.exp(m);
        project(tape, m, seed)
    })
}

fn case_shapes(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (b, t, d) = (dims(&mut r, 2, 3), dims(&mut r, 2, 4), dims(&mut r, 1, 3));
    let inputs = [uniform(&mut r, &[b, t, d], -1.0, 1.0), uniform(&mut r, &[b, t, d], -1.0, 1.0)];
    let idx: Vec<usize> = (0..dims(&mut r, 1, 4)).map(|_| r.random_range(0..b)).collect();
    let factor = dims(&mut r, 1, 3);
    let keep = r.random_range(1..=t * factor);
    let lengths: Vec<usize> = (0..idx.len()).map(|_| r.random_range(0..=keep)).collect();
    check_gradients(&inputs, FD_STEP, None, |tape, v| {
        let s = tape.stack(&[v[0], v[1]])?;
        let s = tape.reshape(s, &[2 * b, t, d])?;
        let p = tape.permute(s, &[0, 2, 1])?;
        let p = tape.permute(p, &[0, 2, 1])?;
        let c = tape.concat_last(p, s)?;
        let c = tape.index_select(c, &idx.iter().map(|&i| i * 2 % (2 * b)).collect::<Vec<_>>())?;
        let u = tape.nearest_upsample_time(c, factor)?;
        let u = tape.slice_time(u, keep)?;
        let m = tape.mask_time(u, 1, &lengths)?;
        let y = tape.sigmoid(m);
        project(tape, y, seed)
    })
}

fn case_conv(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (b, c, h, w, o) = (dims(&mut r, 1, 2), dims(&mut r, 1, 3), dims(&mut r, 1, 5), dims(&mut r, 1, 5), dims(&mut r, 1, 3));
    let inputs = [uniform(&mut r, &[b, c, h, w], -1.0, 1.0), uniform(&mut r, &[o, c, 3, 3], -1.0, 1.0), uniform(&mut r, &[o], -1.0, 1.0)];
    check_gradients(&inputs, FD_STEP, None, |tape, v| {
        let y = tape.conv2d_3x3_same(v[0], v[1], v[2])?;
        project(tape, y, seed)
    })
}

fn case_lp_pool(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (kt, kf) = (dims(&mut r, 1, 2), dims(&mut r, 1, 2));
    let shape = [dims(&mut r, 1, 2), dims(&mut r, 1, 2), kt * dims(&mut r, 1, 3), kf * dims(&mut r, 1, 3)];
    let inputs = [away_from_zero(&mut r, &shape, 0.1, 1.5)];
    check_gradients(&inputs, FD_STEP, None, |tape, v| {
        let y = tape.lp_pool(v[0], 4, kt, kf)?;
        project(tape, y, seed)
    })
}

fn case_batch_norm(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (b, c, t, f) = (dims(&mut r, 2, 3), dims(&mut r, 1, 3), dims(&mut r, 2, 4), dims(&mut r, 1, 3));
    let lengths: Vec<usize> = (0..b).map(|i| if i == 0 { t } else { r.random_range(1..=t) }).collect();
    let running: (Vec<f64>, Vec<f64>) = ((0..c).map(|_| r.random_range(-0.5..0.5)).collect(), (0..c).map(|_| r.random_range(0.5..2.0)).collect());
    let inputs = [uniform(&mut r, &[b, c, t, f], -1.0, 1.0), uniform(&mut r, &[c], 0.5, 1.5), uniform(&mut r, &[c], -0.5, 0.5)];
    check_gradients(&inputs, FD_STEP, None, |tape, v| {
        let (y, _) = tape.batch_norm_train(v[0], v[1], v[2], Some(&lengths), 1e-5)?;
        let z = tape.batch_norm_eval(v[0], v[1], v[2], &running.0, &running.1, 1e-5)?;
        let y = tape.mul(y, z)?;
        project(tape, y, seed)
    })
}

fn gru_inputs(r: &mut ChaCha8Rng, i: usize, h: usize) -> Vec<Tensor> {
    vec![
        uniform(r, &[3 * h, i], -0.8, 0.8),
        uniform(r, &[3 * h, h], -0.8, 0.8),
        uniform(r, &[3 * h], -0.5, 0.5),
        uniform(r, &[3 * h], -0.5, 0.5),
    ]
}

fn case_gru(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (b, t, i, h) = (2, 3, dims(&mut r, 1, 3), 2);
    let lengths = vec![t, r.random_range(1..=t)];
    let reverse = seed % 2 == 1;
    let mut inputs = vec![uniform(&mut r, &[b, t, i], -1.0, 1.0)];
    inputs.extend(gru_inputs(&mut r, i, h));
    check_gradients(&inputs, FD_STEP, None, |tape, v| {
        let w = GruWeights { w_ih: v[1], w_hh: v[2], b_ih: v[3], b_hh: v[4] };
        let y = tape.gru(v[0], &w, Some(&lengths), reverse)?;
        project(tape, y, seed)
    })
}

fn case_bigru(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (b, t, i, h) = (2, 3, 2, 2);
    let lengths = vec![r.random_range(1..=t), t];
    let mut inputs = vec![uniform(&mut r, &[b, t, i], -1.0, 1.0)];
    inputs.extend(gru_inputs(&mut r, i, h));
    inputs.extend(gru_inputs(&mut r, i, h));
    check_gradients(&inputs, FD_STEP, None, |tape, v| {
        let f = GruWeights { w_ih: v[1], w_hh: v[2], b_ih: v[3], b_hh: v[4] };
        let bw = GruWeights { w_ih: v[5], w_hh: v[6], b_ih: v[7], b_hh: v[8] };
        let y = tape.bigru(v[0], &f, &bw, Some(&lengths))?;
        project(tape, y, seed)
    })
}

fn case_bce(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let n = dims(&mut r, 2, 12);
    let targets: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let mut mask: Vec<f64> = (0..n).map(|_| if r.random_bool(0.7) { 1.0 } else { 0.0 }).collect();
    mask[0] = 1.0;
    let inputs = [uniform(&mut r, &[n], -3.0, 3.0)];
    check_gradients(&inputs, FD_STEP, None, |tape, v| {
        let s = tape.sigmoid(v[0]);
        tape.bce_masked(s, &targets, &mask, 1e-7)
    })
}

/// Two conv channels per block and a 4-unit GRU.
pub fn tiny_encoder() -> AudioEncoderConfig {
    AudioEncoderConfig { conv_channels: vec![2; 5], gru_hidden: 4, embed_dim: 8, ..AudioEncoderConfig::default() }
}

pub fn random_mel(r: &mut ChaCha8Rng, n_frames: usize) -> MelSpectrogram {
    MelSpectrogram::from_raw(n_frames, 64, (0..n_frames * 64).map(|_| r.random_range(-4.0..2.0)).collect()).unwrap()
}

fn full_model(seed: u64, mode: Mode) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let vocab = Vocab::from_texts(["a dog barks", "a bird chirps loudly"]);
    let mut model = GroundingModel::new(tiny_encoder(), vocab, seed)?;
    if mode == Mode::Eval {
        let stats: Vec<BatchStats> = model
            .config()
            .conv_channels
            .iter()
            .map(|&c| BatchStats {
                mean: (0..c).map(|_| r.random_range(-0.5..0.5)).collect(),
                var: (0..c).map(|_| r.random_range(0.5..3.0)).collect(),
                count: 10,
            })
            .collect();
        model.update_running_stats(&stats);
    }
    let (t0, t1) = (dims(&mut r, 5, 12), dims(&mut r, 5, 12));
    let mels = [random_mel(&mut r, t0), random_mel(&mut r, t1)];
    let mel_refs: Vec<&MelSpectrogram> = mels.iter().collect();
    let id_lists: Vec<Vec<usize>> = vec![model.vocab().encode("a dog barks")?.ids, model.vocab().encode("bird chirps")?.ids, model.vocab().encode("loudly")?.ids];
    let t_max = mels.iter().map(|m| m.n_frames()).max().unwrap();
    let clip_of = [0usize, 1, 1];
    let mut targets = Vec::new();
    let mut mask = Vec::new();
    for &c in &clip_of {
        let n = mels[c].n_frames();
        for t in 0..t_max {
            targets.push(if t < n && r.random_bool(0.4) { 1.0 } else { 0.0 });
            mask.push(if t < n { 1.0 } else { 0.0 });
        }
    }
    let inputs: Vec<Tensor> = model.params().tensors().to_vec();
    check_gradients(&inputs, FD_STEP, Some(6), |tape, v| {
        let queries: Vec<QueryRef<'_>> = clip_of.iter().zip(&id_lists).map(|(&clip, ids)| QueryRef { clip, ids }).collect();
        let fwd = model.forward(tape, v, &mel_refs, &queries, mode)?;
        tape.bce_masked(fwd.scores, &targets, &mask, 1e-7)
    })
}

fn case_model_train(seed: u64) -> Result<GradCheckReport> {
    full_model(seed, Mode::Train)
}

fn case_model_eval(seed: u64) -> Result<GradCheckReport> {
    full_model(seed, Mode::Eval)
}

pub const GRAD_CASES: &[(&str, Case)] = &[
    ("broadcast add/sub/mul", case_broadcast),
    ("exp/sigmoid/tanh/leaky_relu/scale", case_unary),
    ("sum/mean/mean_over_axis/l2_norm", case_reductions),
    ("linear", case_linear),
    ("embedding_lookup", case_embedding),
    ("stack/reshape/permute/concat/index/upsample/slice/mask", case_shapes),
    ("conv2d 3x3", case_conv),
    ("lp_pool p=4", case_lp_pool),
    ("batch_norm train+eval", case_batch_norm),
    ("gru", case_gru),
    ("bigru", case_bigru),
    ("masked bce", case_bce),
    ("full model (train mode)", case_model_train),
    ("full model (eval mode)", case_model_eval),
];

/// Independent eligibility test (same tolerance rule as the metric).
pub fn eligible(r: &Segment, h: &Segment, cfg: &EventMetricConfig) -> bool {
    let tol = if cfg.duration_tolerance * (r.offset - r.onset) > cfg.t_collar { cfg.duration_tolerance * (r.offset - r.onset) } else { cfg.t_collar };
    (h.onset - r.onset).abs() <= cfg.t_collar + 1e-9 && (h.offset - r.offset).abs() <= tol + 1e-9
}

/// Size of a maximum one-to-one matching, by exhaustive search.
pub fn brute_force_max_matching(refs: &[Segment], hyps: &[Segment], cfg: &EventMetricConfig) -> usize {
    fn go(h: usize, used: &mut Vec<bool>, refs: &[Segment], hyps: &[Segment], cfg: &EventMetricConfig) -> usize {
        if h == hyps.len() {
            return 0;
        }
        let mut best = go(h + 1, used, refs, hyps, cfg);
        for r in 0..refs.len() {
            if !used[r] && eligible(&refs[r], &hyps[h], cfg) {
                used[r] = true;
                best = best.max(1 + go(h + 1, used, refs, hyps, cfg));
                used[r] = false;
            }
        }
        best
    }
    go(0, &mut vec![false; refs.len()], refs, hyps, cfg)
}

/// Checks that `trace` is exactly what the documented order rule
/// produces: every hypothesis, in onset order, holds the first eligible
/// reference not taken by an earlier hypothesis, or none if there is none.
pub fn trace_follows_order_rule(refs: &[Segment], hyps: &[Segment], cfg: &EventMetricConfig, trace: &MatchTrace) -> bool {
    let mut taken = vec![false; refs.len()];
    for (h, got) in hyps.iter().zip(&trace.pairs) {
        let expected = (0..refs.len()).find(|&r| !taken[r] && eligible(&refs[r], h, cfg));
        if *got != expected {
            return false;
        }
        if let Some(r) = expected {
            taken[r] = true;
        }
    }
    true
}

/// Up to `max` random segments on a 50 ms grid, sorted by onset.
pub fn random_events(r: &mut ChaCha8Rng, max: usize) -> Vec<Segment> {
    let n = r.random_range(0..=max);
    let mut v: Vec<Segment> = (0..n)
        .map(|_| {
            let on = r.random_range(0..40) as f64 * 0.05;
            let len = r.random_range(2..30) as f64 * 0.05;
            Segment { onset: on, offset: on + len }
        })
        .collect();
    v.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.offset.total_cmp(&b.offset)));
    v
}
