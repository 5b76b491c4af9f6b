use super::array::strides;
use super::gemm::{gemm, Mat};
use super::tape::{GradSink, Operation, Values};
use super::{Tape, Tensor, Var};
use crate::{Error, Result};

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each output element, the linear index of the broadcast input element.
fn broadcast_map(out: &[usize], input: &[usize]) -> Vec<usize> {
    let offset = out.len() - input.len();
    let in_strides = strides(input);
    let mut eff = vec![0; out.len()];
    for (i, &d) in input.iter().enumerate() {
        eff[i + offset] = if d == 1 { 0 } else { in_strides[i] };
    }
    let numel: usize = out.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; out.len()];
    let mut lin = 0usize;
    for _ in 0..numel {
        map.push(lin);
        for ax in (0..out.len()).rev() {
            idx[ax] += 1;
            lin += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            lin -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

struct Binary {
    kind: BinaryKind,
    a: Var,
    b: Var,
    map_a: Option<Vec<usize>>,
    map_b: Option<Vec<usize>>,
}

fn at(map: &Option<Vec<usize>>, i: usize) -> usize {
    map.as_ref().map_or(i, |m| m[i])
}

impl Operation for Binary {
    fn backward(&self, values: &Values<'_>, _out: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let g = grad.data();
        let (va, vb) = (values.get(self.a).data(), values.get(self.b).data());
        if let Some(ga) = sink.slot(self.a) {
            for (i, gi) in g.iter().enumerate() {
                let d = match self.kind {
                    BinaryKind::Add | BinaryKind::Sub => *gi,
                    BinaryKind::Mul => gi * vb[at(&self.map_b, i)],
                };
                ga[at(&self.map_a, i)] += d;
            }
        }
        if let Some(gb) = sink.slot(self.b) {
            for (i, gi) in g.iter().enumerate() {
                let d = match self.kind {
                    BinaryKind::Add => *gi,
                    BinaryKind::Sub => -gi,
                    BinaryKind::Mul => gi * va[at(&self.map_a, i)],
                };
                gb[at(&self.map_b, i)] += d;
            }
        }
    }
}

#[derive(Clone, Copy)]
enum UnaryKind {
    Scale(f64),
    Exp,
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
}

struct Unary {
    kind: UnaryKind,
    x: Var,
}

impl Operation for Unary {
    fn backward(&self, values: &Values<'_>, out: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let x = values.get(self.x).data();
        let y = out.data();
        let Some(gx) = sink.slot(self.x) else { return };
        for (i, g) in grad.data().iter().enumerate() {
            gx[i] += g * match self.kind {
                UnaryKind::Scale(c) => c,
                UnaryKind::Exp => y[i],
                UnaryKind::Sigmoid => y[i] * (1.0 - y[i]),
                UnaryKind::Tanh => 1.0 - y[i] * y[i],
                UnaryKind::LeakyRelu(slope) => {
                    if x[i] > 0.0 {
                        1.0
                    } else {
                        slope
                    }
                }
            };
        }
    }
}

struct SumAll {
    x: Var,
    scale: f64,
}

impl Operation for SumAll {
    fn backward(&self, _: &Values<'_>, _: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let g = grad.item() * self.scale;
        if let Some(gx) = sink.slot(self.x) {
            gx.iter_mut().for_each(|v| *v += g);
        }
    }
}

/// Splits `shape` around `axis` into (outer, len, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct MeanAxis {
    x: Var,
    axis: usize,
}

impl Operation for MeanAxis {
    fn backward(&self, values: &Values<'_>, _: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let (outer, len, inner) = axis_split(values.get(self.x).shape(), self.axis);
        let Some(gx) = sink.slot(self.x) else { return };
        let g = grad.data();
        let inv = 1.0 / len as f64;
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    gx[(o * len + l) * inner + i] += g[o * inner + i] * inv;
                }
            }
        }
    }
}

struct L2NormAxis {
    x: Var,
    axis: usize,
}

impl Operation for L2NormAxis {
    fn backward(&self, values: &Values<'_>, out: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let xt = values.get(self.x);
        let (outer, len, inner) = axis_split(xt.shape(), self.axis);
        let x = xt.data();
        let (y, g) = (out.data(), grad.data());
        let Some(gx) = sink.slot(self.x) else { return };
        for o in 0..outer {
            for i in 0..inner {
                let n = y[o * inner + i];
                if n == 0.0 {
                    continue;
                }
                let c = g[o * inner + i] / n;
                for l in 0..len {
                    let k = (o * len + l) * inner + i;
                    gx[k] += c * x[k];
                }
            }
        }
    }
}

struct Linear {
    x: Var,
    w: Var,
    b: Option<Var>,
}

impl Operation for Linear {
    fn backward(&self, values: &Values<'_>, _: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let w = values.get(self.w);
        let (out_f, in_f) = (w.dim(0), w.dim(1));
        let x = values.get(self.x).data();
        let rows = x.len() / in_f;
        let g = grad.data();
        if let Some(gx) = sink.slot(self.x) {
            gemm(rows, out_f, in_f, 1.0, Mat::row_major(g, out_f), Mat::row_major(w.data(), in_f), 1.0, gx);
        }
        if let Some(gw) = sink.slot(self.w) {
            gemm(out_f, rows, in_f, 1.0, Mat::transposed(g, out_f), Mat::row_major(x, in_f), 1.0, gw);
        }
        if let Some(b) = self.b {
            if let Some(gb) = sink.slot(b) {
                for r in 0..rows {
                    for (o, gbo) in gb.iter_mut().enumerate() {
                        *gbo += g[r * out_f + o];
                    }
                }
            }
        }
    }
}

struct Embedding {
    table: Var,
    ids: Vec<usize>,
}

impl Operation for Embedding {
    fn backward(&self, values: &Values<'_>, _: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let dim = values.get(self.table).dim(1);
        let Some(gt) = sink.slot(self.table) else { return };
        for (row, &id) in self.ids.iter().enumerate() {
            for d in 0..dim {
                gt[id * dim + d] += grad.data()[row * dim + d];
            }
        }
    }
}

struct Stack {
    parts: Vec<Var>,
}

impl Operation for Stack {
    fn backward(&self, values: &Values<'_>, _: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let mut offset = 0;
        for &p in &self.parts {
            let n = values.get(p).numel();
            if let Some(gp) = sink.slot(p) {
                for (a, b) in gp.iter_mut().zip(&grad.data()[offset..offset + n]) {
                    *a += b;
                }
            }
            offset += n;
        }
    }
}

struct IndexSelect {
    x: Var,
    idx: Vec<usize>,
}

impl Operation for IndexSelect {
    fn backward(&self, values: &Values<'_>, _: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let xt = values.get(self.x);
        let row = xt.numel() / xt.dim(0);
        let Some(gx) = sink.slot(self.x) else { return };
        for (r, &src) in self.idx.iter().enumerate() {
            for k in 0..row {
                gx[src * row + k] += grad.data()[r * row + k];
            }
        }
    }
}

/// Gather-style op: output element `i` reads input element `map[i]`.
/// Covers permutes, reshapes, slicing, upsampling and concatenation.
struct Gather {
    x: Var,
    map: Vec<usize>,
}

impl Operation for Gather {
    fn backward(&self, _: &Values<'_>, _: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let Some(gx) = sink.slot(self.x) else { return };
        for (g, &src) in grad.data().iter().zip(&self.map) {
            gx[src] += g;
        }
    }
}

struct Reshape {
    x: Var,
}

impl Operation for Reshape {
    fn backward(&self, _: &Values<'_>, _: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        if let Some(gx) = sink.slot(self.x) {
            for (a, b) in gx.iter_mut().zip(grad.data()) {
                *a += b;
            }
        }
    }
}

struct Concat {
    a: Var,
    b: Var,
    rows: usize,
    wa: usize,
    wb: usize,
}

impl Operation for Concat {
    fn backward(&self, _: &Values<'_>, _: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        let g = grad.data();
        let w = self.wa + self.wb;
        if let Some(ga) = sink.slot(self.a) {
            for r in 0..self.rows {
                for k in 0..self.wa {
                    ga[r * self.wa + k] += g[r * w + k];
                }
            }
        }
        if let Some(gb) = sink.slot(self.b) {
            for r in 0..self.rows {
                for k in 0..self.wb {
                    gb[r * self.wb + k] += g[r * w + self.wa + k];
                }
            }
        }
    }
}

struct MaskTime {
    x: Var,
    keep: Vec<bool>,
}

impl Operation for MaskTime {
    fn backward(&self, _: &Values<'_>, _: &Tensor, grad: &Tensor, sink: &mut GradSink<'_>) {
        if let Some(gx) = sink.slot(self.x) {
            for ((a, b), &k) in gx.iter_mut().zip(grad.data()).zip(&self.keep) {
                if k {
                    *a += b;
                }
            }
        }
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::shape(op, detail)
}

impl Tape {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb)
            .ok_or_else(|| shape_err("broadcast", format!("{sa:?} vs {sb:?}")))?;
        let map_a = (sa != out_shape).then(|| broadcast_map(&out_shape, &sa));
        let map_b = (sb != out_shape).then(|| broadcast_map(&out_shape, &sb));
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let numel: usize = out_shape.iter().product();
        let data = (0..numel)
            .map(|i| {
                let (x, y) = (va[at(&map_a, i)], vb[at(&map_b, i)]);
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                }
            })
            .collect();
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, &[a, b], Binary { kind, a, b, map_a, map_b }))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let xt = self.value(x);
        let data = xt
            .data()
            .iter()
            .map(|&v| match kind {
                UnaryKind::Scale(c) => c * v,
                UnaryKind::Exp => v.exp(),
                UnaryKind::Sigmoid => 1.0 / (1.0 + (-v).exp()),
                UnaryKind::Tanh => v.tanh(),
                UnaryKind::LeakyRelu(slope) => {
                    if v > 0.0 {
                        v
                    } else {
                        slope * v
                    }
                }
            })
            .collect();
        let value = Tensor::new(xt.shape().to_vec(), data).expect("same shape");
        self.push(value, &[x], Unary { kind, x })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(UnaryKind::Scale(c), x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(UnaryKind::LeakyRelu(slope), x)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), &[x], SumAll { x, scale: 1.0 })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let scale = 1.0 / t.numel() as f64;
        let s = t.data().iter().sum::<f64>() * scale;
        self.push(Tensor::scalar(s), &[x], SumAll { x, scale })
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(shape_err(op, format!("axis {axis} out of range for {:?}", self.shape(x))));
        }
        Ok(())
    }

    fn reduced_shape(&self, x: Var, axis: usize) -> Vec<usize> {
        let mut s = self.shape(x).to_vec();
        s.remove(axis);
        s
    }

    /// Mean over one axis; the axis is removed.
    pub fn mean_over_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean_over_axis", x, axis)?;
        let (outer, len, inner) = axis_split(self.shape(x), axis);
        let v = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += v[(o * len + l) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|s| *s /= len as f64);
        let value = Tensor::new(self.reduced_shape(x, axis), out)?;
        Ok(self.push(value, &[x], MeanAxis { x, axis }))
    }

    /// Euclidean norm over one axis; the axis is removed. The adjoint at a
    /// zero norm is taken as zero.
    pub fn l2_norm_over_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("l2_norm_over_axis", x, axis)?;
        let (outer, len, inner) = axis_split(self.shape(x), axis);
        let v = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += v[(o * len + l) * inner + i].powi(2);
                }
            }
        }
        out.iter_mut().for_each(|s| *s = s.sqrt());
        let value = Tensor::new(self.reduced_shape(x, axis), out)?;
        Ok(self.push(value, &[x], L2NormAxis { x, axis }))
    }

    /// `x[..., in] · wᵀ + b` with `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if ws.len() != 2 || xs.last() != Some(&ws[1]) {
            return Err(shape_err("linear", format!("input {xs:?} weight {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(shape_err("linear", format!("bias {:?} for {} outputs", self.shape(b), ws[0])));
            }
        }
        let (out_f, in_f) = (ws[0], ws[1]);
        let rows = self.value(x).numel() / in_f;
        let mut out = vec![0.0; rows * out_f];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for r in 0..rows {
                out[r * out_f..(r + 1) * out_f].copy_from_slice(bv);
            }
        }
        gemm(
            rows,
            in_f,
            out_f,
            1.0,
            Mat::row_major(self.value(x).data(), in_f),
            Mat::transposed(self.value(w).data(), in_f),
            1.0,
            &mut out,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = out_f;
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        Ok(self.push(Tensor::new(shape, out)?, &inputs, Linear { x, w, b }))
    }

    /// Rows of `table: [vocab, dim]` selected by `ids`, giving `[ids.len(), dim]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 || ids.is_empty() {
            return Err(shape_err("embedding", format!("table {ts:?}, {} ids", ids.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= ts[0]) {
            return Err(shape_err("embedding", format!("id {bad} outside vocabulary of {}", ts[0])));
        }
        let dim = ts[1];
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            out.extend_from_slice(&tv[id * dim..(id + 1) * dim]);
        }
        let value = Tensor::new(vec![ids.len(), dim], out)?;
        Ok(self.push(value, &[table], Embedding { table, ids: ids.to_vec() }))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("stack", "no inputs".into()))?;
        let shape = self.shape(*first).to_vec();
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(shape_err("stack", format!("{:?} vs {shape:?}", self.shape(p))));
            }
            out.extend_from_slice(self.value(p).data());
        }
        let mut new_shape = vec![parts.len()];
        new_shape.extend(shape);
        Ok(self.push(Tensor::new(new_shape, out)?, parts, Stack { parts: parts.to_vec() }))
    }

    /// Selects entries of the leading axis.
    pub fn index_select(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() || idx.is_empty() || idx.iter().any(|&i| i >= xs[0]) {
            return Err(shape_err("index_select", format!("indices {idx:?} for {xs:?}")));
        }
        let row: usize = xs[1..].iter().product();
        let v = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            out.extend_from_slice(&v[i * row..(i + 1) * row]);
        }
        let mut shape = xs;
        shape[0] = idx.len();
        Ok(self.push(Tensor::new(shape, out)?, &[x], IndexSelect { x, idx: idx.to_vec() }))
    }

    fn gather(&mut self, x: Var, shape: Vec<usize>, map: Vec<usize>) -> Result<Var> {
        let v = self.value(x).data();
        let data = map.iter().map(|&i| v[i]).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, &[x], Gather { x, map }))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let mut seen = vec![false; xs.len()];
        if perm.len() != xs.len() || perm.iter().any(|&p| p >= xs.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err("permute", format!("{perm:?} for {xs:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| xs[p]).collect();
        let in_strides = strides(&xs);
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let map = broadcast_like_map(&out_shape, &src_strides);
        self.gather(x, out_shape, map)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, &[x], Reshape { x }))
    }

    /// Concatenates two tensors along their last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err("concat", format!("{sa:?} vs {sb:?}")));
        }
        let (wa, wb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = self.value(a).numel() / wa;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(rows * (wa + wb));
        for r in 0..rows {
            out.extend_from_slice(&va[r * wa..(r + 1) * wa]);
            out.extend_from_slice(&vb[r * wb..(r + 1) * wb]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = wa + wb;
        Ok(self.push(Tensor::new(shape, out)?, &[a, b], Concat { a, b, rows, wa, wb }))
    }

    /// Repeats every step of axis 1 `factor` times: `[B, T, ..] → [B, factor·T, ..]`.
    pub fn nearest_upsample_time(&mut self, x: Var, factor: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || factor == 0 {
            return Err(shape_err("upsample", format!("{xs:?} by {factor}")));
        }
        let (b, t) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        let mut map = Vec::with_capacity(b * t * factor * inner);
        for bi in 0..b {
            for to in 0..t * factor {
                let src = (bi * t + to / factor) * inner;
                map.extend(src..src + inner);
            }
        }
        let mut shape = xs;
        shape[1] = t * factor;
        self.gather(x, shape, map)
    }

    /// Keeps the first `len` steps of axis 1.
    pub fn slice_time(&mut self, x: Var, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || len == 0 || len > xs[1] {
            return Err(shape_err("slice_time", format!("{xs:?} to {len}")));
        }
        let (b, t) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        let mut map = Vec::with_capacity(b * len * inner);
        for bi in 0..b {
            let start = bi * t * inner;
            map.extend(start..start + len * inner);
        }
        let mut shape = xs;
        shape[1] = len;
        self.gather(x, shape, map)
    }

    /// Zeroes every step `t >= lengths[b]` along `axis` (batch on axis 0).
    pub fn mask_time(&mut self, x: Var, axis: usize, lengths: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis == 0 || axis >= xs.len() || lengths.len() != xs[0] {
            return Err(shape_err("mask_time", format!("{xs:?} axis {axis}, {} lengths", lengths.len())));
        }
        let (outer, len, inner) = axis_split(&xs, axis);
        let per_batch = outer / xs[0];
        let mut keep = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let limit = lengths[o / per_batch];
            for t in 0..len {
                keep.extend(std::iter::repeat_n(t < limit, inner));
            }
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| if k { v } else { 0.0 })
            .collect();
        let value = Tensor::new(xs, data)?;
        Ok(self.push(value, &[x], MaskTime { x, keep }))
    }
}

/// Linear source indices for iterating `shape` with per-axis source strides.
fn broadcast_like_map(shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let numel: usize = shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; shape.len()];
    let mut lin = 0usize;
    for _ in 0..numel {
        map.push(lin);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            lin += src_strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            lin -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3, 4], &[2, 1, 4]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[3], &[2, 3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2], &[3]), None);
        assert_eq!(broadcast_map(&[2, 3], &[3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_map(&[2, 3], &[2, 1]), vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn upsample_repeats_each_frame() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let y = tape.nearest_upsample_time(x, 4).unwrap();
        assert_eq!(tape.shape(y), [1, 12, 1]);
        assert_eq!(tape.value(y).data(), [1., 1., 1., 1., 2., 2., 2., 2., 3., 3., 3., 3.]);
    }

    #[test]
    fn mean_of_identical_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3, 2], vec![1.5, -2.0, 1.5, -2.0, 1.5, -2.0]).unwrap());
        let m = tape.mean_over_axis(x, 0).unwrap();
        assert_eq!(tape.value(m).data(), [1.5, -2.0]);
    }

    #[test]
    fn permute_transposes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap());
        let y = tape.permute(x, &[1, 0]).unwrap();
        assert_eq!(tape.shape(y), [3, 2]);
        assert_eq!(tape.value(y).data(), [0., 3., 1., 4., 2., 5.]);
    }

    #[test]
    fn sum_backward_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let s = tape.sum(x);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), [1.0; 4]);
    }

    #[test]
    fn squared_norm_gradient_is_twice_x() {
        let values = vec![1.0, -2.0, 3.0, 0.5];
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::from_vec(values.clone()));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let grads = tape.backward(s).unwrap();
        let expected: Vec<f64> = values.iter().map(|v| 2.0 * v).collect();
        assert_eq!(grads.get(x).unwrap().data(), expected.as_slice());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::from_vec(vec![1.0, 2.0]));
        let y = tape.scale(x, 2.0);
        assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![4]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.linear(a, b, None).is_err());
        assert!(tape.mean_over_axis(a, 2).is_err());
    }
}
