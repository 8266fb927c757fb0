//! Reverse-mode automatic differentiation over small dense row-major tensors.
//!
//! Vector-valued (type-1) features use the layout `[rows, channels * 3]`, with
//! channel `c` occupying columns `3c..3c + 3`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length");
        Tensor { rows, cols, data }
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        Self::from_vec(rows, cols, data.iter().map(|&x| F::of(x)).collect())
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut F {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_f64_lossy()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, F),
    Gather(Var, Arc<[usize]>),
    ScatterAdd(Var, Arc<[usize]>),
    SegSoftmax(Var, Arc<[usize]>),
    LeakyRelu(Var, F),
    Silu(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    RowNorm(Var),
    Recip(Var),
    VecScale(Var, Var),
    Outer(Var, Var),
    VecDot(Var, Var),
    VecLinear(Var, Var),
    VecRmsNorm(Var, F),
    /// Saves the normalized values and the per-row inverse deviation.
    LayerNorm(Var, Vec<F>),
    Rbf(Var, RbfSpec),
    Sh2(Var),
    L2Apply(Var, Var),
}

/// Gaussian radial basis with a smooth cosine cutoff.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RbfSpec {
    pub count: usize,
    pub cutoff: f64,
}

impl RbfSpec {
    fn center(&self, k: usize) -> f64 {
        self.cutoff * k as f64 / (self.count - 1) as f64
    }

    fn gamma(&self) -> f64 {
        let width = self.cutoff / (self.count - 1) as f64;
        0.5 / (width * width)
    }
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Records operations and their results for a single backward sweep.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

const SQRT15: f64 = 3.872_983_346_207_417;
const SQRT5: f64 = 2.236_067_977_499_79;

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows, t.cols)
    }

    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols, y.rows, "matmul shapes");
        let mut out = Tensor::zeros(x.rows, y.cols);
        for i in 0..x.rows {
            for k in 0..x.cols {
                let xv = x.at(i, k);
                if xv == F::zero() {
                    continue;
                }
                let yr = y.row(k);
                let orow = &mut out.data[i * y.cols..(i + 1) * y.cols];
                for (o, &w) in orow.iter_mut().zip(yr) {
                    *o += xv * w;
                }
            }
        }
        self.push(out, Op::MatMul(a, b))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "elementwise shapes");
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::from_vec(x.rows, x.cols, data);
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Adds a `[1, cols]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (x, y) = (self.value(a), self.value(r));
        assert_eq!((y.rows, y.cols), (1, x.cols), "add_row shapes");
        let mut out = x.clone();
        for row in out.data.chunks_mut(x.cols.max(1)) {
            row.iter_mut().zip(&y.data).for_each(|(o, &b)| *o += b);
        }
        self.push(out, Op::AddRow(a, r))
    }

    /// Multiplies every row of `a` elementwise by a `[1, cols]` row.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let (x, y) = (self.value(a), self.value(r));
        assert_eq!((y.rows, y.cols), (1, x.cols), "mul_row shapes");
        let mut out = x.clone();
        for row in out.data.chunks_mut(x.cols.max(1)) {
            row.iter_mut().zip(&y.data).for_each(|(o, &b)| *o *= b);
        }
        self.push(out, Op::MulRow(a, r))
    }

    /// Multiplies row `i` of `a` by the scalar `s[i, 0]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Var {
        let (x, y) = (self.value(a), self.value(s));
        assert_eq!((y.rows, y.cols), (x.rows, 1), "scale_rows shapes");
        let mut out = x.clone();
        if x.cols > 0 {
            for (row, &k) in out.data.chunks_mut(x.cols).zip(&y.data) {
                row.iter_mut().for_each(|o| *o *= k);
            }
        }
        self.push(out, Op::ScaleRows(a, s))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let k = F::of(k);
        let x = self.value(a);
        let out = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|&v| v * k).collect());
        self.push(out, Op::Scale(a, k))
    }

    /// Row `e` of the result is row `idx[e]` of `a`.
    pub fn gather(&mut self, a: Var, idx: Arc<[usize]>) -> Var {
        let x = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * x.cols);
        for &i in idx.iter() {
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::from_vec(idx.len(), x.cols, data);
        self.push(out, Op::Gather(a, idx))
    }

    /// Sums row `e` of `a` into row `idx[e]` of an `n`-row result.
    pub fn scatter_add(&mut self, a: Var, idx: Arc<[usize]>, n: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows, idx.len(), "scatter_add index length");
        let mut out = Tensor::zeros(n, x.cols);
        for (e, &i) in idx.iter().enumerate() {
            for c in 0..x.cols {
                *out.at_mut(i, c) += x.at(e, c);
            }
        }
        self.push(out, Op::ScatterAdd(a, idx))
    }

    /// Softmax of a `[E, 1]` column within each segment `seg[e]`.
    pub fn seg_softmax(&mut self, z: Var, seg: Arc<[usize]>, n_seg: usize) -> Var {
        let x = self.value(z);
        assert_eq!((x.rows, x.cols), (seg.len(), 1), "seg_softmax shapes");
        let mut max = vec![F::neg_infinity(); n_seg];
        for (e, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(x.data[e]);
        }
        let mut data: Vec<F> = seg.iter().enumerate().map(|(e, &s)| (x.data[e] - max[s]).exp()).collect();
        let mut sum = vec![F::zero(); n_seg];
        for (e, &s) in seg.iter().enumerate() {
            sum[s] += data[e];
        }
        for (e, &s) in seg.iter().enumerate() {
            data[e] = data[e] / sum[s];
        }
        let out = Tensor::from_vec(seg.len(), 1, data);
        self.push(out, Op::SegSoftmax(z, seg))
    }

    fn map(&mut self, a: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let x = self.value(a);
        let out = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|&v| f(v)).collect());
        self.push(out, op)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let k = F::of(slope);
        self.map(a, |v| if v > F::zero() { v } else { v * k }, Op::LeakyRelu(a, k))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.map(a, |v| v * sigmoid(v), Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.map(a, |v| v.recip(), Op::Recip(a))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let x = self.value(p);
            assert_eq!(x.rows, rows, "concat rows");
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + x.cols].copy_from_slice(x.row(r));
            }
            off += x.cols;
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..start + len`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice bounds");
        let mut data = Vec::with_capacity(x.rows * len);
        for r in 0..x.rows {
            data.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let out = Tensor::from_vec(x.rows, len, data);
        self.push(out, Op::Slice(a, start))
    }

    /// Euclidean norm of each row, as a `[rows, 1]` column.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows).map(|r| x.row(r).iter().map(|&v| v * v).sum::<F>().sqrt()).collect();
        let out = Tensor::from_vec(x.rows, 1, data);
        self.push(out, Op::RowNorm(a))
    }

    /// Scales each 3-vector channel `c` by `s[r, c]`; `s` may be a single broadcast row.
    pub fn vec_scale(&mut self, v: Var, s: Var) -> Var {
        let (x, y) = (self.value(v), self.value(s));
        assert_eq!(x.cols, 3 * y.cols, "vec_scale channels");
        assert!(y.rows == x.rows || y.rows == 1, "vec_scale rows");
        let mut out = x.clone();
        for r in 0..x.rows {
            let sr = if y.rows == 1 { 0 } else { r };
            for c in 0..y.cols {
                let k = y.at(sr, c);
                for d in 0..3 {
                    *out.at_mut(r, 3 * c + d) *= k;
                }
            }
        }
        self.push(out, Op::VecScale(v, s))
    }

    /// `s[r, c] * u[r]` for a `[rows, 3]` direction `u`.
    pub fn outer(&mut self, s: Var, u: Var) -> Var {
        let (x, y) = (self.value(s), self.value(u));
        assert_eq!((y.rows, y.cols), (x.rows, 3), "outer shapes");
        let mut out = Tensor::zeros(x.rows, 3 * x.cols);
        for r in 0..x.rows {
            for c in 0..x.cols {
                for d in 0..3 {
                    *out.at_mut(r, 3 * c + d) = x.at(r, c) * y.at(r, d);
                }
            }
        }
        self.push(out, Op::Outer(s, u))
    }

    /// Dot product of each 3-vector channel with the row's `[rows, 3]` direction.
    pub fn vec_dot(&mut self, v: Var, u: Var) -> Var {
        let (x, y) = (self.value(v), self.value(u));
        assert_eq!((y.rows, y.cols), (x.rows, 3), "vec_dot shapes");
        let ch = x.cols / 3;
        let mut out = Tensor::zeros(x.rows, ch);
        for r in 0..x.rows {
            for c in 0..ch {
                *out.at_mut(r, c) = (0..3).map(|d| x.at(r, 3 * c + d) * y.at(r, d)).sum();
            }
        }
        self.push(out, Op::VecDot(v, u))
    }

    /// Channel mixing of 3-vector features by a `[in, out]` weight matrix.
    pub fn vec_linear(&mut self, v: Var, w: Var) -> Var {
        let (x, m) = (self.value(v), self.value(w));
        let (cin, cout) = (m.rows, m.cols);
        assert_eq!(x.cols, 3 * cin, "vec_linear channels");
        let mut out = Tensor::zeros(x.rows, 3 * cout);
        for r in 0..x.rows {
            for c in 0..cin {
                let vx = [x.at(r, 3 * c), x.at(r, 3 * c + 1), x.at(r, 3 * c + 2)];
                for o in 0..cout {
                    let k = m.at(c, o);
                    for d in 0..3 {
                        *out.at_mut(r, 3 * o + d) += k * vx[d];
                    }
                }
            }
        }
        self.push(out, Op::VecLinear(v, w))
    }

    /// Divides each row's 3-vector channels by their root-mean-square norm.
    pub fn vec_rms_norm(&mut self, v: Var, eps: f64) -> Var {
        let eps = F::of(eps);
        let x = self.value(v);
        let ch = F::of((x.cols / 3).max(1) as f64);
        let mut out = x.clone();
        for r in 0..x.rows {
            let q = x.row(r).iter().map(|&a| a * a).sum::<F>() / ch;
            let inv = (q + eps).sqrt().recip();
            out.data[r * x.cols..(r + 1) * x.cols].iter_mut().for_each(|o| *o *= inv);
        }
        self.push(out, Op::VecRmsNorm(v, eps))
    }

    /// Per-row standardization (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let eps = F::of(eps);
        let x = self.value(a);
        let n = F::of(x.cols as f64);
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let inv = (var + eps).sqrt().recip();
            for (o, &v) in out.data[r * x.cols..(r + 1) * x.cols].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push(out, Op::LayerNorm(a, inv_std))
    }

    /// Gaussian radial basis of a `[rows, 1]` distance column.
    pub fn rbf(&mut self, d: Var, spec: RbfSpec) -> Var {
        let x = self.value(d);
        assert_eq!(x.cols, 1, "rbf input");
        let gamma = F::of(spec.gamma());
        let mut out = Tensor::zeros(x.rows, spec.count);
        for r in 0..x.rows {
            let dist = x.data[r];
            let env = envelope(dist, spec.cutoff);
            for k in 0..spec.count {
                let t = dist - F::of(spec.center(k));
                *out.at_mut(r, k) = (-gamma * t * t).exp() * env;
            }
        }
        self.push(out, Op::Rbf(d, spec))
    }

    /// Degree-2 real harmonic polynomials of a `[rows, 3]` direction, ordered
    /// `m = -2..=2` (xy, yz, z², xz, x² − y²). Exactly homogeneous, so the
    /// result transforms correctly for any input length.
    pub fn sh2(&mut self, u: Var) -> Var {
        let x = self.value(u);
        assert_eq!(x.cols, 3, "sh2 input");
        let (s15, s5) = (F::of(SQRT15), F::of(SQRT5));
        let half = F::of(0.5);
        let two = F::of(2.0);
        let mut out = Tensor::zeros(x.rows, 5);
        for r in 0..x.rows {
            let (a, b, c) = (x.at(r, 0), x.at(r, 1), x.at(r, 2));
            let row = &mut out.data[r * 5..r * 5 + 5];
            row[0] = s15 * a * b;
            row[1] = s15 * b * c;
            row[2] = half * s5 * (two * c * c - a * a - b * b);
            row[3] = s15 * a * c;
            row[4] = half * s15 * (a * a - b * b);
        }
        self.push(out, Op::Sh2(u))
    }

    /// Applies the symmetric traceless matrix encoded by degree-2 coefficients
    /// `y` to each 3-vector channel of `v`: the 1 ⊗ 2 → 1 coupling.
    pub fn l2_apply(&mut self, y: Var, v: Var) -> Var {
        let (yt, x) = (self.value(y), self.value(v));
        assert_eq!((yt.rows, yt.cols), (x.rows, 5), "l2_apply coefficients");
        let ch = x.cols / 3;
        let mut out = Tensor::zeros(x.rows, x.cols);
        for r in 0..x.rows {
            let q = quad_form(yt.row(r));
            for c in 0..ch {
                let vx = [x.at(r, 3 * c), x.at(r, 3 * c + 1), x.at(r, 3 * c + 2)];
                for a in 0..3 {
                    *out.at_mut(r, 3 * c + a) = q[a][0] * vx[0] + q[a][1] * vx[1] + q[a][2] * vx[2];
                }
            }
        }
        self.push(out, Op::L2Apply(y, v))
    }

    /// Reverse sweep from `out` seeded with `seed`. Returns one optional gradient per node.
    pub fn backward(&self, out: Var, seed: Tensor<F>) -> Gradients<F> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<F>>> = (0..n).map(|_| None).collect();
        assert_eq!(self.shape(out), (seed.rows, seed.cols), "seed shape");
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Tensor<F>>], v: Var) -> &'a mut Tensor<F> {
        let (r, c) = self.shape(v);
        grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c))
    }

    fn propagate(&self, i: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (x, y) = (self.value(a), self.value(b));
                let ga = self.acc(grads, a);
                for r in 0..x.rows {
                    for k in 0..x.cols {
                        let mut s = F::zero();
                        for c in 0..y.cols {
                            s += g.at(r, c) * y.at(k, c);
                        }
                        *ga.at_mut(r, k) += s;
                    }
                }
                let gb = self.acc(grads, b);
                for r in 0..x.rows {
                    for k in 0..x.cols {
                        let xv = x.at(r, k);
                        if xv == F::zero() {
                            continue;
                        }
                        for c in 0..y.cols {
                            *gb.at_mut(k, c) += xv * g.at(r, c);
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                add_into(self.acc(grads, a), g, F::one());
                add_into(self.acc(grads, b), g, F::one());
            }
            &Op::Sub(a, b) => {
                add_into(self.acc(grads, a), g, F::one());
                add_into(self.acc(grads, b), g, -F::one());
            }
            &Op::Mul(a, b) => {
                let (x, y) = (self.value(a), self.value(b));
                let ga = self.acc(grads, a);
                for ((o, &gv), &yv) in ga.data.iter_mut().zip(&g.data).zip(&y.data) {
                    *o += gv * yv;
                }
                let gb = self.acc(grads, b);
                for ((o, &gv), &xv) in gb.data.iter_mut().zip(&g.data).zip(&x.data) {
                    *o += gv * xv;
                }
            }
            &Op::AddRow(a, r) => {
                add_into(self.acc(grads, a), g, F::one());
                let gr = self.acc(grads, r);
                for row in 0..g.rows {
                    for c in 0..g.cols {
                        gr.data[c] += g.at(row, c);
                    }
                }
            }
            &Op::MulRow(a, r) => {
                let (x, y) = (self.value(a), self.value(r));
                let ga = self.acc(grads, a);
                for row in 0..g.rows {
                    for c in 0..g.cols {
                        *ga.at_mut(row, c) += g.at(row, c) * y.data[c];
                    }
                }
                let gr = self.acc(grads, r);
                for row in 0..g.rows {
                    for c in 0..g.cols {
                        gr.data[c] += g.at(row, c) * x.at(row, c);
                    }
                }
            }
            &Op::ScaleRows(a, s) => {
                let (x, y) = (self.value(a), self.value(s));
                let ga = self.acc(grads, a);
                for row in 0..g.rows {
                    for c in 0..g.cols {
                        *ga.at_mut(row, c) += g.at(row, c) * y.data[row];
                    }
                }
                let gs = self.acc(grads, s);
                for row in 0..g.rows {
                    gs.data[row] += (0..g.cols).map(|c| g.at(row, c) * x.at(row, c)).sum::<F>();
                }
            }
            &Op::Scale(a, k) => add_into(self.acc(grads, a), g, k),
            Op::Gather(a, idx) => {
                let ga = self.acc(grads, *a);
                for (e, &src) in idx.iter().enumerate() {
                    for c in 0..g.cols {
                        *ga.at_mut(src, c) += g.at(e, c);
                    }
                }
            }
            Op::ScatterAdd(a, idx) => {
                let ga = self.acc(grads, *a);
                for (e, &dst) in idx.iter().enumerate() {
                    for c in 0..g.cols {
                        *ga.at_mut(e, c) += g.at(dst, c);
                    }
                }
            }
            Op::SegSoftmax(z, seg) => {
                let n_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![F::zero(); n_seg];
                for (e, &s) in seg.iter().enumerate() {
                    dot[s] += g.data[e] * out.data[e];
                }
                let gz = self.acc(grads, *z);
                for (e, &s) in seg.iter().enumerate() {
                    gz.data[e] += out.data[e] * (g.data[e] - dot[s]);
                }
            }
            &Op::LeakyRelu(a, k) => {
                let x = self.value(a);
                let ga = self.acc(grads, a);
                for ((o, &gv), &xv) in ga.data.iter_mut().zip(&g.data).zip(&x.data) {
                    *o += if xv > F::zero() { gv } else { gv * k };
                }
            }
            &Op::Silu(a) => {
                let x = self.value(a);
                let ga = self.acc(grads, a);
                for ((o, &gv), &xv) in ga.data.iter_mut().zip(&g.data).zip(&x.data) {
                    let s = sigmoid(xv);
                    *o += gv * s * (F::one() + xv * (F::one() - s));
                }
            }
            &Op::Sigmoid(a) => {
                let ga = self.acc(grads, a);
                for ((o, &gv), &y) in ga.data.iter_mut().zip(&g.data).zip(&out.data) {
                    *o += gv * y * (F::one() - y);
                }
            }
            &Op::Recip(a) => {
                let ga = self.acc(grads, a);
                for ((o, &gv), &y) in ga.data.iter_mut().zip(&g.data).zip(&out.data) {
                    *o -= gv * y * y;
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.shape(p).1;
                    let gp = self.acc(grads, p);
                    for r in 0..g.rows {
                        for c in 0..cols {
                            *gp.at_mut(r, c) += g.at(r, off + c);
                        }
                    }
                    off += cols;
                }
            }
            &Op::Slice(a, start) => {
                let ga = self.acc(grads, a);
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        *ga.at_mut(r, start + c) += g.at(r, c);
                    }
                }
            }
            &Op::RowNorm(a) => {
                let x = self.value(a);
                let ga = self.acc(grads, a);
                for r in 0..x.rows {
                    let y = out.data[r];
                    if y > F::zero() {
                        let k = g.data[r] / y;
                        for c in 0..x.cols {
                            *ga.at_mut(r, c) += k * x.at(r, c);
                        }
                    }
                }
            }
            &Op::VecScale(v, s) => {
                let (x, y) = (self.value(v), self.value(s));
                let gv = self.acc(grads, v);
                for r in 0..x.rows {
                    let sr = if y.rows == 1 { 0 } else { r };
                    for c in 0..y.cols {
                        let k = y.at(sr, c);
                        for d in 0..3 {
                            *gv.at_mut(r, 3 * c + d) += g.at(r, 3 * c + d) * k;
                        }
                    }
                }
                let gs = self.acc(grads, s);
                for r in 0..x.rows {
                    let sr = if y.rows == 1 { 0 } else { r };
                    for c in 0..y.cols {
                        *gs.at_mut(sr, c) += (0..3).map(|d| g.at(r, 3 * c + d) * x.at(r, 3 * c + d)).sum::<F>();
                    }
                }
            }
            &Op::Outer(s, u) => {
                let (x, y) = (self.value(s), self.value(u));
                let gs = self.acc(grads, s);
                for r in 0..x.rows {
                    for c in 0..x.cols {
                        *gs.at_mut(r, c) += (0..3).map(|d| g.at(r, 3 * c + d) * y.at(r, d)).sum::<F>();
                    }
                }
                let gu = self.acc(grads, u);
                for r in 0..x.rows {
                    for d in 0..3 {
                        *gu.at_mut(r, d) += (0..x.cols).map(|c| g.at(r, 3 * c + d) * x.at(r, c)).sum::<F>();
                    }
                }
            }
            &Op::VecDot(v, u) => {
                let (x, y) = (self.value(v), self.value(u));
                let ch = x.cols / 3;
                let gv = self.acc(grads, v);
                for r in 0..x.rows {
                    for c in 0..ch {
                        for d in 0..3 {
                            *gv.at_mut(r, 3 * c + d) += g.at(r, c) * y.at(r, d);
                        }
                    }
                }
                let gu = self.acc(grads, u);
                for r in 0..x.rows {
                    for d in 0..3 {
                        *gu.at_mut(r, d) += (0..ch).map(|c| g.at(r, c) * x.at(r, 3 * c + d)).sum::<F>();
                    }
                }
            }
            &Op::VecLinear(v, w) => {
                let (x, m) = (self.value(v), self.value(w));
                let (cin, cout) = (m.rows, m.cols);
                let gv = self.acc(grads, v);
                for r in 0..x.rows {
                    for c in 0..cin {
                        for o in 0..cout {
                            let k = m.at(c, o);
                            for d in 0..3 {
                                *gv.at_mut(r, 3 * c + d) += k * g.at(r, 3 * o + d);
                            }
                        }
                    }
                }
                let gw = self.acc(grads, w);
                for r in 0..x.rows {
                    for c in 0..cin {
                        for o in 0..cout {
                            *gw.at_mut(c, o) += (0..3).map(|d| x.at(r, 3 * c + d) * g.at(r, 3 * o + d)).sum::<F>();
                        }
                    }
                }
            }
            &Op::VecRmsNorm(v, eps) => {
                let x = self.value(v);
                let ch = F::of((x.cols / 3).max(1) as f64);
                let gv = self.acc(grads, v);
                for r in 0..x.rows {
                    let row = x.row(r);
                    let q = row.iter().map(|&a| a * a).sum::<F>() / ch;
                    let s = (q + eps).sqrt();
                    let gdotv: F = (0..x.cols).map(|c| g.at(r, c) * row[c]).sum();
                    let k = gdotv / (ch * s * s * s);
                    for c in 0..x.cols {
                        *gv.at_mut(r, c) += g.at(r, c) / s - row[c] * k;
                    }
                }
            }
            Op::LayerNorm(a, inv_std) => {
                let cols = out.cols;
                let n = F::of(cols as f64);
                let ga = self.acc(grads, *a);
                for r in 0..out.rows {
                    let xh = out.row(r);
                    let gr = g.row(r);
                    let mean_g = gr.iter().copied().sum::<F>() / n;
                    let mean_gx = gr.iter().zip(xh).map(|(&p, &q)| p * q).sum::<F>() / n;
                    for c in 0..cols {
                        *ga.at_mut(r, c) += inv_std[r] * (gr[c] - mean_g - xh[c] * mean_gx);
                    }
                }
            }
            &Op::Rbf(d, spec) => {
                let x = self.value(d);
                let gamma = F::of(spec.gamma());
                let gd = self.acc(grads, d);
                for r in 0..x.rows {
                    let dist = x.data[r];
                    let env = envelope(dist, spec.cutoff);
                    let denv = envelope_grad(dist, spec.cutoff);
                    let mut acc = F::zero();
                    for k in 0..spec.count {
                        let t = dist - F::of(spec.center(k));
                        let gauss = (-gamma * t * t).exp();
                        let dphi = gauss * (denv - F::of(2.0) * gamma * t * env);
                        acc += g.at(r, k) * dphi;
                    }
                    gd.data[r] += acc;
                }
            }
            &Op::Sh2(u) => {
                let x = self.value(u);
                let (s15, s5) = (F::of(SQRT15), F::of(SQRT5));
                let two = F::of(2.0);
                let gu = self.acc(grads, u);
                for r in 0..x.rows {
                    let (a, b, c) = (x.at(r, 0), x.at(r, 1), x.at(r, 2));
                    let gr = g.row(r);
                    let dx = s15 * (gr[0] * b + gr[3] * c + gr[4] * a) - s5 * gr[2] * a;
                    let dy = s15 * (gr[0] * a + gr[1] * c - gr[4] * b) - s5 * gr[2] * b;
                    let dz = s15 * (gr[1] * b + gr[3] * a) + two * s5 * gr[2] * c;
                    *gu.at_mut(r, 0) += dx;
                    *gu.at_mut(r, 1) += dy;
                    *gu.at_mut(r, 2) += dz;
                }
            }
            &Op::L2Apply(y, v) => {
                let (yt, x) = (self.value(y), self.value(v));
                let ch = x.cols / 3;
                let gv = self.acc(grads, v);
                for r in 0..x.rows {
                    let q = quad_form(yt.row(r));
                    for c in 0..ch {
                        for a in 0..3 {
                            let mut s = F::zero();
                            for b in 0..3 {
                                s += q[b][a] * g.at(r, 3 * c + b);
                            }
                            *gv.at_mut(r, 3 * c + a) += s;
                        }
                    }
                }
                let gy = self.acc(grads, y);
                let (s15, s5) = (F::of(SQRT15), F::of(SQRT5));
                for r in 0..x.rows {
                    // m[a][b] = sum over channels of g_a * v_b.
                    let mut m = [[F::zero(); 3]; 3];
                    for c in 0..ch {
                        for a in 0..3 {
                            for b in 0..3 {
                                m[a][b] += g.at(r, 3 * c + a) * x.at(r, 3 * c + b);
                            }
                        }
                    }
                    let half = F::of(0.5);
                    *gy.at_mut(r, 0) += (m[0][1] + m[1][0]) / s15;
                    *gy.at_mut(r, 1) += (m[1][2] + m[2][1]) / s15;
                    *gy.at_mut(r, 2) += F::of(2.0) / (F::of(3.0) * s5) * (m[2][2] - half * (m[0][0] + m[1][1]));
                    *gy.at_mut(r, 3) += (m[0][2] + m[2][0]) / s15;
                    *gy.at_mut(r, 4) += (m[0][0] - m[1][1]) / s15;
                }
            }
        }
    }
}

/// Gradients from one backward sweep.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn of(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn add_into<F: Real>(dst: &mut Tensor<F>, g: &Tensor<F>, k: F) {
    for (o, &v) in dst.data.iter_mut().zip(&g.data) {
        *o += k * v;
    }
}

#[inline]
fn sigmoid<F: Real>(v: F) -> F {
    if v >= F::zero() {
        (F::one() + (-v).exp()).recip()
    } else {
        let e = v.exp();
        e / (F::one() + e)
    }
}

fn envelope<F: Real>(d: F, cutoff: f64) -> F {
    let rc = F::of(cutoff);
    if d >= rc {
        F::zero()
    } else {
        F::of(0.5) * ((F::of(core::f64::consts::PI) * d / rc).cos() + F::one())
    }
}

fn envelope_grad<F: Real>(d: F, cutoff: f64) -> F {
    let rc = F::of(cutoff);
    if d >= rc {
        F::zero()
    } else {
        let k = F::of(core::f64::consts::PI) / rc;
        -F::of(0.5) * k * (k * d).sin()
    }
}

/// Symmetric traceless 3×3 matrix encoded by degree-2 coefficients; for
/// `y = sh2(u)` with unit `u` it equals `u uᵀ − I/3`.
fn quad_form<F: Real>(y: &[F]) -> [[F; 3]; 3] {
    let (s15, s5) = (F::of(SQRT15), F::of(SQRT5));
    let half = F::of(0.5);
    let p = y[0] / s15;
    let q = y[1] / s15;
    let t = F::of(2.0) * y[2] / (F::of(3.0) * s5);
    let s = y[3] / s15;
    let d = F::of(2.0) * y[4] / s15;
    [[half * (d - t), p, s], [p, -half * (t + d), q], [s, q, t]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

    /// Compares the tape gradient of `Σ w ⊙ f(inputs)` with central differences.
    fn check(shapes: &[(usize, usize)], build: &Build, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor<f64>> = shapes
            .iter()
            .map(|&(r, c)| Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect()))
            .collect();
        let eval = |ins: &[Tensor<f64>]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = ins.iter().map(|x| t.leaf(x.clone())).collect();
            let out = build(&mut t, &vars);
            (t, vars, out)
        };
        let (tape, vars, out) = eval(&inputs);
        let (r, c) = tape.shape(out);
        let w = Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect());
        let grads = tape.backward(out, w.clone());
        let loss = |ins: &[Tensor<f64>]| {
            let (t, _, o) = eval(ins);
            t.value(o).data.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        for (k, v) in vars.iter().enumerate() {
            for e in 0..inputs[k].data.len() {
                let mut plus = inputs.clone();
                let mut minus = inputs.clone();
                plus[k].data[e] += h;
                minus[k].data[e] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = grads.of(*v).map_or(0.0, |g| g.data[e]);
                assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "input {k} elem {e}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn dense_ops() {
        check(&[(3, 4), (4, 2)], &|t, v| t.matmul(v[0], v[1]), 1);
        check(&[(3, 4), (3, 4)], &|t, v| { let a = t.add(v[0], v[1]); let b = t.sub(a, v[1]); t.mul(b, v[1]) }, 2);
        check(&[(3, 4), (1, 4)], &|t, v| { let a = t.add_row(v[0], v[1]); t.mul_row(a, v[1]) }, 3);
        check(&[(3, 4), (3, 1)], &|t, v| t.scale_rows(v[0], v[1]), 4);
        check(&[(3, 4)], &|t, v| t.scale(v[0], -2.5), 5);
        check(&[(3, 4), (3, 2)], &|t, v| { let c = t.concat(&[v[0], v[1]]); t.slice(c, 2, 3) }, 6);
    }

    #[test]
    fn index_ops() {
        let idx: Arc<[usize]> = Arc::from([0usize, 2, 2, 1, 0]);
        let i2 = idx.clone();
        check(&[(3, 2)], &move |t, v| t.gather(v[0], i2.clone()), 7);
        let i3 = idx.clone();
        check(&[(5, 2)], &move |t, v| t.scatter_add(v[0], i3.clone(), 3), 8);
        let i4 = idx.clone();
        check(&[(5, 1)], &move |t, v| t.seg_softmax(v[0], i4.clone(), 3), 9);
    }

    #[test]
    fn activations() {
        check(&[(4, 3)], &|t, v| t.leaky_relu(v[0], 0.2), 10);
        check(&[(4, 3)], &|t, v| t.silu(v[0]), 11);
        check(&[(4, 3)], &|t, v| t.sigmoid(v[0]), 12);
        check(&[(4, 3)], &|t, v| { let n = t.row_norm(v[0]); t.recip(n) }, 13);
        check(&[(4, 5)], &|t, v| t.layer_norm(v[0], 1e-5), 14);
    }

    #[test]
    fn vector_ops() {
        check(&[(3, 6), (3, 2)], &|t, v| t.vec_scale(v[0], v[1]), 15);
        check(&[(3, 6), (1, 2)], &|t, v| t.vec_scale(v[0], v[1]), 16);
        check(&[(3, 2), (3, 3)], &|t, v| t.outer(v[0], v[1]), 17);
        check(&[(3, 6), (3, 3)], &|t, v| t.vec_dot(v[0], v[1]), 18);
        check(&[(3, 6), (2, 3)], &|t, v| t.vec_linear(v[0], v[1]), 19);
        check(&[(3, 9)], &|t, v| t.vec_rms_norm(v[0], 1e-6), 20);
        check(&[(4, 3)], &|t, v| t.sh2(v[0]), 21);
        check(&[(3, 5), (3, 6)], &|t, v| t.l2_apply(v[0], v[1]), 22);
    }

    #[test]
    fn radial_basis() {
        let spec = RbfSpec { count: 6, cutoff: 4.0 };
        check(&[(5, 1)], &move |t, v| {
            let n = t.row_norm(v[0]);
            let n = t.scale(n, 2.0);
            t.rbf(n, spec)
        }, 23);
        let mut t = Tape::<f64>::new();
        let d = t.leaf(Tensor::from_vec(2, 1, vec![4.0, 5.0]));
        let out = t.rbf(d, spec);
        assert!(t.value(out).data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn softmax_segments_sum_to_one() {
        let mut t = Tape::<f64>::new();
        let z = t.leaf(Tensor::from_vec(5, 1, vec![0.3, -2.0, 5.0, 1.0, 0.0]));
        let y = t.seg_softmax(z, Arc::from([0usize, 0, 1, 1, 1]), 2);
        let v = &t.value(y).data;
        assert!((v[0] + v[1] - 1.0).abs() < 1e-15);
        assert!((v[2] + v[3] + v[4] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quad_form_is_projector() {
        let u = [0.48, -0.6, 0.64];
        let mut t = Tape::<f64>::new();
        let uv = t.leaf(Tensor::from_vec(1, 3, u.to_vec()));
        let y = t.sh2(uv);
        let q = quad_form(t.value(y).row(0));
        for a in 0..3 {
            for b in 0..3 {
                let e = u[a] * u[b] - if a == b { 1.0 / 3.0 } else { 0.0 };
                assert!((q[a][b] - e).abs() < 1e-12);
            }
        }
    }
}
