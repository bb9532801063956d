use super::store::{Gradients, ParamId, ParameterStore};
use super::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};
use crate::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct LstmCache<S> {
    // gate activations i, f, g, o and tanh(c'), each [B×H]
    gates: Tensor<S>,
    tanh_c: Tensor<S>,
}

enum Op<S> {
    Input,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Tanh(Var),
    Sigmoid(Var),
    Elu(Var),
    Softmax(Var, usize),
    Dot(Var, Var),
    L1(Var, Var),
    Sum(Var),
    Dropout(Var, Tensor<S>),
    Lstm {
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        cache: LstmCache<S>,
    },
}

struct Node<S> {
    // None for parameters, whose values live in the store
    value: Option<Tensor<S>>,
    op: Op<S>,
    requires_grad: bool,
}

/// Records operations for one forward pass and replays them in reverse.
pub struct Tape<'a, S: Scalar> {
    store: &'a ParameterStore<S>,
    nodes: Vec<Node<S>>,
    param_nodes: Vec<Option<Var>>,
}

fn mismatch<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

impl<'a, S: Scalar> Tape<'a, S> {
    pub fn new(store: &'a ParameterStore<S>) -> Self {
        Tape {
            store,
            nodes: Vec::with_capacity(1024),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'a ParameterStore<S> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(i)) => self.store.value(ParamId(*i)),
            _ => unreachable!("non-parameter node without value"),
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id.0),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(mismatch("matmul", ta, tb));
        }
        let out = matmul_nn(ta, tb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(mismatch("matmul_t", ta, tb));
        }
        let out = matmul_nt(ta, tb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulT(a, b), rg))
    }

    fn broadcast_binary(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
    ) -> Result<Tensor<S>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() || (tb.rows() != ta.rows() && tb.rows() != 1) {
            return Err(mismatch(name, ta, tb));
        }
        if tb.rows() == ta.rows() {
            return Ok(ta.zip_map(tb, f));
        }
        let n = ta.cols();
        Ok(Tensor::from_fn(ta.rows(), n, |r, c| f(ta.get(r, c), tb.data()[c])))
    }

    /// Elementwise sum; `b` may be a `[1, n]` row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", ta, tb));
        }
        let out = ta.zip_map(tb, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: S) -> Var {
        let out = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    /// Stacks along rows (`axis == 0`) or columns (`axis == 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(*parts.first().ok_or(Error::EmptyInput)?);
        let out = match axis {
            0 => {
                let cols = first.cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.cols() != cols {
                        return Err(mismatch("concat", first, t));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::new(rows, cols, data)?
            }
            1 => {
                let rows = first.rows();
                let mut cols = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.rows() != rows {
                        return Err(mismatch("concat", first, t));
                    }
                    cols += t.cols();
                }
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                Tensor::new(rows, cols, data)?
            }
            _ => return Err(Error::InvalidTensor(format!("axis {axis}"))),
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// `len` rows (`axis == 0`) or columns (`axis == 1`) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let out = match axis {
            0 if start + len <= t.rows() => {
                Tensor::new(len, t.cols(), t.data()[start * t.cols()..(start + len) * t.cols()].to_vec())?
            }
            1 if start + len <= t.cols() => Tensor::from_fn(t.rows(), len, |r, c| t.get(r, start + c)),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "slice",
                    lhs: t.shape(),
                    rhs: vec![axis, start, len],
                })
            }
        };
        let rg = self.rg(a);
        Ok(self.push(out, Op::Slice(a, axis, start), rg))
    }

    pub fn split(&mut self, a: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &n in sizes {
            out.push(self.slice(a, axis, start, n)?);
            start += n;
        }
        Ok(out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|x| if x > S::zero() { x } else { x.exp() - S::one() });
        let rg = self.rg(a);
        self.push(out, Op::Elu(a), rg)
    }

    /// Softmax over each row (`axis == 1`) or each column (`axis == 0`).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        if axis > 1 {
            return Err(Error::InvalidTensor(format!("axis {axis}")));
        }
        let t = self.value(a);
        let (outer, inner) = if axis == 1 { (t.rows(), t.cols()) } else { (t.cols(), t.rows()) };
        let idx = |o: usize, i: usize| if axis == 1 { o * t.cols() + i } else { i * t.cols() + o };
        let mut out = t.clone();
        for o in 0..outer {
            let m = (0..inner).map(|i| t.data()[idx(o, i)]).fold(S::neg_infinity(), S::max);
            let mut z = S::zero();
            for i in 0..inner {
                let e = (t.data()[idx(o, i)] - m).exp();
                out.data_mut()[idx(o, i)] = e;
                z += e;
            }
            for i in 0..inner {
                out.data_mut()[idx(o, i)] /= z;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a, axis), rg))
    }

    /// Row-wise inner product, `[r, 1]`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("dot", ta, tb));
        }
        let out = Tensor::from_fn(ta.rows(), 1, |r, _| {
            ta.row_slice(r).iter().zip(tb.row_slice(r)).map(|(&x, &y)| x * y).sum()
        });
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Dot(a, b), rg))
    }

    /// Row-wise L1 distance, `[r, 1]`.
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("l1_distance", ta, tb));
        }
        let out = Tensor::from_fn(ta.rows(), 1, |r, _| {
            ta.row_slice(r).iter().zip(tb.row_slice(r)).map(|(&x, &y)| (x - y).abs()).sum()
        });
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::L1(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = S::lit(self.value(a).len() as f64);
        let s = self.sum(a);
        self.scale(s, S::one() / n)
    }

    /// Inverted dropout with an explicit 0/1 keep mask. Rate 0 is the identity.
    pub fn dropout(&mut self, a: Var, mask: &Tensor<S>, rate: S) -> Result<Var> {
        if rate == S::zero() {
            return Ok(a);
        }
        let t = self.value(a);
        if t.shape() != mask.shape() {
            return Err(mismatch("dropout", t, mask));
        }
        let keep = S::one() / (S::one() - rate);
        let scaled = mask.map(|m| m * keep);
        let out = t.zip_map(&scaled, |x, m| x * m);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Dropout(a, scaled), rg))
    }

    /// One LSTM step. `x: [B, I]`, `h, c: [B, H]`, `w_ih: [I, 4H]`,
    /// `w_hh: [H, 4H]`, `b: [1, 4H]`; gate order i, f, g, o.
    /// Returns `[B, 2H]` holding `[h', c']`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, b: Var) -> Result<Var> {
        let (tx, th, tc) = (self.value(x), self.value(h), self.value(c));
        let (twi, twh, tb) = (self.value(w_ih), self.value(w_hh), self.value(b));
        let hs = th.cols();
        let bsz = tx.rows();
        if twi.rows() != tx.cols() || twi.cols() != 4 * hs {
            return Err(mismatch("lstm_cell", tx, twi));
        }
        if twh.rows() != hs || twh.cols() != 4 * hs || th.rows() != bsz {
            return Err(mismatch("lstm_cell", th, twh));
        }
        if tc.shape() != th.shape() || tb.rows() != 1 || tb.cols() != 4 * hs {
            return Err(mismatch("lstm_cell", tc, tb));
        }
        let mut z = matmul_nn(tx, twi);
        z.add_assign(&matmul_nn(th, twh));
        let mut gates = z;
        let mut tanh_c = Tensor::zeros(bsz, hs);
        let mut out = Tensor::zeros(bsz, 2 * hs);
        for r in 0..bsz {
            for k in 0..hs {
                let zi = gates.get(r, k) + tb.data()[k];
                let zf = gates.get(r, hs + k) + tb.data()[hs + k];
                let zg = gates.get(r, 2 * hs + k) + tb.data()[2 * hs + k];
                let zo = gates.get(r, 3 * hs + k) + tb.data()[3 * hs + k];
                let (i, f, g, o) = (sigmoid(zi), sigmoid(zf), zg.tanh(), sigmoid(zo));
                gates.set(r, k, i);
                gates.set(r, hs + k, f);
                gates.set(r, 2 * hs + k, g);
                gates.set(r, 3 * hs + k, o);
                let c_new = f * tc.get(r, k) + i * g;
                let tcn = c_new.tanh();
                tanh_c.set(r, k, tcn);
                out.set(r, k, o * tcn);
                out.set(r, hs + k, c_new);
            }
        }
        let rg = [x, h, c, w_ih, w_hh, b].iter().any(|&v| self.rg(v));
        let op = Op::Lstm {
            x,
            h,
            c,
            w_ih,
            w_hh,
            b,
            cache: LstmCache { gates, tanh_c },
        };
        Ok(self.push(out, op, rg))
    }

    /// Reverse pass from a scalar `loss`. Parameters not reached get zero.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..=loss.0).map(|_| None).collect();
        let mut out = Gradients::zeros_like(self.store);
        grads[loss.0] = Some(Tensor::scalar(S::one()));

        fn acc<S: Scalar>(grads: &mut [Option<Tensor<S>>], v: Var, t: Tensor<S>) {
            match &mut grads[v.0] {
                Some(g) => g.add_assign(&t),
                slot => *slot = Some(t),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let val = |v: Var| self.value(v);
            let rg = |v: Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Input => {}
                Op::Param(p) => out.accumulate(*p, &g),
                Op::MatMul(a, b) => {
                    if rg(*a) {
                        acc(&mut grads, *a, matmul_nt(&g, val(*b)));
                    }
                    if rg(*b) {
                        acc(&mut grads, *b, matmul_tn(val(*a), &g));
                    }
                }
                Op::MatMulT(a, b) => {
                    if rg(*a) {
                        acc(&mut grads, *a, matmul_nn(&g, val(*b)));
                    }
                    if rg(*b) {
                        acc(&mut grads, *b, matmul_tn(&g, val(*a)));
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -S::one() } else { S::one() };
                    if rg(*b) {
                        let gb = if val(*b).rows() == g.rows() {
                            g.map(|x| x * sign)
                        } else {
                            Tensor::from_fn(1, g.cols(), |_, c| {
                                (0..g.rows()).map(|r| g.get(r, c)).sum::<S>() * sign
                            })
                        };
                        acc(&mut grads, *b, gb);
                    }
                    if rg(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if rg(*a) {
                        acc(&mut grads, *a, g.zip_map(val(*b), |x, y| x * y));
                    }
                    if rg(*b) {
                        acc(&mut grads, *b, g.zip_map(val(*a), |x, y| x * y));
                    }
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    acc(&mut grads, *a, g.map(|x| x * k));
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for &p in parts {
                        let t = val(p);
                        let n = if *axis == 0 { t.rows() } else { t.cols() };
                        if rg(p) {
                            let part = if *axis == 0 {
                                Tensor::new(n, g.cols(), g.data()[offset * g.cols()..(offset + n) * g.cols()].to_vec())?
                            } else {
                                Tensor::from_fn(g.rows(), n, |r, c| g.get(r, offset + c))
                            };
                            acc(&mut grads, p, part);
                        }
                        offset += n;
                    }
                }
                Op::Slice(a, axis, start) => {
                    let t = val(*a);
                    let mut full = Tensor::zeros(t.rows(), t.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            let (rr, cc) = if *axis == 0 { (r + start, c) } else { (r, c + start) };
                            full.set(rr, cc, g.get(r, c));
                        }
                    }
                    acc(&mut grads, *a, full);
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("op value");
                    acc(&mut grads, *a, g.zip_map(y, |gi, yi| gi * (S::one() - yi * yi)));
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("op value");
                    acc(&mut grads, *a, g.zip_map(y, |gi, yi| gi * yi * (S::one() - yi)));
                }
                Op::Elu(a) => {
                    let x = val(*a);
                    let y = node.value.as_ref().expect("op value");
                    let d = x.zip_map(y, |xi, yi| if xi > S::zero() { S::one() } else { yi + S::one() });
                    acc(&mut grads, *a, g.zip_map(&d, |gi, di| gi * di));
                }
                Op::Softmax(a, axis) => {
                    let y = node.value.as_ref().expect("op value");
                    let cols = y.cols();
                    let (outer, inner) = if *axis == 1 { (y.rows(), cols) } else { (cols, y.rows()) };
                    let idx = |o: usize, i: usize| if *axis == 1 { o * cols + i } else { i * cols + o };
                    let mut ga = Tensor::zeros(y.rows(), cols);
                    for o in 0..outer {
                        let s: S = (0..inner).map(|i| g.data()[idx(o, i)] * y.data()[idx(o, i)]).sum();
                        for i in 0..inner {
                            let k = idx(o, i);
                            ga.data_mut()[k] = y.data()[k] * (g.data()[k] - s);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Dot(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    if rg(*a) {
                        acc(&mut grads, *a, Tensor::from_fn(ta.rows(), ta.cols(), |r, c| g.get(r, 0) * tb.get(r, c)));
                    }
                    if rg(*b) {
                        acc(&mut grads, *b, Tensor::from_fn(tb.rows(), tb.cols(), |r, c| g.get(r, 0) * ta.get(r, c)));
                    }
                }
                Op::L1(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let sign = Tensor::from_fn(ta.rows(), ta.cols(), |r, c| {
                        let d = ta.get(r, c) - tb.get(r, c);
                        let s = if d > S::zero() {
                            S::one()
                        } else if d < S::zero() {
                            -S::one()
                        } else {
                            S::zero()
                        };
                        s * g.get(r, 0)
                    });
                    if rg(*b) {
                        acc(&mut grads, *b, sign.map(|x| -x));
                    }
                    if rg(*a) {
                        acc(&mut grads, *a, sign);
                    }
                }
                Op::Sum(a) => {
                    let t = val(*a);
                    acc(&mut grads, *a, Tensor::filled(t.rows(), t.cols(), g.item()));
                }
                Op::Dropout(a, scaled) => {
                    acc(&mut grads, *a, g.zip_map(scaled, |x, m| x * m));
                }
                Op::Lstm {
                    x,
                    h,
                    c,
                    w_ih,
                    w_hh,
                    b,
                    cache,
                } => {
                    let tc = val(*c);
                    let hs = tc.cols();
                    let bsz = tc.rows();
                    let gates = &cache.gates;
                    let mut dz = Tensor::zeros(bsz, 4 * hs);
                    let mut dc_prev = Tensor::zeros(bsz, hs);
                    for r in 0..bsz {
                        for k in 0..hs {
                            let (i, f) = (gates.get(r, k), gates.get(r, hs + k));
                            let (gg, o) = (gates.get(r, 2 * hs + k), gates.get(r, 3 * hs + k));
                            let tcn = cache.tanh_c.get(r, k);
                            let dh = g.get(r, k);
                            let dc = g.get(r, hs + k) + dh * o * (S::one() - tcn * tcn);
                            let d_o = dh * tcn;
                            let d_i = dc * gg;
                            let d_g = dc * i;
                            let d_f = dc * tc.get(r, k);
                            dc_prev.set(r, k, dc * f);
                            dz.set(r, k, d_i * i * (S::one() - i));
                            dz.set(r, hs + k, d_f * f * (S::one() - f));
                            dz.set(r, 2 * hs + k, d_g * (S::one() - gg * gg));
                            dz.set(r, 3 * hs + k, d_o * o * (S::one() - o));
                        }
                    }
                    if rg(*x) {
                        acc(&mut grads, *x, matmul_nt(&dz, val(*w_ih)));
                    }
                    if rg(*h) {
                        acc(&mut grads, *h, matmul_nt(&dz, val(*w_hh)));
                    }
                    if rg(*c) {
                        acc(&mut grads, *c, dc_prev);
                    }
                    if rg(*w_ih) {
                        acc(&mut grads, *w_ih, matmul_tn(val(*x), &dz));
                    }
                    if rg(*w_hh) {
                        acc(&mut grads, *w_hh, matmul_tn(val(*h), &dz));
                    }
                    if rg(*b) {
                        let db = Tensor::from_fn(1, 4 * hs, |_, k| (0..bsz).map(|r| dz.get(r, k)).sum());
                        acc(&mut grads, *b, db);
                    }
                }
            }
        }
        Ok(out)
    }
}
