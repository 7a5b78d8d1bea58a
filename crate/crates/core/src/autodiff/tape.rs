//! Tape-based reverse-mode differentiation over small dense matrices.
//!
//! Every value on the tape is a `rows x cols` matrix (vectors are single
//! rows). Parameters are read in place from a [`ParameterStore`]; their
//! gradients are written into a [`Gradients`] buffer by [`Tape::backward`].
//! Recurrent cells, attention and the copy/generate output layer are fused
//! into single nodes with hand-written adjoints.

use super::params::{Gradients, ParamId, ParameterStore};
use super::tensor::{axpy, dot, sigmoid, Real};
use crate::error::{MossError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    MatMulNt {
        a: Var,
        b: Var,
    },
    AddRow {
        x: Var,
        bias: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MaskMul {
        x: Var,
        mask: Vec<T>,
    },
    Tanh(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Row {
        x: Var,
        index: usize,
    },
    Sum(Var),
    SumMany(Vec<Var>),
    Pick {
        x: Var,
        index: usize,
    },
    Gru {
        x: Var,
        h: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        // z | r | n | r*h, each of width d
        cache: Vec<T>,
    },
    Attention {
        query: Var,
        keys: Var,
        values: Var,
        v: Var,
        weights: Vec<T>,
        act: Vec<T>,
    },
    CopyMix {
        gen: Var,
        copy: Option<Var>,
        src: Vec<usize>,
        // max-shifted logits of gen ++ copy, and log of their partition sum
        shifted: Vec<T>,
        log_z: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Vec<T>,
    rows: usize,
    cols: usize,
    requires_grad: bool,
}

pub struct Tape<'s, T: Real> {
    store: &'s ParameterStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    backward_done: bool,
}

impl<'s, T: Real> Tape<'s, T> {
    pub fn new(store: &'s ParameterStore<T>) -> Self {
        Tape {
            store,
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; store.len()],
            backward_done: false,
        }
    }

    pub fn store(&self) -> &'s ParameterStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.get(id).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Parameter ids that `v` depends on.
    pub fn reachable_params(&self, v: Var) -> Vec<ParamId> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![v.0];
        let mut out = Vec::new();
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut seen[i], true) {
                continue;
            }
            if let Op::Param(id) = self.nodes[i].op {
                out.push(id);
            }
            self.for_each_input(i, |inp| stack.push(inp.0));
        }
        out.sort();
        out
    }

    fn push(
        &mut self,
        op: Op<T>,
        value: Vec<T>,
        rows: usize,
        cols: usize,
        requires_grad: bool,
    ) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node {
            op,
            value,
            rows,
            cols,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a constant matrix.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(MossError::Dimension {
                op: "constant",
                expected: vec![rows, cols],
                actual: vec![data.len()],
            });
        }
        Ok(self.push(Op::Leaf, data, rows, cols, false))
    }

    pub fn row_constant(&mut self, data: Vec<T>) -> Var {
        let n = data.len();
        self.push(Op::Leaf, data, 1, n, false)
    }

    /// Records a differentiable leaf that is not a stored parameter; its
    /// gradient is available from [`Backward::grad`].
    pub fn variable(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var> {
        let v = self.constant(rows, cols, data)?;
        self.nodes[v.0].requires_grad = true;
        Ok(v)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let t = self.store.get(id);
        let (rows, cols) = (t.rows(), t.cols());
        let v = self.push(Op::Param(id), Vec::new(), rows, cols, true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(MossError::Index {
                index: bad,
                len: vocab,
            });
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&src[i * dim..(i + 1) * dim]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            out,
            ids.len(),
            dim,
            rg,
        ))
    }

    /// `a [m,k] * b[n,k]^T -> [m,n]`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(MossError::Dimension {
                op: "matmul_nt",
                expected: vec![n, k],
                actual: vec![n, k2],
            });
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let ar = &av[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ar, &bv[j * k..(j + 1) * k]);
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMulNt { a, b }, out, m, n, rg))
    }

    /// Adds a row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.shape(x);
        let (br, bc) = self.shape(bias);
        if br * bc != n {
            return Err(MossError::Dimension {
                op: "add_row",
                expected: vec![n],
                actual: vec![br, bc],
            });
        }
        let bv = self.value(bias);
        let mut out = self.value(x).to_vec();
        for r in 0..m {
            for (o, &b) in out[r * n..(r + 1) * n].iter_mut().zip(bv) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Op::AddRow { x, bias }, out, m, n, rg))
    }

    /// `x W^T + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul_nt(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(MossError::Dimension {
                op,
                expected: vec![sa.0, sa.1],
                actual: vec![sb.0, sb.1],
            });
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add(a, b), out, r, c, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Mul(a, b), out, r, c, rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| v * factor).collect();
        let rg = self.rg(&[x]);
        self.push(Op::Scale(x, factor), out, r, c, rg)
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask_mul(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        let (r, c) = self.shape(x);
        if mask.len() != r * c {
            return Err(MossError::Dimension {
                op: "mask_mul",
                expected: vec![r, c],
                actual: vec![mask.len()],
            });
        }
        let out = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Op::MaskMul { x, mask }, out, r, c, rg))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let rg = self.rg(&[x]);
        self.push(Op::Tanh(x), out, r, c, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let rg = self.rg(&[x]);
        self.push(Op::Sigmoid(x), out, r, c, rg)
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            let s = self.shape(bad);
            return Err(MossError::Dimension {
                op: "concat_cols",
                expected: vec![rows],
                actual: vec![s.0, s.1],
            });
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out, rows, cols, rg))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(MossError::precondition("stack_rows of nothing"));
        }
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(MossError::Dimension {
                    op: "stack_rows",
                    expected: vec![cols],
                    actual: vec![r, c],
                });
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        let rg = self.rg(parts);
        Ok(self.push(Op::StackRows(parts.to_vec()), out, rows, cols, rg))
    }

    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if index >= r {
            return Err(MossError::Index { index, len: r });
        }
        let out = self.value(x)[index * c..(index + 1) * c].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Row { x, index }, out, 1, c, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Op::Sum(x), vec![s], 1, 1, rg)
    }

    /// Elementwise sum of equally shaped values.
    pub fn sum_many(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(MossError::precondition("sum_many of nothing"));
        }
        let (r, c) = self.shape(parts[0]);
        let mut out = vec![T::zero(); r * c];
        for &p in parts {
            self.same_shape("sum_many", parts[0], p)?;
            for (o, &v) in out.iter_mut().zip(self.value(p)) {
                *o += v;
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Op::SumMany(parts.to_vec()), out, r, c, rg))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let len = self.value(x).len();
        if index >= len {
            return Err(MossError::Index { index, len });
        }
        let v = self.value(x)[index];
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Pick { x, index }, vec![v], 1, 1, rg))
    }

    /// Gated recurrent unit step.
    ///
    /// `w_ih` is `[3d, in]` and `w_hh` is `[3d, d]` with gate blocks in the
    /// order update `z`, reset `r`, candidate `n`; `bias` is `[3d]`:
    ///
    /// ```text
    /// z  = σ(W_z x + U_z h + b_z)
    /// r  = σ(W_r x + U_r h + b_r)
    /// n  = tanh(W_n x + U_n (r ⊙ h) + b_n)
    /// h' = (1 − z) ⊙ n + z ⊙ h
    /// ```
    pub fn gru(&mut self, x: Var, h: Var, w_ih: Var, w_hh: Var, bias: Var) -> Result<Var> {
        let (xr, din) = self.shape(x);
        let (hr, d) = self.shape(h);
        let (wr, wc) = self.shape(w_ih);
        let (ur, uc) = self.shape(w_hh);
        let (br, bc) = self.shape(bias);
        if xr != 1
            || hr != 1
            || wr != 3 * d
            || wc != din
            || ur != 3 * d
            || uc != d
            || br * bc != 3 * d
        {
            return Err(MossError::Dimension {
                op: "gru_cell",
                expected: vec![din, d, 3 * d, din, 3 * d, d, 3 * d],
                actual: vec![xr * din, hr * d, wr, wc, ur, uc, br * bc],
            });
        }
        let (xv, hv) = (self.value(x), self.value(h));
        let (wv, uv, bv) = (self.value(w_ih), self.value(w_hh), self.value(bias));
        let mut cache = vec![T::zero(); 4 * d];
        let mut out = vec![T::zero(); d];
        for i in 0..d {
            let z = sigmoid(
                dot(&wv[i * din..(i + 1) * din], xv) + dot(&uv[i * d..(i + 1) * d], hv) + bv[i],
            );
            let j = d + i;
            let r = sigmoid(
                dot(&wv[j * din..(j + 1) * din], xv) + dot(&uv[j * d..(j + 1) * d], hv) + bv[j],
            );
            cache[i] = z;
            cache[d + i] = r;
            cache[3 * d + i] = r * hv[i];
        }
        for i in 0..d {
            let k = 2 * d + i;
            let n = (dot(&wv[k * din..(k + 1) * din], xv)
                + dot(&uv[k * d..(k + 1) * d], &cache[3 * d..])
                + bv[k])
                .tanh();
            cache[2 * d + i] = n;
            let z = cache[i];
            out[i] = (T::one() - z) * n + z * hv[i];
        }
        let rg = self.rg(&[x, h, w_ih, w_hh, bias]);
        Ok(self.push(
            Op::Gru {
                x,
                h,
                w_ih,
                w_hh,
                bias,
                cache,
            },
            out,
            1,
            d,
            rg,
        ))
    }

    /// Additive attention: `score_i = v · tanh(query + keys_i)`, softmax over
    /// positions, context = weighted sum of `values` rows.
    ///
    /// `query` is the already-projected query `[1, a]`, `keys` `[n, a]`,
    /// `values` `[n, d]`, `v` has `a` entries.
    pub fn attention(&mut self, query: Var, keys: Var, values: Var, v: Var) -> Result<Var> {
        let (qr, a) = self.shape(query);
        let (n, ka) = self.shape(keys);
        let (vn, d) = self.shape(values);
        let vlen = self.value(v).len();
        if n == 0 || vn == 0 {
            return Err(MossError::precondition("attention over empty memory"));
        }
        if qr != 1 || ka != a || vn != n || vlen != a {
            return Err(MossError::Dimension {
                op: "additive_attention",
                expected: vec![1, a, n, a, n, a],
                actual: vec![qr, a, n, ka, vn, vlen],
            });
        }
        let (qv, kv, vv, mv) = (
            self.value(query),
            self.value(keys),
            self.value(v),
            self.value(values),
        );
        let mut act = vec![T::zero(); n * a];
        let mut scores = vec![T::zero(); n];
        for i in 0..n {
            let row = &mut act[i * a..(i + 1) * a];
            for j in 0..a {
                row[j] = (qv[j] + kv[i * a + j]).tanh();
            }
            scores[i] = dot(row, vv);
        }
        let weights = softmax(&scores);
        let mut ctx = vec![T::zero(); d];
        for i in 0..n {
            axpy(weights[i], &mv[i * d..(i + 1) * d], &mut ctx);
        }
        let rg = self.rg(&[query, keys, values, v]);
        Ok(self.push(
            Op::Attention {
                query,
                keys,
                values,
                v,
                weights,
                act,
            },
            ctx,
            1,
            d,
            rg,
        ))
    }

    /// Attention weights recorded by an [`Tape::attention`] node.
    pub fn attention_weights(&self, ctx: Var) -> Option<&[T]> {
        match &self.nodes[ctx.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Joint softmax over generation logits `gen [1,V]` and copy scores
    /// `copy [1,n]`. Copy position `j` contributes its probability to output
    /// slot `src[j]`; slots `>= V` are extended (out-of-vocabulary) entries.
    /// Returns log-probabilities over `ext_size` slots.
    pub fn copy_mix(
        &mut self,
        gen: Var,
        copy: Option<Var>,
        src: &[usize],
        ext_size: usize,
    ) -> Result<Var> {
        let vocab = self.value(gen).len();
        let ncopy = copy.map_or(0, |c| self.value(c).len());
        if ncopy != src.len() {
            return Err(MossError::Dimension {
                op: "copy_mix",
                expected: vec![ncopy],
                actual: vec![src.len()],
            });
        }
        if ext_size < vocab {
            return Err(MossError::precondition(
                "extended vocabulary smaller than vocabulary",
            ));
        }
        if let Some(&bad) = src.iter().find(|&&s| s >= ext_size) {
            return Err(MossError::Index {
                index: bad,
                len: ext_size,
            });
        }
        let mut shifted: Vec<T> = self.value(gen).to_vec();
        if let Some(c) = copy {
            shifted.extend_from_slice(self.value(c));
        }
        let m = shifted.iter().copied().fold(T::neg_infinity(), T::max);
        shifted.iter_mut().for_each(|v| *v -= m);
        let log_z = shifted.iter().map(|v| v.exp()).sum::<T>().ln();
        let mut out = vec![T::neg_infinity(); ext_size];
        out[..vocab].copy_from_slice(&shifted[..vocab]);
        for (j, &k) in src.iter().enumerate() {
            out[k] = log_add_exp(out[k], shifted[vocab + j]);
        }
        out.iter_mut().for_each(|v| *v -= log_z);
        let rg = self.rg(&[gen]) || copy.is_some_and(|c| self.rg(&[c]));
        Ok(self.push(
            Op::CopyMix {
                gen,
                copy,
                src: src.to_vec(),
                shifted,
                log_z,
            },
            out,
            1,
            ext_size,
            rg,
        ))
    }

    /// Log-softmax over a row of logits.
    pub fn log_softmax(&mut self, logits: Var) -> Result<Var> {
        let n = self.value(logits).len();
        self.copy_mix(logits, None, &[], n)
    }

    fn for_each_input(&self, i: usize, mut f: impl FnMut(Var)) {
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Embed { table, .. } => f(*table),
            Op::MatMulNt { a, b } => {
                f(*a);
                f(*b)
            }
            Op::AddRow { x, bias } => {
                f(*x);
                f(*bias)
            }
            Op::Add(a, b) | Op::Mul(a, b) => {
                f(*a);
                f(*b)
            }
            Op::Scale(x, _) | Op::Tanh(x) | Op::Sigmoid(x) | Op::Sum(x) => f(*x),
            Op::MaskMul { x, .. } | Op::Row { x, .. } | Op::Pick { x, .. } => f(*x),
            Op::ConcatCols(ps) | Op::StackRows(ps) | Op::SumMany(ps) => {
                ps.iter().for_each(|&p| f(p))
            }
            Op::Gru {
                x,
                h,
                w_ih,
                w_hh,
                bias,
                ..
            } => {
                for v in [x, h, w_ih, w_hh, bias] {
                    f(*v)
                }
            }
            Op::Attention {
                query,
                keys,
                values,
                v,
                ..
            } => {
                for x in [query, keys, values, v] {
                    f(*x)
                }
            }
            Op::CopyMix { gen, copy, .. } => {
                f(*gen);
                if let Some(c) = copy {
                    f(*c)
                }
            }
        }
    }

    /// Propagates `d(seed * loss)` to every parameter reachable from `loss`,
    /// accumulating into `grads`. A tape can be differentiated once.
    pub fn backward(
        &mut self,
        loss: Var,
        seed: T,
        grads: &mut Gradients<T>,
    ) -> Result<Backward<T>> {
        if self.backward_done {
            return Err(MossError::contract(
                "backward called twice on the same tape",
            ));
        }
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(MossError::contract(format!(
                "backward needs a scalar loss, got a {r}x{c} value"
            )));
        }
        if !self.scalar(loss).is_finite() {
            return Err(MossError::NonFinite("loss".into()));
        }
        if grads.slots.len() != self.store.len() {
            return Err(MossError::contract(
                "gradient buffer does not match parameter store",
            ));
        }
        self.backward_done = true;
        let mut sink = Sink {
            node: (0..self.nodes.len()).map(|_| None).collect(),
            params: grads,
        };
        if !self.nodes[loss.0].requires_grad {
            return Ok(Backward { node: sink.node });
        }
        sink.node[loss.0] = Some(vec![seed]);
        for i in (0..=loss.0).rev() {
            let Some(g) = sink.node[i].take() else {
                continue;
            };
            self.backprop_node(i, &g, &mut sink);
            sink.node[i] = Some(g);
        }
        Ok(Backward { node: sink.node })
    }

    fn backprop_node(&self, i: usize, g: &[T], sink: &mut Sink<'_, T>) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Embed { table, ids } => {
                let dim = node.cols;
                if let Some(dt) = sink.slot(nodes, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(
                            T::one(),
                            &g[r * dim..(r + 1) * dim],
                            &mut dt[id * dim..(id + 1) * dim],
                        );
                    }
                }
            }
            Op::MatMulNt { a, b } => {
                let (m, n) = (node.rows, node.cols);
                let k = nodes[a.0].cols;
                let av = self.value(*a);
                let bv = self.value(*b);
                if let Some(da) = sink.slot(nodes, *a) {
                    for r in 0..m {
                        let dar = &mut da[r * k..(r + 1) * k];
                        for j in 0..n {
                            let gij = g[r * n + j];
                            if gij != T::zero() {
                                axpy(gij, &bv[j * k..(j + 1) * k], dar);
                            }
                        }
                    }
                }
                if let Some(db) = sink.slot(nodes, *b) {
                    for r in 0..m {
                        let ar = &av[r * k..(r + 1) * k];
                        for j in 0..n {
                            let gij = g[r * n + j];
                            if gij != T::zero() {
                                axpy(gij, ar, &mut db[j * k..(j + 1) * k]);
                            }
                        }
                    }
                }
            }
            Op::AddRow { x, bias } => {
                let n = node.cols;
                if let Some(dx) = sink.slot(nodes, *x) {
                    axpy(T::one(), g, dx);
                }
                if let Some(db) = sink.slot(nodes, *bias) {
                    for r in 0..node.rows {
                        axpy(T::one(), &g[r * n..(r + 1) * n], db);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = sink.slot(nodes, *v) {
                        axpy(T::one(), g, d);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(da) = sink.slot(nodes, *a) {
                    for k in 0..g.len() {
                        da[k] += g[k] * bv[k];
                    }
                }
                if let Some(db) = sink.slot(nodes, *b) {
                    for k in 0..g.len() {
                        db[k] += g[k] * av[k];
                    }
                }
            }
            Op::Scale(x, f) => {
                if let Some(d) = sink.slot(nodes, *x) {
                    axpy(*f, g, d);
                }
            }
            Op::MaskMul { x, mask } => {
                if let Some(d) = sink.slot(nodes, *x) {
                    for k in 0..g.len() {
                        d[k] += g[k] * mask[k];
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(d) = sink.slot(nodes, *x) {
                    for k in 0..g.len() {
                        let y = node.value[k];
                        d[k] += g[k] * (T::one() - y * y);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(d) = sink.slot(nodes, *x) {
                    for k in 0..g.len() {
                        let y = node.value[k];
                        d[k] += g[k] * y * (T::one() - y);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = nodes[p.0].cols;
                    if let Some(d) = sink.slot(nodes, p) {
                        for r in 0..node.rows {
                            axpy(
                                T::one(),
                                &g[r * node.cols + off..r * node.cols + off + c],
                                &mut d[r * c..(r + 1) * c],
                            );
                        }
                    }
                    off += c;
                }
            }
            Op::StackRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p.0].rows * nodes[p.0].cols;
                    if let Some(d) = sink.slot(nodes, p) {
                        axpy(T::one(), &g[off..off + len], d);
                    }
                    off += len;
                }
            }
            Op::Row { x, index } => {
                let c = node.cols;
                if let Some(d) = sink.slot(nodes, *x) {
                    axpy(T::one(), g, &mut d[index * c..(index + 1) * c]);
                }
            }
            Op::Sum(x) => {
                if let Some(d) = sink.slot(nodes, *x) {
                    d.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::SumMany(parts) => {
                for &p in parts {
                    if let Some(d) = sink.slot(nodes, p) {
                        axpy(T::one(), g, d);
                    }
                }
            }
            Op::Pick { x, index } => {
                if let Some(d) = sink.slot(nodes, *x) {
                    d[*index] += g[0];
                }
            }
            Op::Gru {
                x,
                h,
                w_ih,
                w_hh,
                bias,
                cache,
            } => self.backprop_gru(g, *x, *h, *w_ih, *w_hh, *bias, cache, sink),
            Op::Attention {
                query,
                keys,
                values,
                v,
                weights,
                act,
            } => {
                let n = weights.len();
                let d = node.cols;
                let a = nodes[query.0].cols;
                let mv = self.value(*values);
                let dw: Vec<T> = (0..n).map(|i| dot(g, &mv[i * d..(i + 1) * d])).collect();
                if let Some(dvals) = sink.slot(nodes, *values) {
                    for i in 0..n {
                        axpy(weights[i], g, &mut dvals[i * d..(i + 1) * d]);
                    }
                }
                let mean: T = (0..n).map(|i| weights[i] * dw[i]).sum();
                let ds: Vec<T> = (0..n).map(|i| weights[i] * (dw[i] - mean)).collect();
                let vv = self.value(*v);
                if let Some(dv) = sink.slot(nodes, *v) {
                    for i in 0..n {
                        axpy(ds[i], &act[i * a..(i + 1) * a], dv);
                    }
                }
                let mut dact = vec![T::zero(); n * a];
                for i in 0..n {
                    for j in 0..a {
                        let t = act[i * a + j];
                        dact[i * a + j] = ds[i] * vv[j] * (T::one() - t * t);
                    }
                }
                if let Some(dk) = sink.slot(nodes, *keys) {
                    axpy(T::one(), &dact, dk);
                }
                if let Some(dq) = sink.slot(nodes, *query) {
                    for i in 0..n {
                        axpy(T::one(), &dact[i * a..(i + 1) * a], dq);
                    }
                }
            }
            Op::CopyMix {
                gen,
                copy,
                src,
                shifted,
                log_z,
            } => {
                let vocab = nodes[gen.0].cols * nodes[gen.0].rows;
                let total: T = g.iter().copied().sum();
                let out = &node.value;
                // dz_j = g[k] * q_j / P_k - q_j * Σg, with k the slot j feeds
                let dz = |j: usize, k: usize| -> T {
                    let q = (shifted[j] - *log_z).exp();
                    let ratio = if g[k] == T::zero() {
                        T::zero()
                    } else {
                        g[k] * (shifted[j] - *log_z - out[k]).exp()
                    };
                    ratio - q * total
                };
                if let Some(dg) = sink.slot(nodes, *gen) {
                    for (j, d) in dg.iter_mut().enumerate().take(vocab) {
                        *d += dz(j, j);
                    }
                }
                if let Some(c) = copy {
                    if let Some(dc) = sink.slot(nodes, *c) {
                        for (j, &k) in src.iter().enumerate() {
                            dc[j] += dz(vocab + j, k);
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_gru(
        &self,
        g: &[T],
        x: Var,
        h: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        cache: &[T],
        sink: &mut Sink<'_, T>,
    ) {
        let nodes = &self.nodes;
        let d = g.len();
        let din = nodes[x.0].cols;
        let (xv, hv) = (self.value(x), self.value(h));
        let (wv, uv) = (self.value(w_ih), self.value(w_hh));
        let (z, r, n, rh) = (
            &cache[..d],
            &cache[d..2 * d],
            &cache[2 * d..3 * d],
            &cache[3 * d..],
        );

        // pre-activation adjoints, gate order z | r | n
        let mut a = vec![T::zero(); 3 * d];
        let mut dh = vec![T::zero(); d];
        for i in 0..d {
            let dz = g[i] * (hv[i] - n[i]);
            let dn = g[i] * (T::one() - z[i]);
            dh[i] = g[i] * z[i];
            a[i] = dz * z[i] * (T::one() - z[i]);
            a[2 * d + i] = dn * (T::one() - n[i] * n[i]);
        }
        // through U_n (r ⊙ h)
        let mut drh = vec![T::zero(); d];
        for i in 0..d {
            axpy(
                a[2 * d + i],
                &uv[(2 * d + i) * d..(2 * d + i + 1) * d],
                &mut drh,
            );
        }
        for i in 0..d {
            let dr = drh[i] * hv[i];
            dh[i] += drh[i] * r[i];
            a[d + i] = dr * r[i] * (T::one() - r[i]);
        }
        if let Some(du) = sink.slot(nodes, w_hh) {
            for i in 0..2 * d {
                axpy(a[i], hv, &mut du[i * d..(i + 1) * d]);
            }
            for i in 0..d {
                let k = 2 * d + i;
                axpy(a[k], rh, &mut du[k * d..(k + 1) * d]);
            }
        }
        for i in 0..2 * d {
            axpy(a[i], &uv[i * d..(i + 1) * d], &mut dh);
        }
        if let Some(dhs) = sink.slot(nodes, h) {
            axpy(T::one(), &dh, dhs);
        }
        if let Some(dw) = sink.slot(nodes, w_ih) {
            for k in 0..3 * d {
                axpy(a[k], xv, &mut dw[k * din..(k + 1) * din]);
            }
        }
        if let Some(db) = sink.slot(nodes, bias) {
            axpy(T::one(), &a, db);
        }
        if let Some(dx) = sink.slot(nodes, x) {
            for k in 0..3 * d {
                axpy(a[k], &wv[k * din..(k + 1) * din], dx);
            }
        }
    }
}

struct Sink<'g, T> {
    node: Vec<Option<Vec<T>>>,
    params: &'g mut Gradients<T>,
}

impl<T: Real> Sink<'_, T> {
    fn slot<'a>(&'a mut self, nodes: &[Node<T>], v: Var) -> Option<&'a mut [T]> {
        let n = &nodes[v.0];
        if !n.requires_grad {
            return None;
        }
        if let Op::Param(id) = n.op {
            return Some(self.params.slots[id.0].as_mut_slice());
        }
        let len = n.rows * n.cols;
        Some(
            self.node[v.0]
                .get_or_insert_with(|| vec![T::zero(); len])
                .as_mut_slice(),
        )
    }
}

/// Adjoints of non-parameter nodes from one backward pass.
pub struct Backward<T> {
    node: Vec<Option<Vec<T>>>,
}

impl<T: Real> Backward<T> {
    /// Gradient w.r.t. a recorded value; `None` when nothing reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.node.get(v.0).and_then(|g| g.as_deref())
    }
}

pub(crate) fn softmax<T: Real>(x: &[T]) -> Vec<T> {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut e: Vec<T> = x.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.iter_mut().for_each(|v| *v = *v / s);
    e
}

fn log_add_exp<T: Real>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}
