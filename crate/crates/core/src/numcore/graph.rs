//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its variables in execution
//! order. Because the tape is topologically sorted by construction,
//! [`Graph::backward`] is a single reverse sweep. Parameters are borrowed from
//! a [`ParamStore`] rather than copied onto the tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::tensor::gemm;
use crate::numcore::{AttentionMask, ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

struct LstmCache {
    hidden: usize,
    /// Per processed step: gate activations `[i | f | g | o]`.
    gates: Vec<f64>,
    /// Per processed step: cell state and its tanh.
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
}

enum Op {
    Input,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    RowBias(Var, Var),
    ColBias(Var, Var),
    Relu(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows {
        a: Var,
        start: usize,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    Reshape(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropySum {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    MeanCols(Var),
    NormalizeRows {
        a: Var,
        norms: Vec<f64>,
    },
    Lstm {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        reverse: bool,
        cache: Box<LstmCache>,
    },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-9;

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    param_vars: Vec<Option<Var>>,
    training: bool,
    rng: ChaCha8Rng,
}

fn value_of<'a>(nodes: &'a [Node], store: &'a ParamStore, v: Var) -> &'a Tensor {
    let node = &nodes[v.0];
    match node.op {
        Op::Param(id) => store.get(id),
        _ => node
            .value
            .as_ref()
            .expect("non-parameter nodes own their value"),
    }
}

fn check_shape(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Shape(what()))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable masked softmax of one row into `out`. Disallowed
/// entries are exactly zero.
fn softmax_row(logits: &[f64], allow: Option<&[bool]>, out: &mut [f64]) -> bool {
    let allowed = |j: usize| allow.is_none_or(|a| a[j]);
    let mut max = f64::NEG_INFINITY;
    for (j, &v) in logits.iter().enumerate() {
        if allowed(j) && v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut total = 0.0;
    for (j, (&v, o)) in logits.iter().zip(out.iter_mut()).enumerate() {
        *o = if allowed(j) { (v - max).exp() } else { 0.0 };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    true
}

/// Row-wise softmax with an optional key mask, outside any graph.
pub fn softmax_rows(logits: &Tensor, mask: Option<&AttentionMask>) -> Result<Tensor> {
    let (r, c) = logits.dims2()?;
    if let Some(m) = mask {
        check_shape(m.rows() == r && m.cols() == c, || {
            format!("mask {}x{} vs logits {r}x{c}", m.rows(), m.cols())
        })?;
    }
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let ok = softmax_row(
            logits.row(i),
            mask.map(|m| m.row(i)),
            &mut out[i * c..(i + 1) * c],
        );
        if !ok {
            return Err(Error::DegenerateAttentionRow { row: i });
        }
    }
    Ok(Tensor::from_parts(vec![r, c], out))
}

impl<'s> Graph<'s> {
    /// A graph in evaluation mode (dropout disabled).
    pub fn new(store: &'s ParamStore) -> Self {
        Self::with_mode(store, false, 0)
    }

    /// `training` enables dropout, drawing masks from a stream seeded by `seed`.
    pub fn with_mode(store: &'s ParamStore, training: bool, seed: u64) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            grads: Vec::new(),
            param_vars: vec![None; store.len()],
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        value_of(&self.nodes, self.store, v)
    }

    /// Gradient accumulated by the last [`Graph::backward`], if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.value(v).shape().to_vec(), g.clone()))
    }

    /// Leaf variable; `requires_grad` marks it as a differentiation target.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Input, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.input(value, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        self.grads.push(None);
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Gradients of every parameter touched by this graph, indexed by
    /// [`ParamId`]; untouched parameters are `None`.
    pub fn param_grads(&self) -> Vec<Option<Tensor>> {
        self.param_vars
            .iter()
            .map(|v| v.and_then(|v| self.grad(v)))
            .collect()
    }

    // ---- forward operations -------------------------------------------

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (ar, ac) = self.value(a).dims2()?;
        let (br, bc) = self.value(b).dims2()?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        check_shape(k == k2, || format!("matmul inner {m}x{k} · {k2}x{n}"))?;
        let mut out = vec![0.0; m * n];
        gemm(
            self.value(a).data(),
            (ar, ac),
            ta,
            self.value(b).data(),
            (br, bc),
            tb,
            &mut out,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul { a, b, ta, tb },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        check_shape(va.shape() == vb.shape(), || {
            format!("elementwise {:?} vs {:?}", va.shape(), vb.shape())
        })?;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let va = self.value(a);
        let t = Tensor::from_parts(
            va.shape().to_vec(),
            va.data().iter().map(|x| x * s).collect(),
        );
        let rg = self.rg(a);
        self.push(t, Op::Scale(a, s), rg)
    }

    /// `x[r×c] + bias[c]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        check_shape(self.value(bias).len() == c, || {
            format!("row bias {} for {c} columns", self.value(bias).len())
        })?;
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, bb) in row.iter_mut().zip(b) {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(
            Tensor::from_parts(vec![r, c], out),
            Op::RowBias(x, bias),
            rg,
        ))
    }

    /// `x[r×c] + bias[r]` broadcast over columns.
    pub fn add_col_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        check_shape(self.value(bias).len() == r, || {
            format!("column bias {} for {r} rows", self.value(bias).len())
        })?;
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for (row, bb) in out.chunks_mut(c).zip(b) {
            for o in row {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(
            Tensor::from_parts(vec![r, c], out),
            Op::ColBias(x, bias),
            rg,
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let t = Tensor::from_parts(
            va.shape().to_vec(),
            va.data().iter().map(|&x| x.max(0.0)).collect(),
        );
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        check_shape(!parts.is_empty(), || "empty concat".into())?;
        let r = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            check_shape(pr == r, || format!("concat_cols rows {pr} vs {r}"))?;
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::from_parts(vec![r, total], out),
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        check_shape(!parts.is_empty(), || "empty concat".into())?;
        let c = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            check_shape(pc == c, || format!("concat_rows cols {pc} vs {c}"))?;
            rows += pr;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, c], out),
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a).slice_rows(start, len)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::SliceRows { a, start }, rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a).slice_cols(start, len)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::SliceCols { a, start }, rg))
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// `gamma[c]`, `beta[c]`.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        check_shape(
            self.value(gamma).len() == c && self.value(beta).len() == c,
            || format!("layer norm affine size vs {c} features"),
        )?;
        let xv = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::from_parts(vec![r, c], out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Row-wise softmax; masked entries are exactly zero.
    pub fn softmax(&mut self, logits: Var, mask: Option<&AttentionMask>) -> Result<Var> {
        let t = softmax_rows(self.value(logits), mask)?;
        let rg = self.rg(logits);
        Ok(self.push(t, Op::Softmax(logits), rg))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.value(table).dims2()?;
        check_shape(!ids.is_empty(), || "gather with no ids".into())?;
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            check_shape(id < r, || format!("id {id} out of {r} rows"))?;
            out.extend_from_slice(self.value(table).row(id));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), c], out),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// `-Σ_r log softmax(logits_r)[targets_r]`, a scalar.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.value(logits).dims2()?;
        check_shape(targets.len() == r, || {
            format!("{} targets for {r} logit rows", targets.len())
        })?;
        let probs = softmax_rows(self.value(logits), None)?.into_data();
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            check_shape(t < c, || format!("target {t} out of {c} classes"))?;
            let row = self.value(logits).row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropySum {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean over columns: `[r×c] → [r]`.
    pub fn mean_cols(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        let v = self.value(a);
        let out = (0..r)
            .map(|i| v.row(i).iter().sum::<f64>() / c as f64)
            .collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![r], out), Op::MeanCols(a), rg))
    }

    /// Scales each row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        let v = self.value(a);
        let mut norms = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let n = v.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::DegenerateEmbedding);
            }
            norms.push(n);
            out.extend(v.row(i).iter().map(|x| x / n));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_parts(vec![r, c], out),
            Op::NormalizeRows { a, norms },
            rg,
        ))
    }

    /// Inverted dropout; identity when not training or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !self.training || p <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - p;
        let shape = self.value(x).shape().to_vec();
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let m = self.constant(Tensor::from_parts(shape, mask));
        self.mul(x, m)
    }

    /// Single-direction LSTM over the columns of `x [D×T]`, returning hidden
    /// states `[h×T]` aligned with input time. Gates are stacked `i, f, g, o`
    /// in `w_ih [4h×D]`, `w_hh [4h×h]` and `bias [4h]`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Result<Var> {
        let (d, t_len) = self.value(x).dims2()?;
        let (g4, d2) = self.value(w_ih).dims2()?;
        let hidden = g4 / 4;
        check_shape(g4 % 4 == 0 && d2 == d, || {
            format!("lstm w_ih {g4}x{d2} for input dim {d}")
        })?;
        check_shape(self.value(w_hh).shape() == [g4, hidden], || {
            format!("lstm w_hh {:?}", self.value(w_hh).shape())
        })?;
        check_shape(self.value(bias).len() == g4, || "lstm bias".into())?;

        // Input contributions for all steps at once: [4h × T].
        let mut pre = vec![0.0; g4 * t_len];
        gemm(
            self.value(w_ih).data(),
            (g4, d),
            false,
            self.value(x).data(),
            (d, t_len),
            false,
            &mut pre,
            false,
        );
        let whh = self.value(w_hh).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; hidden * t_len];
        let mut gates = vec![0.0; g4 * t_len];
        let mut cells = vec![0.0; hidden * t_len];
        let mut tanh_cells = vec![0.0; hidden * t_len];
        let mut h_prev = vec![0.0; hidden];
        let mut c_prev = vec![0.0; hidden];
        let mut a = vec![0.0; g4];
        for s in 0..t_len {
            let t = if reverse { t_len - 1 - s } else { s };
            for (k, ak) in a.iter_mut().enumerate() {
                let rec: f64 = whh[k * hidden..(k + 1) * hidden]
                    .iter()
                    .zip(&h_prev)
                    .map(|(w, h)| w * h)
                    .sum();
                *ak = pre[k * t_len + t] + rec + b[k];
            }
            let gs = &mut gates[s * g4..(s + 1) * g4];
            for j in 0..hidden {
                let i_g = sigmoid(a[j]);
                let f_g = sigmoid(a[hidden + j]);
                let g_g = a[2 * hidden + j].tanh();
                let o_g = sigmoid(a[3 * hidden + j]);
                gs[j] = i_g;
                gs[hidden + j] = f_g;
                gs[2 * hidden + j] = g_g;
                gs[3 * hidden + j] = o_g;
                let c = f_g * c_prev[j] + i_g * g_g;
                let tc = c.tanh();
                cells[s * hidden + j] = c;
                tanh_cells[s * hidden + j] = tc;
                let h = o_g * tc;
                out[j * t_len + t] = h;
                c_prev[j] = c;
                h_prev[j] = h;
            }
        }
        let rg = self.rg(x) || self.rg(w_ih) || self.rg(w_hh) || self.rg(bias);
        Ok(self.push(
            Tensor::from_parts(vec![hidden, t_len], out),
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                bias,
                reverse,
                cache: Box::new(LstmCache {
                    hidden,
                    gates,
                    cells,
                    tanh_cells,
                }),
            },
            rg,
        ))
    }

    pub fn check_finite(&self, v: Var, what: &str) -> Result<()> {
        if self.value(v).all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    // ---- reverse sweep -----------------------------------------------

    /// Accumulates `d loss / d v` for every node that requires a gradient.
    /// `loss` must be a scalar. Gradients from an earlier call are cleared.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);
        let store = self.store;
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            if self.nodes[idx].requires_grad {
                backprop_node(&self.nodes, store, &mut self.grads, idx, &g);
            }
            self.grads[idx] = Some(g);
        }
        Ok(())
    }
}

/// Buffer for `v`'s gradient, allocated on first use. `None` when `v` does
/// not take gradients.
fn grad_buf<'g>(
    nodes: &[Node],
    store: &ParamStore,
    grads: &'g mut [Option<Vec<f64>>],
    v: Var,
) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = value_of(nodes, store, v).len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn backprop_node(
    nodes: &[Node],
    store: &ParamStore,
    grads: &mut [Option<Vec<f64>>],
    idx: usize,
    g: &[f64],
) {
    let val = |v: Var| value_of(nodes, store, v);
    let out = nodes[idx].value.as_ref();
    macro_rules! buf {
        ($v:expr) => {
            grad_buf(nodes, store, grads, $v)
        };
    }
    match &nodes[idx].op {
        Op::Input | Op::Param(_) => {}
        Op::MatMul { a, b, ta, tb } => {
            let (ar, ac) = val(*a).dims2().expect("matrix");
            let (br, bc) = val(*b).dims2().expect("matrix");
            let (m, n) = out.expect("value").dims2().expect("matrix");
            if let Some(da) = buf!(*a) {
                if *ta {
                    gemm(val(*b).data(), (br, bc), *tb, g, (m, n), true, da, true);
                } else {
                    gemm(g, (m, n), false, val(*b).data(), (br, bc), !*tb, da, true);
                }
            }
            if let Some(db) = buf!(*b) {
                if *tb {
                    gemm(g, (m, n), true, val(*a).data(), (ar, ac), *ta, db, true);
                } else {
                    gemm(val(*a).data(), (ar, ac), !*ta, g, (m, n), false, db, true);
                }
            }
        }
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if let Some(d) = buf!(v) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(d) = buf!(*a) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
            if let Some(d) = buf!(*b) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d -= g);
            }
        }
        Op::Mul(a, b) => {
            if let Some(d) = buf!(*a) {
                let other = val(*b).data();
                for ((d, g), o) in d.iter_mut().zip(g).zip(other) {
                    *d += g * o;
                }
            }
            if let Some(d) = buf!(*b) {
                let other = val(*a).data();
                for ((d, g), o) in d.iter_mut().zip(g).zip(other) {
                    *d += g * o;
                }
            }
        }
        Op::Scale(a, s) => {
            if let Some(d) = buf!(*a) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g * s);
            }
        }
        Op::RowBias(x, bias) => {
            let c = val(*x).cols();
            if let Some(d) = buf!(*x) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
            if let Some(d) = buf!(*bias) {
                for row in g.chunks(c) {
                    d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
            }
        }
        Op::ColBias(x, bias) => {
            let c = val(*x).cols();
            if let Some(d) = buf!(*x) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
            if let Some(d) = buf!(*bias) {
                for (db, row) in d.iter_mut().zip(g.chunks(c)) {
                    *db += row.iter().sum::<f64>();
                }
            }
        }
        Op::Relu(a) => {
            let y = out.expect("value").data();
            if let Some(d) = buf!(*a) {
                for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                    if *y > 0.0 {
                        *d += g;
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let (r, c) = val(*a).dims2().expect("matrix");
            if let Some(d) = buf!(*a) {
                // output is [c × r]
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(d) = buf!(*a) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
        }
        Op::ConcatCols(parts) => {
            let total = out.expect("value").cols();
            let r = out.expect("value").rows();
            let mut offset = 0;
            for &p in parts {
                let w = val(p).cols();
                if let Some(d) = buf!(p) {
                    for i in 0..r {
                        for j in 0..w {
                            d[i * w + j] += g[i * total + offset + j];
                        }
                    }
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = val(p).len();
                if let Some(d) = buf!(p) {
                    d.iter_mut()
                        .zip(&g[offset..offset + n])
                        .for_each(|(d, g)| *d += g);
                }
                offset += n;
            }
        }
        Op::SliceRows { a, start } => {
            let c = val(*a).cols();
            if let Some(d) = buf!(*a) {
                d[start * c..start * c + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, g)| *d += g);
            }
        }
        Op::SliceCols { a, start } => {
            let c = val(*a).cols();
            let (r, w) = out.expect("value").dims2().expect("matrix");
            if let Some(d) = buf!(*a) {
                for i in 0..r {
                    for j in 0..w {
                        d[i * c + start + j] += g[i * w + j];
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let (r, c) = val(*x).dims2().expect("matrix");
            let gam = val(*gamma).data();
            if let Some(d) = buf!(*gamma) {
                for i in 0..r {
                    for j in 0..c {
                        d[j] += g[i * c + j] * xhat[i * c + j];
                    }
                }
            }
            if let Some(d) = buf!(*beta) {
                for row in g.chunks(c) {
                    d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
            }
            if let Some(d) = buf!(*x) {
                let cf = c as f64;
                for i in 0..r {
                    let gr = &g[i * c..(i + 1) * c];
                    let xh = &xhat[i * c..(i + 1) * c];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..c {
                        let dxh = gr[j] * gam[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                    }
                    for j in 0..c {
                        let dxh = gr[j] * gam[j];
                        d[i * c + j] += inv_std[i] / cf * (cf * dxh - sum_dxh - xh[j] * sum_dxh_xh);
                    }
                }
            }
        }
        Op::Softmax(a) => {
            let y = out.expect("value");
            let (r, c) = y.dims2().expect("matrix");
            if let Some(d) = buf!(*a) {
                for i in 0..r {
                    let yr = y.row(i);
                    let gr = &g[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        d[i * c + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::Gather { table, ids } => {
            let c = val(*table).cols();
            if let Some(d) = buf!(*table) {
                for (k, &id) in ids.iter().enumerate() {
                    d[id * c..(id + 1) * c]
                        .iter_mut()
                        .zip(&g[k * c..(k + 1) * c])
                        .for_each(|(d, g)| *d += g);
                }
            }
        }
        Op::CrossEntropySum {
            logits,
            targets,
            probs,
        } => {
            let c = val(*logits).cols();
            if let Some(d) = buf!(*logits) {
                for (i, &t) in targets.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        d[i * c + j] += g[0] * (probs[i * c + j] - onehot);
                    }
                }
            }
        }
        Op::Sum(a) => {
            if let Some(d) = buf!(*a) {
                d.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::MeanCols(a) => {
            let (r, c) = val(*a).dims2().expect("matrix");
            if let Some(d) = buf!(*a) {
                for i in 0..r {
                    let share = g[i] / c as f64;
                    d[i * c..(i + 1) * c].iter_mut().for_each(|d| *d += share);
                }
            }
        }
        Op::NormalizeRows { a, norms } => {
            let y = out.expect("value");
            let c = y.cols();
            if let Some(d) = buf!(*a) {
                for (i, n) in norms.iter().enumerate() {
                    let yr = y.row(i);
                    let gr = &g[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        d[i * c + j] += (gr[j] - yr[j] * dot) / n;
                    }
                }
            }
        }
        Op::Lstm {
            x,
            w_ih,
            w_hh,
            bias,
            reverse,
            cache,
        } => backprop_lstm(
            nodes,
            store,
            grads,
            g,
            (*x, *w_ih, *w_hh, *bias),
            *reverse,
            cache,
        ),
    }
}

fn backprop_lstm(
    nodes: &[Node],
    store: &ParamStore,
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    (x, w_ih, w_hh, bias): (Var, Var, Var, Var),
    reverse: bool,
    cache: &LstmCache,
) {
    let val = |v: Var| value_of(nodes, store, v);
    let (d, t_len) = val(x).dims2().expect("matrix");
    let hidden = cache.hidden;
    let g4 = 4 * hidden;
    let whh = val(w_hh).data();
    // Pre-activation gradients for every time step: [4h × T].
    let mut d_pre = vec![0.0; g4 * t_len];
    let mut d_whh = vec![0.0; g4 * hidden];
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut da = vec![0.0; g4];
    // Hidden state produced at processed step `s`, read from the cached
    // gates and cells.
    let hidden_at = |s: usize, j: usize| {
        cache.gates[s * g4 + 3 * hidden + j] * cache.tanh_cells[s * hidden + j]
    };
    for s in (0..t_len).rev() {
        let t = if reverse { t_len - 1 - s } else { s };
        let gs = &cache.gates[s * g4..(s + 1) * g4];
        for j in 0..hidden {
            let dh = g[j * t_len + t] + dh_next[j];
            let (i_g, f_g, g_g, o_g) = (
                gs[j],
                gs[hidden + j],
                gs[2 * hidden + j],
                gs[3 * hidden + j],
            );
            let tc = cache.tanh_cells[s * hidden + j];
            let c_prev = if s == 0 {
                0.0
            } else {
                cache.cells[(s - 1) * hidden + j]
            };
            let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
            da[j] = dc * g_g * i_g * (1.0 - i_g);
            da[hidden + j] = dc * c_prev * f_g * (1.0 - f_g);
            da[2 * hidden + j] = dc * i_g * (1.0 - g_g * g_g);
            da[3 * hidden + j] = dh * tc * o_g * (1.0 - o_g);
            dc_next[j] = dc * f_g;
        }
        for k in 0..g4 {
            d_pre[k * t_len + t] = da[k];
        }
        // dh_prev = W_hh^T da ; dW_hh += da h_prev^T
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        if s > 0 {
            for k in 0..g4 {
                let dak = da[k];
                let wrow = &whh[k * hidden..(k + 1) * hidden];
                let drow = &mut d_whh[k * hidden..(k + 1) * hidden];
                for j in 0..hidden {
                    dh_next[j] += wrow[j] * dak;
                    drow[j] += dak * hidden_at(s - 1, j);
                }
            }
        }
    }
    if let Some(dx) = grad_buf(nodes, store, grads, x) {
        gemm(
            val(w_ih).data(),
            (g4, d),
            true,
            &d_pre,
            (g4, t_len),
            false,
            dx,
            true,
        );
    }
    if let Some(dw) = grad_buf(nodes, store, grads, w_ih) {
        gemm(
            &d_pre,
            (g4, t_len),
            false,
            val(x).data(),
            (d, t_len),
            true,
            dw,
            true,
        );
    }
    if let Some(dw) = grad_buf(nodes, store, grads, w_hh) {
        dw.iter_mut().zip(&d_whh).for_each(|(d, g)| *d += g);
    }
    if let Some(db) = grad_buf(nodes, store, grads, bias) {
        for (k, dbk) in db.iter_mut().enumerate() {
            *dbk += d_pre[k * t_len..(k + 1) * t_len].iter().sum::<f64>();
        }
    }
}
