//! Tape of dense matrix operations with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep. Every reduction
//! runs sequentially in a fixed order, which keeps repeated forward/backward
//! passes bit-identical.

use nalgebra::Cholesky;

use super::{Matrix, ParamId, ParamStore, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    None,
    /// `b` is `1 × m`, repeated over rows.
    Row,
    /// `b` is `n × 1`, repeated over columns.
    Col,
    /// `b` is `1 × 1`.
    Scalar,
}

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum UnKind {
    Neg,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Square,
    Recip,
}

/// Reduction axis. `Rows` reduces each row to one value (`n × m → n × 1`),
/// `Cols` reduces each column (`n × m → 1 × m`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Binary {
        kind: BinKind,
        a: Var,
        b: Var,
        bcast: Bcast,
    },
    Unary {
        kind: UnKind,
        a: Var,
    },
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSumExp(Var, Axis),
    Sum(Var),
    SumAxis(Var, Axis),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        a: Var,
        start: usize,
    },
    SliceRows {
        a: Var,
        start: usize,
    },
    GatherRows {
        a: Var,
        idx: Vec<usize>,
    },
    Gather {
        a: Var,
        pos: Vec<(usize, usize)>,
    },
    /// Per-row `x Σ⁻¹ xᵀ`; caches `Σ⁻¹ xᵀ` as an `n × d` matrix.
    InvQuad {
        x: Var,
        sigma: Var,
        solved: Matrix,
    },
    /// `log det Σ`; caches `Σ⁻¹`.
    LogDet {
        sigma: Var,
        inverse: Matrix,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Gradients from one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> TensorError {
    TensorError::Shape { op, lhs: a, rhs: b }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// A constant input; receives gradients but they are not collected anywhere.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    fn binary(
        &mut self,
        kind: BinKind,
        name: &'static str,
        a: Var,
        b: Var,
    ) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bcast = if sa == sb {
            Bcast::None
        } else if sb == (1, 1) {
            Bcast::Scalar
        } else if sb.0 == 1 && sb.1 == sa.1 {
            Bcast::Row
        } else if sb.1 == 1 && sb.0 == sa.0 {
            Bcast::Col
        } else {
            return Err(shape_err(name, sa, sb));
        };
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let f = |x: f64, y: f64| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
            BinKind::Div => x / y,
        };
        let out = Matrix::from_fn(sa.0, sa.1, |r, c| {
            let y = match bcast {
                Bcast::None => vb[(r, c)],
                Bcast::Row => vb[(0, c)],
                Bcast::Col => vb[(r, 0)],
                Bcast::Scalar => vb[(0, 0)],
            };
            f(va[(r, c)], y)
        });
        Ok(self.push(out, Op::Binary { kind, a, b, bcast }))
    }

    /// `a + b`; `b` may be a row vector, column vector or scalar broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinKind::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinKind::Sub, "sub", a, b)
    }

    /// Elementwise product with the same broadcasting rules as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinKind::Mul, "mul", a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinKind::Div, "div", a, b)
    }

    fn unary(&mut self, kind: UnKind, a: Var) -> Var {
        let f = |x: f64| match kind {
            UnKind::Neg => -x,
            UnKind::Tanh => x.tanh(),
            UnKind::Sigmoid => sigmoid(x),
            UnKind::Exp => x.exp(),
            UnKind::Log => x.ln(),
            UnKind::Sqrt => x.sqrt(),
            UnKind::Square => x * x,
            UnKind::Recip => 1.0 / x,
        };
        let out = self.nodes[a.0].value.map(f);
        self.push(out, Op::Unary { kind, a })
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnKind::Neg, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnKind::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnKind::Sigmoid, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(UnKind::Log, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(UnKind::Sqrt, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnKind::Square, a)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(UnKind::Recip, a)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.nodes[a.0].value.map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].value.map(|x| x + c);
        self.push(out, Op::Offset(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let out = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let mut out = v.clone();
        for r in 0..v.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn logsumexp(&mut self, a: Var, axis: Axis) -> Var {
        let v = &self.nodes[a.0].value;
        let out = match axis {
            Axis::Rows => Matrix::from_fn(v.rows(), 1, |r, _| log_sum_exp(v.row(r))),
            Axis::Cols => {
                let t = v.transpose();
                Matrix::from_fn(1, v.cols(), |_, c| log_sum_exp(t.row(c)))
            }
        };
        self.push(out, Op::LogSumExp(a, axis))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.nodes[a.0].value.sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Var {
        let v = &self.nodes[a.0].value;
        let out = match axis {
            Axis::Rows => Matrix::from_fn(v.rows(), 1, |r, _| v.row(r).iter().sum()),
            Axis::Cols => {
                let mut out = Matrix::zeros(1, v.cols());
                for r in 0..v.rows() {
                    for (o, x) in out.as_mut_slice().iter_mut().zip(v.row(r)) {
                        *o += x;
                    }
                }
                out
            }
        };
        self.push(out, Op::SumAxis(a, axis))
    }

    /// Euclidean norm over all entries, as a scalar.
    pub fn l2_norm(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        let s = self.sum(sq);
        self.sqrt(s)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(shape_err("concat_cols", self.shape(parts[0]), s));
            }
            cols += s.1;
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = out.row_mut(r);
            let mut off = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.row(r);
                row[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.1 != cols {
                return Err(shape_err("concat_rows", self.shape(parts[0]), s));
            }
            rows += s.0;
            data.extend_from_slice(self.nodes[p.0].value.as_slice());
        }
        Ok(self.push(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if start + len > s.1 {
            return Err(shape_err("slice_cols", s, (start, len)));
        }
        let v = &self.nodes[a.0].value;
        let out = Matrix::from_fn(s.0, len, |r, c| v[(r, start + c)]);
        Ok(self.push(out, Op::SliceCols { a, start }))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if start + len > s.0 {
            return Err(shape_err("slice_rows", s, (start, len)));
        }
        let v = &self.nodes[a.0].value;
        let out = Matrix::from_vec(
            len,
            s.1,
            v.as_slice()[start * s.1..(start + len) * s.1].to_vec(),
        );
        Ok(self.push(out, Op::SliceRows { a, start }))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var, TensorError> {
        self.slice_rows(a, r, 1)
    }

    /// Stacks the listed rows of `a` (rows may repeat), e.g. an embedding lookup.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= s.0) {
            return Err(shape_err("gather_rows", s, (bad, 0)));
        }
        let v = &self.nodes[a.0].value;
        let mut data = Vec::with_capacity(idx.len() * s.1);
        for &i in idx {
            data.extend_from_slice(v.row(i));
        }
        Ok(self.push(
            Matrix::from_vec(idx.len(), s.1, data),
            Op::GatherRows {
                a,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Picks individual entries into a `1 × k` row.
    pub fn gather(&mut self, a: Var, pos: &[(usize, usize)]) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if let Some(&bad) = pos.iter().find(|&&(r, c)| r >= s.0 || c >= s.1) {
            return Err(shape_err("gather", s, bad));
        }
        let v = &self.nodes[a.0].value;
        let out = Matrix::row_vector(pos.iter().map(|&p| v[p]).collect());
        Ok(self.push(
            out,
            Op::Gather {
                a,
                pos: pos.to_vec(),
            },
        ))
    }

    /// For each row `xᵢ` of `x` (`n × d`), the quadratic form `xᵢ Σ⁻¹ xᵢᵀ`,
    /// evaluated by Cholesky solve. Result is `n × 1`.
    pub fn inv_quad(&mut self, x: Var, sigma: Var) -> Result<Var, TensorError> {
        let (sx, ss) = (self.shape(x), self.shape(sigma));
        if ss.0 != ss.1 || sx.1 != ss.0 {
            return Err(shape_err("inv_quad", sx, ss));
        }
        let chol = Cholesky::new(self.nodes[sigma.0].value.to_nalgebra())
            .ok_or(TensorError::NotPositiveDefinite { op: "inv_quad" })?;
        let xt = self.nodes[x.0].value.transpose().to_nalgebra();
        let z = chol.solve(&xt); // d × n
        let xv = &self.nodes[x.0].value;
        let out = Matrix::from_fn(sx.0, 1, |r, _| {
            (0..sx.1).map(|c| xv[(r, c)] * z[(c, r)]).sum::<f64>()
        });
        let solved = Matrix::from_nalgebra(&z.transpose());
        Ok(self.push(out, Op::InvQuad { x, sigma, solved }))
    }

    /// `log det Σ` for symmetric positive definite `Σ`.
    pub fn log_det(&mut self, sigma: Var) -> Result<Var, TensorError> {
        let ss = self.shape(sigma);
        if ss.0 != ss.1 {
            return Err(shape_err("log_det", ss, ss));
        }
        let chol = Cholesky::new(self.nodes[sigma.0].value.to_nalgebra())
            .ok_or(TensorError::NotPositiveDefinite { op: "log_det" })?;
        let l = chol.l_dirty();
        let ld = 2.0 * (0..ss.0).map(|i| l[(i, i)].ln()).sum::<f64>();
        let inverse = Matrix::from_nalgebra(&chol.inverse());
        Ok(self.push(Matrix::scalar(ld), Op::LogDet { sigma, inverse }))
    }

    pub(crate) fn leaf_params(&self) -> Vec<(Var, ParamId)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((Var(i), id)),
                _ => None,
            })
            .collect()
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let acc = |grads: &mut [Option<Matrix>], v: Var, delta: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Binary { kind, a, b, bcast } => {
                let (va, vb) = (val(*a), val(*b));
                let bv = |r: usize, c: usize| match bcast {
                    Bcast::None => vb[(r, c)],
                    Bcast::Row => vb[(0, c)],
                    Bcast::Col => vb[(r, 0)],
                    Bcast::Scalar => vb[(0, 0)],
                };
                let (n, m) = va.shape();
                let ga = Matrix::from_fn(n, m, |r, c| match kind {
                    BinKind::Add | BinKind::Sub => g[(r, c)],
                    BinKind::Mul => g[(r, c)] * bv(r, c),
                    BinKind::Div => g[(r, c)] / bv(r, c),
                });
                let gb_full = Matrix::from_fn(n, m, |r, c| match kind {
                    BinKind::Add => g[(r, c)],
                    BinKind::Sub => -g[(r, c)],
                    BinKind::Mul => g[(r, c)] * va[(r, c)],
                    BinKind::Div => {
                        let y = bv(r, c);
                        -g[(r, c)] * va[(r, c)] / (y * y)
                    }
                });
                let gb = reduce_broadcast(gb_full, *bcast);
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Unary { kind, a } => {
                let x = val(*a);
                let y = &node.value;
                let local = match kind {
                    UnKind::Neg => g.map(|v| -v),
                    UnKind::Tanh => Matrix::from_fn(g.rows(), g.cols(), |r, c| {
                        g[(r, c)] * (1.0 - y[(r, c)] * y[(r, c)])
                    }),
                    UnKind::Sigmoid => Matrix::from_fn(g.rows(), g.cols(), |r, c| {
                        g[(r, c)] * y[(r, c)] * (1.0 - y[(r, c)])
                    }),
                    UnKind::Exp => g.zip_map(y, |gv, yv| gv * yv),
                    UnKind::Log => g.zip_map(x, |gv, xv| gv / xv),
                    UnKind::Sqrt => g.zip_map(y, |gv, yv| gv * 0.5 / yv),
                    UnKind::Square => g.zip_map(x, |gv, xv| 2.0 * gv * xv),
                    UnKind::Recip => g.zip_map(y, |gv, yv| -gv * yv * yv),
                };
                acc(grads, *a, local);
            }
            Op::Scale(a, s) => acc(grads, *a, g.map(|v| v * s)),
            Op::Offset(a) => acc(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                let ga = g.matmul(&val(*b).transpose());
                let gb = val(*a).transpose().matmul(g);
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Transpose(a) => acc(grads, *a, g.transpose()),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut out = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols() {
                        out[(r, c)] = y[(r, c)] * (g[(r, c)] - dot);
                    }
                }
                acc(grads, *a, out);
            }
            Op::LogSumExp(a, axis) => {
                let x = val(*a);
                let y = &node.value;
                let out = Matrix::from_fn(x.rows(), x.cols(), |r, c| {
                    let (lse, gv) = match axis {
                        Axis::Rows => (y[(r, 0)], g[(r, 0)]),
                        Axis::Cols => (y[(0, c)], g[(0, c)]),
                    };
                    if lse == f64::NEG_INFINITY {
                        0.0
                    } else {
                        gv * (x[(r, c)] - lse).exp()
                    }
                });
                acc(grads, *a, out);
            }
            Op::Sum(a) => {
                let (n, m) = val(*a).shape();
                acc(grads, *a, Matrix::filled(n, m, g.item()));
            }
            Op::SumAxis(a, axis) => {
                let (n, m) = val(*a).shape();
                let out = Matrix::from_fn(n, m, |r, c| match axis {
                    Axis::Rows => g[(r, 0)],
                    Axis::Cols => g[(0, c)],
                });
                acc(grads, *a, out);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (n, m) = val(p).shape();
                    let part = Matrix::from_fn(n, m, |r, c| g[(r, off + c)]);
                    off += m;
                    acc(grads, p, part);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (n, m) = val(p).shape();
                    let part =
                        Matrix::from_vec(n, m, g.as_slice()[off * m..(off + n) * m].to_vec());
                    off += n;
                    acc(grads, p, part);
                }
            }
            Op::SliceCols { a, start } => {
                let (n, m) = val(*a).shape();
                let mut out = Matrix::zeros(n, m);
                for r in 0..n {
                    for c in 0..g.cols() {
                        out[(r, start + c)] = g[(r, c)];
                    }
                }
                acc(grads, *a, out);
            }
            Op::SliceRows { a, start } => {
                let (n, m) = val(*a).shape();
                let mut out = Matrix::zeros(n, m);
                out.as_mut_slice()[start * m..(start + g.rows()) * m].copy_from_slice(g.as_slice());
                acc(grads, *a, out);
            }
            Op::GatherRows { a, idx } => {
                let (n, m) = val(*a).shape();
                let mut out = Matrix::zeros(n, m);
                for (k, &i) in idx.iter().enumerate() {
                    for c in 0..m {
                        out[(i, c)] += g[(k, c)];
                    }
                }
                acc(grads, *a, out);
            }
            Op::Gather { a, pos } => {
                let (n, m) = val(*a).shape();
                let mut out = Matrix::zeros(n, m);
                for (k, &p) in pos.iter().enumerate() {
                    out[p] += g[(0, k)];
                }
                acc(grads, *a, out);
            }
            Op::InvQuad { x, sigma, solved } => {
                // d/dx = 2 Σ⁻¹x, d/dΣ = -Σ⁻¹x xᵀΣ⁻¹ (Σ symmetric)
                let (n, d) = solved.shape();
                let gx = Matrix::from_fn(n, d, |r, c| 2.0 * g[(r, 0)] * solved[(r, c)]);
                let mut gs = Matrix::zeros(d, d);
                for r in 0..n {
                    let w = g[(r, 0)];
                    let z = solved.row(r);
                    for i in 0..d {
                        for j in 0..d {
                            gs[(i, j)] -= w * z[i] * z[j];
                        }
                    }
                }
                acc(grads, *x, gx);
                acc(grads, *sigma, gs);
            }
            Op::LogDet { sigma, inverse } => {
                let s = g.item();
                acc(grads, *sigma, inverse.transpose().map(|v| v * s));
            }
        }
    }
}

fn reduce_broadcast(full: Matrix, bcast: Bcast) -> Matrix {
    match bcast {
        Bcast::None => full,
        Bcast::Scalar => Matrix::scalar(full.sum()),
        Bcast::Row => {
            let mut out = Matrix::zeros(1, full.cols());
            for r in 0..full.rows() {
                for (o, x) in out.as_mut_slice().iter_mut().zip(full.row(r)) {
                    *o += x;
                }
            }
            out
        }
        Bcast::Col => Matrix::from_fn(full.rows(), 1, |r, _| full.row(r).iter().sum()),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log Σ exp(xᵢ)`; `-inf` for empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}
