use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sqrt(Var),
    Square(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape(Var),
    Transpose(Var),
    ReduceSum(Var),
    SumAxis(Var, usize),
    /// Selected flat input index for every output element (min/max reductions).
    Select { input: Var, picks: Vec<usize> },
    Gather { input: Var, indices: Vec<usize>, row_len: usize },
    SqDist(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are stored in creation order, which is a topological order, so
/// [`Tape::backward`] is a single reverse sweep.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires them.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; `None` if `v` does not reach the loss or does not
    /// require gradients.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled when `v` is not on a path to the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn ensure(cond: bool, op: &'static str, detail: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::shape(op, detail()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input treated as a constant by `backward`.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        ensure(self.shape(a) == self.shape(b), op, || {
            format!("{:?} vs {:?}", self.shape(a), self.shape(b))
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    fn row_broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (r, c) = self
            .value(a)
            .dims2()
            .ok_or_else(|| Error::shape(op, format!("lhs shape {:?}", self.shape(a))))?;
        ensure(self.shape(b) == [c], op, || {
            format!("row vector {:?} does not match {:?}", self.shape(b), self.shape(a))
        })?;
        Ok((r, c))
    }

    /// `a[i, j] + b[j]` for a matrix `a` and vector `b`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.row_broadcast("add_row", a, b)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let data = (0..r * c).map(|k| av[k] + bv[k % c]).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::AddRow(a, b), rg))
    }

    /// `a[i, j] * b[j]` for a matrix `a` and vector `b`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.row_broadcast("mul_row", a, b)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let data = (0..r * c).map(|k| av[k] * bv[k % c]).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::MulRow(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Elementwise square root; the gradient at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0).sqrt());
        let rg = self.rg(a);
        self.push(out, Op::Sqrt(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(out, Op::Square(a), rg)
    }

    /// Concatenation along `axis` (0 for vectors; 0 or 1 for matrices).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        ensure(!inputs.is_empty(), "concat", || "no inputs".into())?;
        let first = self.shape(inputs[0]).to_vec();
        let rank = first.len();
        ensure(rank == 1 || rank == 2, "concat", || format!("rank {rank}"))?;
        ensure(axis < rank, "concat", || format!("axis {axis} for rank {rank}"))?;
        for &v in inputs {
            let s = self.shape(v);
            ensure(
                s.len() == rank && (0..rank).all(|d| d == axis || s[d] == first[d]),
                "concat",
                || format!("{:?} vs {:?} along axis {axis}", s, first),
            )?;
        }
        let total: usize = inputs.iter().map(|&v| self.shape(v)[axis]).sum();
        let value = if axis == 0 {
            let data: Vec<f64> = inputs
                .iter()
                .flat_map(|&v| self.value(v).data().iter().copied())
                .collect();
            let mut shape = first.clone();
            shape[0] = total;
            Tensor::new(shape, data)?
        } else {
            let rows = first[0];
            let mut data = Vec::with_capacity(rows * total);
            for i in 0..rows {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row(i));
                }
            }
            Tensor::matrix(rows, total, data)?
        };
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape.to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        ensure(self.value(a).rank() == 2, "transpose", || {
            format!("shape {:?}", self.shape(a))
        })?;
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::ReduceSum(a), rg)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.reduce_sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum of a matrix over `axis`: axis 0 yields one value per column,
    /// axis 1 one value per row.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (r, c) = self
            .value(a)
            .dims2()
            .ok_or_else(|| Error::shape("sum_axis", format!("shape {:?}", self.shape(a))))?;
        ensure(axis < 2, "sum_axis", || format!("axis {axis}"))?;
        let v = self.value(a).data();
        let data: Vec<f64> = if axis == 0 {
            (0..c).map(|j| (0..r).map(|i| v[i * c + j]).sum()).collect()
        } else {
            (0..r).map(|i| v[i * c..(i + 1) * c].iter().sum()).collect()
        };
        let rg = self.rg(a);
        Ok(self.push(Tensor::vector(data), Op::SumAxis(a, axis), rg))
    }

    fn select_reduce(
        &mut self,
        op: &'static str,
        a: Var,
        axis: usize,
        better: impl Fn(f64, f64) -> bool,
    ) -> Result<(Var, Vec<usize>)> {
        let (r, c) = self
            .value(a)
            .dims2()
            .ok_or_else(|| Error::shape(op, format!("shape {:?}", self.shape(a))))?;
        ensure(axis < 2 && r > 0 && c > 0, op, || {
            format!("axis {axis} on shape {:?}", self.shape(a))
        })?;
        let v = self.value(a).data();
        let (outer, inner) = if axis == 1 { (r, c) } else { (c, r) };
        let flat = |o: usize, k: usize| if axis == 1 { o * c + k } else { k * c + o };
        let mut values = Vec::with_capacity(outer);
        let mut indices = Vec::with_capacity(outer);
        let mut picks = Vec::with_capacity(outer);
        for o in 0..outer {
            let mut best_k = 0;
            let mut best = v[flat(o, 0)];
            for k in 1..inner {
                let x = v[flat(o, k)];
                if better(x, best) {
                    best = x;
                    best_k = k;
                }
            }
            values.push(best);
            indices.push(best_k);
            picks.push(flat(o, best_k));
        }
        let rg = self.rg(a);
        let out = self.push(Tensor::vector(values), Op::Select { input: a, picks }, rg);
        Ok((out, indices))
    }

    /// Minimum of a matrix over `axis` with the argmin positions (lowest
    /// index on ties). Gradients flow to the selected entries only; the
    /// indices themselves are constants.
    pub fn reduce_min_with_index(&mut self, a: Var, axis: usize) -> Result<(Var, Vec<usize>)> {
        self.select_reduce("reduce_min_with_index", a, axis, |x, best| x < best)
    }

    /// Maximum over `axis`, analogous to [`Tape::reduce_min_with_index`].
    pub fn reduce_max_with_index(&mut self, a: Var, axis: usize) -> Result<(Var, Vec<usize>)> {
        self.select_reduce("reduce_max_with_index", a, axis, |x, best| x > best)
    }

    /// Rows of a matrix (or elements of a vector) at `indices`, in order.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (rows, row_len) = match shape.as_slice() {
            &[n] => (n, 1),
            &[r, c] => (r, c),
            _ => return Err(Error::shape("gather", format!("shape {shape:?}"))),
        };
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("gather", format!("index {bad} >= {rows}")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(indices.len() * row_len);
        for &i in indices {
            data.extend_from_slice(&src[i * row_len..(i + 1) * row_len]);
        }
        let out_shape = if shape.len() == 1 {
            vec![indices.len()]
        } else {
            vec![indices.len(), row_len]
        };
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Gather {
                input: a,
                indices: indices.to_vec(),
                row_len,
            },
            rg,
        ))
    }

    /// Pairwise squared Euclidean distances between the rows of `a` (n × d)
    /// and the rows of `b` (m × d), as an n × m matrix.
    pub fn sqdist_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self
            .value(a)
            .dims2()
            .ok_or_else(|| Error::shape("sqdist_matrix", format!("lhs {:?}", self.shape(a))))?;
        let (m, d2) = self
            .value(b)
            .dims2()
            .ok_or_else(|| Error::shape("sqdist_matrix", format!("rhs {:?}", self.shape(b))))?;
        ensure(d == d2, "sqdist_matrix", || format!("dims {d} vs {d2}"))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            let ai = &av[i * d..(i + 1) * d];
            for j in 0..m {
                let bj = &bv[j * d..(j + 1) * d];
                data[i * m + j] = ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum();
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(n, m, data)?, Op::SqDist(a, b), rg))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.rg(loss) {
            grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        // Only differentiable leaves and intermediates keep gradients.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let ga = g.matmul(&self.value(*b).transpose())?;
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = self.value(*a).transpose().matmul(g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g.zip_map(bv, |x, y| x * y));
                self.accumulate(grads, *b, g.zip_map(av, |x, y| x * y));
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    let c = self.shape(*b)[0];
                    let mut gb = vec![0.0; c];
                    for (k, &x) in g.data().iter().enumerate() {
                        gb[k % c] += x;
                    }
                    self.accumulate(grads, *b, Tensor::vector(gb));
                }
            }
            Op::MulRow(a, b) => {
                let c = self.shape(*b)[0];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let ga: Vec<f64> = g.data().iter().enumerate().map(|(k, &x)| x * bv[k % c]).collect();
                    self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), ga)?);
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; c];
                    for (k, &x) in g.data().iter().enumerate() {
                        gb[k % c] += x * av[k];
                    }
                    self.accumulate(grads, *b, Tensor::vector(gb));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(av, |x, y| if y > 0.0 { x } else { 0.0 }));
            }
            Op::Tanh(a) => self.accumulate(grads, *a, g.zip_map(out, |x, y| x * (1.0 - y * y))),
            Op::Sqrt(a) => {
                self.accumulate(grads, *a, g.zip_map(out, |x, y| if y > 0.0 { x / (2.0 * y) } else { 0.0 }))
            }
            Op::Square(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, g.zip_map(av, |x, y| 2.0 * x * y));
            }
            Op::Concat { inputs, axis } => {
                let mut offset = 0;
                for &v in inputs {
                    let shape = self.shape(v).to_vec();
                    let width = shape[*axis];
                    if self.rg(v) {
                        let part = if *axis == 0 {
                            let stride: usize = shape[1..].iter().product();
                            g.data()[offset * stride..(offset + width) * stride].to_vec()
                        } else {
                            let (rows, total) = g.dims2().expect("concat along axis 1 is rank 2");
                            (0..rows)
                                .flat_map(|i| g.data()[i * total + offset..i * total + offset + width].iter().copied())
                                .collect()
                        };
                        self.accumulate(grads, v, Tensor::new(shape, part)?);
                    }
                    offset += width;
                }
            }
            Op::Reshape(a) => {
                let ga = g.reshaped(self.shape(*a).to_vec())?;
                self.accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::ReduceSum(a) => {
                let x = g.item();
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), x));
            }
            Op::SumAxis(a, axis) => {
                let (r, c) = self.value(*a).dims2().expect("sum_axis input is rank 2");
                let gd = g.data();
                let data = (0..r * c)
                    .map(|k| if *axis == 0 { gd[k % c] } else { gd[k / c] })
                    .collect();
                self.accumulate(grads, *a, Tensor::matrix(r, c, data)?);
            }
            Op::Select { input, picks } => {
                let mut ga = Tensor::zeros(self.shape(*input));
                for (&p, &x) in picks.iter().zip(g.data()) {
                    ga.data_mut()[p] += x;
                }
                self.accumulate(grads, *input, ga);
            }
            Op::Gather {
                input,
                indices,
                row_len,
            } => {
                let mut ga = Tensor::zeros(self.shape(*input));
                let gd = g.data();
                for (k, &i) in indices.iter().enumerate() {
                    for t in 0..*row_len {
                        ga.data_mut()[i * row_len + t] += gd[k * row_len + t];
                    }
                }
                self.accumulate(grads, *input, ga);
            }
            Op::SqDist(a, b) => {
                let (n, d) = self.value(*a).dims2().expect("sqdist lhs is rank 2");
                let (m, _) = self.value(*b).dims2().expect("sqdist rhs is rank 2");
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let gd = g.data();
                let mut ga = vec![0.0; n * d];
                let mut gb = vec![0.0; m * d];
                for i in 0..n {
                    for j in 0..m {
                        let w = gd[i * m + j];
                        if w == 0.0 {
                            continue;
                        }
                        for t in 0..d {
                            let diff = 2.0 * w * (av[i * d + t] - bv[j * d + t]);
                            ga[i * d + t] += diff;
                            gb[j * d + t] -= diff;
                        }
                    }
                }
                if self.rg(*a) {
                    self.accumulate(grads, *a, Tensor::matrix(n, d, ga)?);
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, Tensor::matrix(m, d, gb)?);
                }
            }
        }
        Ok(())
    }
}

/// Gradient of a scalar function with respect to its input `z`, treating
/// everything else the closure touches as constants.
pub fn input_gradient<F>(z: &Tensor, f: F) -> Result<Tensor>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let zv = tape.leaf(z.clone());
    let out = f(&mut tape, zv)?;
    let grads = tape.backward(out)?;
    Ok(grads.wrt(zv))
}
