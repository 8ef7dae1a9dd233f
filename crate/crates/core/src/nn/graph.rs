//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! Every op appends a node whose value is computed eagerly; [`Graph::backward`]
//! walks the tape in reverse. Nodes only carry gradients when some leaf below them
//! was created with [`Graph::param`].

use std::f64::consts::PI;
use std::rc::Rc;

use nalgebra::{Matrix4, Vector3};

use super::tensor::{gemm, matmul, Tensor};
use crate::error::{Error, Result};
use crate::skeleton::{euler_rotation_derivatives, euler_to_rotation};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Sparse row mixing: output row `i` is `sum_j w * source[j]` over `(j, w)` in `rows[i]`.
pub type MixRows = Vec<Vec<(usize, f64)>>;

enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Option<Var> },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softplus(Var),
    Sigmoid(Var),
    Encode { x: Var, levels: usize },
    Concat(Vec<Var>),
    Columns { x: Var, start: usize },
    BroadcastRows(Var),
    Sum(Var),
    Mean(Var),
    ScaledSoftmax { x: Var, scale: f64 },
    NormalizeRows(Var),
    RotateEuler { angles: Var, v: Var },
    Skin { weights: Var, points: Var, transforms: Rc<Vec<Matrix4<f64>>>, translate: bool },
    Mix { source: Var, rows: Rc<MixRows> },
    Linearized(Vec<(Var, Vec<f64>)>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that required them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient as a tensor; zeros when `v` does not influence the loss.
    pub fn tensor(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn v3(s: &[f64], i: usize) -> Vector3<f64> {
    Vector3::new(s[3 * i], s[3 * i + 1], s[3 * i + 2])
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
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

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t.detached(),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            value: t.detached(),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.nodes[a.0].value.shape() != self.nodes[b.0].value.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.nodes[a.0].value.shape(),
                self.nodes[b.0].value.shape()
            )));
        }
        Ok(())
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = &self.nodes[a.0].value;
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect()).expect("same shape");
        self.push(value, op, &[a])
    }

    /// `x * w + b` with `x: n x in`, `w: in x out`, `b: 1 x out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, k) = self.dims(x);
        let (k2, m) = self.dims(w);
        if k != k2 {
            return Err(Error::ShapeMismatch(format!("affine: input has {k} columns, weight has {k2} rows")));
        }
        let mut out = match b {
            Some(b) => {
                let bias = self.nodes[b.0].value.data();
                if bias.len() != m {
                    return Err(Error::ShapeMismatch(format!("affine: bias of {} for {m} outputs", bias.len())));
                }
                let mut o = Vec::with_capacity(n * m);
                for _ in 0..n {
                    o.extend_from_slice(bias);
                }
                o
            }
            None => vec![0.0; n * m],
        };
        gemm(self.nodes[x.0].value.data(), false, self.nodes[w.0].value.data(), false, &mut out, n, k, m, 1.0);
        let value = Tensor::new(vec![n, m], out)?;
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(value, Op::Affine { x, w, b }, &parents))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        if k != k2 {
            return Err(Error::ShapeMismatch(format!("matmul: {n}x{k} by {k2}x{m}")));
        }
        let out = matmul(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), n, k, m);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), &[a, b]))
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64, what: &str) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y, "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, Op::Softplus(a), softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    /// Row-wise `[x, sin(2^l pi x), cos(2^l pi x) for l in 0..levels]`.
    pub fn encode(&mut self, x: Var, levels: usize) -> Var {
        let (n, d) = self.dims(x);
        let out_d = d * (1 + 2 * levels);
        let src = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(n * out_d);
        for r in 0..n {
            let row = &src[r * d..(r + 1) * d];
            out.extend_from_slice(row);
            for l in 0..levels {
                let f = (1u64 << l) as f64 * PI;
                out.extend(row.iter().map(|&v| (f * v).sin()));
                out.extend(row.iter().map(|&v| (f * v).cos()));
            }
        }
        let value = Tensor::new(vec![n, out_d], out).expect("encoding shape");
        self.push(value, Op::Encode { x, levels }, &[x])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.dims(parts[0]).0;
        if let Some(p) = parts.iter().find(|p| self.dims(**p).0 != n) {
            return Err(Error::ShapeMismatch(format!("concat: {} rows vs {n}", self.dims(*p).0)));
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.dims(*p).1).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[p.0].value.data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::new(vec![n, total], out)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), parts))
    }

    /// Columns `start..end` of a 2-D node.
    pub fn columns(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, d) = self.dims(x);
        if start >= end || end > d {
            return Err(Error::ShapeMismatch(format!("columns {start}..{end} of {d}")));
        }
        let src = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(n * (end - start));
        for r in 0..n {
            out.extend_from_slice(&src[r * d + start..r * d + end]);
        }
        let value = Tensor::new(vec![n, end - start], out)?;
        Ok(self.push(value, Op::Columns { x, start }, &[x]))
    }

    /// Repeats a single-row node `rows` times.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let (n, d) = self.dims(x);
        if n != 1 {
            return Err(Error::ShapeMismatch(format!("broadcast_rows expects one row, got {n}")));
        }
        let src = self.nodes[x.0].value.data().to_vec();
        let mut out = Vec::with_capacity(rows * d);
        for _ in 0..rows {
            out.extend_from_slice(&src);
        }
        Ok(self.push(Tensor::new(vec![rows, d], out)?, Op::BroadcastRows(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let s = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Row-wise `softmax(scale * x)`, stabilized by max subtraction.
    pub fn scaled_softmax(&mut self, x: Var, scale: f64) -> Var {
        let (n, d) = self.dims(x);
        let src = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            out.extend(scaled_softmax(&src[r * d..(r + 1) * d], scale));
        }
        let value = Tensor::new(vec![n, d], out).expect("softmax shape");
        self.push(value, Op::ScaledSoftmax { x, scale }, &[x])
    }

    /// Divides each row by its Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let (n, d) = self.dims(x);
        let src = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            let row = &src[r * d..(r + 1) * d];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            out.extend(row.iter().map(|v| v / norm));
        }
        let value = Tensor::new(vec![n, d], out).expect("normalize shape");
        self.push(value, Op::NormalizeRows(x), &[x])
    }

    /// Rotates each 3-vector row of `v` by the Euler angles in the same row of `angles`.
    pub fn rotate_euler(&mut self, angles: Var, v: Var) -> Result<Var> {
        self.same_shape(angles, v, "rotate_euler")?;
        let (n, d) = self.dims(v);
        if d != 3 {
            return Err(Error::ShapeMismatch(format!("rotate_euler needs 3 columns, got {d}")));
        }
        let (a, x) = (self.nodes[angles.0].value.data(), self.nodes[v.0].value.data());
        let mut out = Vec::with_capacity(n * 3);
        for i in 0..n {
            out.extend((euler_to_rotation(&v3(a, i)) * v3(x, i)).iter());
        }
        let value = Tensor::new(vec![n, 3], out)?;
        Ok(self.push(value, Op::RotateEuler { angles, v }, &[angles, v]))
    }

    /// Linear blend skinning: row `i` becomes `sum_b w[i,b] * (L_b p_i + t_b)`;
    /// with `translate == false` the translation `t_b` is dropped (direction vectors).
    pub fn skin(&mut self, weights: Var, points: Var, transforms: Rc<Vec<Matrix4<f64>>>, translate: bool) -> Result<Var> {
        let (n, nb) = self.dims(weights);
        let (n2, d) = self.dims(points);
        if n != n2 || d != 3 || nb != transforms.len() {
            return Err(Error::ShapeMismatch(format!(
                "skin: weights {n}x{nb}, points {n2}x{d}, {} transforms",
                transforms.len()
            )));
        }
        let (w, p) = (self.nodes[weights.0].value.data(), self.nodes[points.0].value.data());
        let mut out = Vec::with_capacity(n * 3);
        for i in 0..n {
            let m = blend(&w[i * nb..(i + 1) * nb], &transforms);
            let mut y = m.fixed_view::<3, 3>(0, 0) * v3(p, i);
            if translate {
                y += m.fixed_view::<3, 1>(0, 3);
            }
            out.extend(y.iter());
        }
        let value = Tensor::new(vec![n, 3], out)?;
        Ok(self.push(
            value,
            Op::Skin {
                weights,
                points,
                transforms,
                translate,
            },
            &[weights, points],
        ))
    }

    /// Sparse weighted row mixing of `source` (gather with weights).
    pub fn mix_rows(&mut self, source: Var, rows: Rc<MixRows>) -> Result<Var> {
        let (m, d) = self.dims(source);
        let src = self.nodes[source.0].value.data();
        let mut out = vec![0.0; rows.len() * d];
        for (i, row) in rows.iter().enumerate() {
            for &(j, w) in row {
                if j >= m {
                    return Err(Error::ShapeMismatch(format!("mix_rows: source row {j} of {m}")));
                }
                for c in 0..d {
                    out[i * d + c] += w * src[j * d + c];
                }
            }
        }
        let value = Tensor::new(vec![rows.len(), d], out)?;
        Ok(self.push(value, Op::Mix { source, rows }, &[source]))
    }

    /// Scalar node with externally computed value and gradients w.r.t. the given inputs.
    pub fn linearized(&mut self, value: f64, inputs: Vec<(Var, Vec<f64>)>) -> Result<Var> {
        for (v, g) in &inputs {
            if g.len() != self.nodes[v.0].value.numel() {
                return Err(Error::ShapeMismatch(format!(
                    "linearized: gradient of {} values for node of {}",
                    g.len(),
                    self.nodes[v.0].value.numel()
                )));
            }
        }
        let parents: Vec<Var> = inputs.iter().map(|(v, _)| *v).collect();
        Ok(self.push(Tensor::scalar(value), Op::Linearized(inputs), &parents))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = &self.nodes[loss.0].value;
        if lt.numel() != 1 {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (n, k) = self.dims(*x);
                let m = self.dims(*w).1;
                if needs(*x) {
                    let mut dx = vec![0.0; n * k];
                    gemm(gy, false, val(*w), true, &mut dx, n, m, k, 0.0);
                    add_into(&mut grads[x.0], &dx);
                }
                if needs(*w) {
                    let mut dw = vec![0.0; k * m];
                    gemm(val(*x), true, gy, false, &mut dw, k, n, m, 0.0);
                    add_into(&mut grads[w.0], &dw);
                }
                if let Some(b) = b.filter(|b| needs(*b)) {
                    let mut db = vec![0.0; m];
                    for r in 0..n {
                        db.iter_mut().zip(&gy[r * m..(r + 1) * m]).for_each(|(a, g)| *a += g);
                    }
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::MatMul(a, b) => {
                let (n, k) = self.dims(*a);
                let m = self.dims(*b).1;
                if needs(*a) {
                    let mut da = vec![0.0; n * k];
                    gemm(gy, false, val(*b), true, &mut da, n, m, k, 0.0);
                    add_into(&mut grads[a.0], &da);
                }
                if needs(*b) {
                    let mut db = vec![0.0; k * m];
                    gemm(val(*a), true, gy, false, &mut db, k, n, m, 0.0);
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    add_into(&mut grads[a.0], gy);
                }
                if needs(*b) {
                    add_into(&mut grads[b.0], gy);
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    add_into(&mut grads[a.0], gy);
                }
                if needs(*b) {
                    let neg: Vec<f64> = gy.iter().map(|g| -g).collect();
                    add_into(&mut grads[b.0], &neg);
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let d: Vec<f64> = gy.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                    add_into(&mut grads[a.0], &d);
                }
                if needs(*b) {
                    let d: Vec<f64> = gy.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                    add_into(&mut grads[b.0], &d);
                }
            }
            Op::Scale(a, s) => {
                let d: Vec<f64> = gy.iter().map(|g| g * s).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Softplus(a) => {
                let d: Vec<f64> = gy.iter().zip(val(*a)).map(|(g, &x)| g * sigmoid(x)).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Sigmoid(a) => {
                let d: Vec<f64> = gy
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, &y)| g * y * (1.0 - y))
                    .collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Encode { x, levels } => {
                let (n, d) = self.dims(*x);
                let od = d * (1 + 2 * levels);
                let src = val(*x);
                let mut dx = vec![0.0; n * d];
                for r in 0..n {
                    let g = &gy[r * od..(r + 1) * od];
                    for c in 0..d {
                        let v = src[r * d + c];
                        let mut acc = g[c];
                        for l in 0..*levels {
                            let f = (1u64 << l) as f64 * PI;
                            let base = d + 2 * d * l;
                            acc += g[base + c] * f * (f * v).cos();
                            acc -= g[base + d + c] * f * (f * v).sin();
                        }
                        dx[r * d + c] = acc;
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::Concat(parts) => {
                let n = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.dims(*p).1;
                    if needs(*p) {
                        let mut d = Vec::with_capacity(n * w);
                        for r in 0..n {
                            d.extend_from_slice(&gy[r * total + offset..r * total + offset + w]);
                        }
                        add_into(&mut grads[p.0], &d);
                    }
                    offset += w;
                }
            }
            Op::Columns { x, start } => {
                let (n, d) = self.dims(*x);
                let w = node.value.cols();
                let mut dx = vec![0.0; n * d];
                for r in 0..n {
                    dx[r * d + start..r * d + start + w].copy_from_slice(&gy[r * w..(r + 1) * w]);
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::BroadcastRows(x) => {
                let d = self.dims(*x).1;
                let mut dx = vec![0.0; d];
                for row in gy.chunks(d) {
                    dx.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::Sum(x) => {
                let d = vec![gy[0]; self.nodes[x.0].value.numel()];
                add_into(&mut grads[x.0], &d);
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                let d = vec![gy[0] / n as f64; n];
                add_into(&mut grads[x.0], &d);
            }
            Op::ScaledSoftmax { x, scale } => {
                let (n, d) = self.dims(*x);
                let y = node.value.data();
                let mut dx = vec![0.0; n * d];
                for r in 0..n {
                    let (yr, gr) = (&y[r * d..(r + 1) * d], &gy[r * d..(r + 1) * d]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..d {
                        dx[r * d + c] = scale * yr[c] * (gr[c] - dot);
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::NormalizeRows(x) => {
                let (n, d) = self.dims(*x);
                let (src, y) = (val(*x), node.value.data());
                let mut dx = vec![0.0; n * d];
                for r in 0..n {
                    let norm = src[r * d..(r + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt();
                    let (yr, gr) = (&y[r * d..(r + 1) * d], &gy[r * d..(r + 1) * d]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..d {
                        dx[r * d + c] = (gr[c] - yr[c] * dot) / norm;
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::RotateEuler { angles, v } => {
                let n = self.dims(*v).0;
                let (a, x) = (val(*angles), val(*v));
                if needs(*angles) {
                    let mut da = vec![0.0; n * 3];
                    for i in 0..n {
                        let g = v3(gy, i);
                        let dr = euler_rotation_derivatives(&v3(a, i));
                        for k in 0..3 {
                            da[3 * i + k] = g.dot(&(dr[k] * v3(x, i)));
                        }
                    }
                    add_into(&mut grads[angles.0], &da);
                }
                if needs(*v) {
                    let mut dv = Vec::with_capacity(n * 3);
                    for i in 0..n {
                        dv.extend((euler_to_rotation(&v3(a, i)).transpose() * v3(gy, i)).iter());
                    }
                    add_into(&mut grads[v.0], &dv);
                }
            }
            Op::Skin {
                weights,
                points,
                transforms,
                translate,
            } => {
                let (n, nb) = self.dims(*weights);
                let (w, p) = (val(*weights), val(*points));
                if needs(*weights) {
                    let mut dw = vec![0.0; n * nb];
                    for i in 0..n {
                        let (g, pi) = (v3(gy, i), v3(p, i));
                        for (b, t) in transforms.iter().enumerate() {
                            let mut y = t.fixed_view::<3, 3>(0, 0) * pi;
                            if *translate {
                                y += t.fixed_view::<3, 1>(0, 3);
                            }
                            dw[i * nb + b] = g.dot(&y);
                        }
                    }
                    add_into(&mut grads[weights.0], &dw);
                }
                if needs(*points) {
                    let mut dp = Vec::with_capacity(n * 3);
                    for i in 0..n {
                        let m = blend(&w[i * nb..(i + 1) * nb], transforms);
                        dp.extend((m.fixed_view::<3, 3>(0, 0).transpose() * v3(gy, i)).iter());
                    }
                    add_into(&mut grads[points.0], &dp);
                }
            }
            Op::Mix { source, rows } => {
                let (m, d) = self.dims(*source);
                let mut ds = vec![0.0; m * d];
                for (i, row) in rows.iter().enumerate() {
                    for &(j, w) in row {
                        for c in 0..d {
                            ds[j * d + c] += w * gy[i * d + c];
                        }
                    }
                }
                add_into(&mut grads[source.0], &ds);
            }
            Op::Linearized(inputs) => {
                for (v, g) in inputs {
                    if needs(*v) {
                        let d: Vec<f64> = g.iter().map(|x| x * gy[0]).collect();
                        add_into(&mut grads[v.0], &d);
                    }
                }
            }
        }
    }
}

fn blend(row: &[f64], transforms: &[Matrix4<f64>]) -> Matrix4<f64> {
    crate::skeleton::blend_transform(row, transforms)
}

/// `softmax(scale * logits)` with max subtraction.
pub fn scaled_softmax(logits: &[f64], scale: f64) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(scale * v));
    let e: Vec<f64> = logits.iter().map(|&v| (scale * v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Positional encoding of one point: `[x, sin(2^l pi x), cos(2^l pi x) for l in 0..levels]`.
pub fn positional_encoding(x: &[f64; 3], levels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 + 6 * levels);
    out.extend_from_slice(x);
    for l in 0..levels {
        let f = (1u64 << l) as f64 * PI;
        out.extend(x.iter().map(|&v| (f * v).sin()));
        out.extend(x.iter().map(|&v| (f * v).cos()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::euler_to_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    /// Checks every input's gradient of `sum(f(inputs) * probe)` against central differences.
    fn check<F>(inputs: Vec<Tensor>, f: F, tol: f64)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let eval = |ins: &[Tensor], probe: Option<&Tensor>| -> (f64, Option<Gradients>, Vec<Var>, Tensor) {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.param(t)).collect();
            let out = f(&mut g, &vars);
            let out_t = g.value(out).clone();
            let probe = probe.cloned().unwrap_or_else(|| Tensor::full(out_t.shape(), 1.0));
            let pv = g.input(probe);
            let prod = g.mul(out, pv).unwrap();
            let loss = g.sum(prod);
            let val = g.value(loss).item();
            let grads = g.backward(loss).unwrap();
            (val, Some(grads), vars, out_t)
        };
        let (_, _, _, out_shape) = eval(&inputs, None);
        let probe = rand_tensor(&mut rng, out_shape.shape(), -1.0, 1.0);
        let (_, grads, vars, _) = eval(&inputs, Some(&probe));
        let grads = grads.unwrap();
        let h = 1e-6;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = grads.tensor(vars[k]);
            let mut fd = vec![0.0; t.numel()];
            for j in 0..t.numel() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[j] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[j] -= h;
                fd[j] = (eval(&plus, Some(&probe)).0 - eval(&minus, Some(&probe)).0) / (2.0 * h);
            }
            let num: f64 = fd.iter().zip(analytic.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den = fd.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            assert!(num / den < tol, "input {k}: relative error {}", num / den);
        }
    }

    #[test]
    fn grad_affine_and_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[5, 4], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[1, 3], -1.0, 1.0);
        check(vec![x.clone(), w.clone(), b], |g, v| g.affine(v[0], v[1], Some(v[2])).unwrap(), 1e-6);
        check(vec![x, w], |g, v| g.matmul(v[0], v[1]).unwrap(), 1e-6);
    }

    #[test]
    fn grad_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_tensor(&mut rng, &[4, 3], -3.0, 3.0);
        let b = rand_tensor(&mut rng, &[4, 3], -3.0, 3.0);
        check(vec![a.clone()], |g, v| g.softplus(v[0]), 1e-6);
        check(vec![a.clone()], |g, v| g.sigmoid(v[0]), 1e-6);
        check(vec![a.clone()], |g, v| g.scale(v[0], -2.5), 1e-6);
        check(vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]).unwrap(), 1e-6);
        check(vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]).unwrap(), 1e-6);
        check(vec![a.clone(), b], |g, v| g.mul(v[0], v[1]).unwrap(), 1e-6);
        check(vec![a.clone()], |g, v| g.mean(v[0]), 1e-6);
        check(vec![a], |g, v| g.sum(v[0]), 1e-6);
    }

    #[test]
    fn grad_encoding_concat_columns_broadcast() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
        let y = rand_tensor(&mut rng, &[4, 2], -1.0, 1.0);
        let row = rand_tensor(&mut rng, &[1, 2], -1.0, 1.0);
        check(vec![x.clone()], |g, v| g.encode(v[0], 4), 1e-6);
        check(vec![x.clone(), y], |g, v| g.concat(&[v[0], v[1]]).unwrap(), 1e-6);
        check(vec![x.clone()], |g, v| g.columns(v[0], 1, 3).unwrap(), 1e-6);
        check(vec![row], |g, v| g.broadcast_rows(v[0], 5).unwrap(), 1e-6);
    }

    #[test]
    fn grad_softmax_normalize_rotate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = rand_tensor(&mut rng, &[3, 6], -0.2, 0.2);
        check(vec![logits], |g, v| g.scaled_softmax(v[0], 20.0), 1e-6);
        let x = rand_tensor(&mut rng, &[5, 3], 0.5, 1.5);
        check(vec![x.clone()], |g, v| g.normalize_rows(v[0]), 1e-6);
        let angles = rand_tensor(&mut rng, &[5, 3], -2.0, 2.0);
        check(vec![angles, x], |g, v| g.rotate_euler(v[0], v[1]).unwrap(), 1e-6);
    }

    #[test]
    fn grad_skin_and_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let transforms: Vec<Matrix4<f64>> = (0..4)
            .map(|_| {
                let r = euler_to_rotation(&Vector3::new(rng.gen(), rng.gen(), rng.gen()));
                let mut m = Matrix4::identity();
                m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
                m.fixed_view_mut::<3, 1>(0, 3).copy_from(&Vector3::new(rng.gen(), rng.gen(), rng.gen()));
                m
            })
            .collect();
        let transforms = Rc::new(transforms);
        let w = rand_tensor(&mut rng, &[6, 4], 0.0, 1.0);
        let p = rand_tensor(&mut rng, &[6, 3], -1.0, 1.0);
        for translate in [true, false] {
            let t = transforms.clone();
            check(vec![w.clone(), p.clone()], move |g, v| g.skin(v[0], v[1], t.clone(), translate).unwrap(), 1e-6);
        }
        let src = rand_tensor(&mut rng, &[5, 4], -1.0, 1.0);
        let rows = Rc::new(vec![vec![(0, 0.5), (3, 0.5)], vec![(4, 1.0)], vec![(1, 0.2), (2, 0.3), (0, 0.5)]]);
        check(vec![src], move |g, v| g.mix_rows(v[0], rows.clone()).unwrap(), 1e-6);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        let mut g = Graph::new();
        let w = g.param(&Tensor::from_rows(&[[0.3, -0.2, 0.9]]).unwrap());
        let x = g.input(Tensor::from_rows(&[[1.0, 2.0, 3.0]]).unwrap());
        let unused = g.param(&Tensor::full(&[2, 2], 1.0));
        let wx = g.mul(w, x).unwrap();
        let loss = g.sum(wx);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.tensor(w).data(), &[1.0, 2.0, 3.0]);
        assert_eq!(grads.tensor(unused).data(), &[0.0; 4]);
        assert!(grads.get(unused).is_none());
    }

    #[test]
    fn linearized_node_scales_supplied_gradient() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
        let l = g.linearized(7.0, vec![(x, vec![0.5, -1.0])]).unwrap();
        let l3 = g.scale(l, 3.0);
        let grads = g.backward(l3).unwrap();
        assert_eq!(grads.tensor(x).data(), &[1.5, -3.0]);
    }

    #[test]
    fn softmax_closed_forms() {
        let u = scaled_softmax(&[0.3; 5], 20.0);
        assert!(u.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let p = scaled_softmax(&[1.0, 0.0], 20.0);
        assert!((p[0] - 1.0 / (1.0 + (-20f64).exp())).abs() < 1e-15);
        let big = scaled_softmax(&[1000.0, 999.0], 20.0);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn encoding_closed_forms() {
        let e = positional_encoding(&[0.0; 3], 4);
        assert_eq!(e.len(), 27);
        for l in 0..4 {
            assert!(e[3 + 6 * l..6 + 6 * l].iter().all(|&v| v == 0.0));
            assert!(e[6 + 6 * l..9 + 6 * l].iter().all(|&v| v == 1.0));
        }
        assert_eq!(positional_encoding(&[0.1, 0.2, 0.3], 0), vec![0.1, 0.2, 0.3]);
        let e = positional_encoding(&[0.5, 0.0, 0.0], 1);
        assert!((e[3] - 1.0).abs() < 1e-15);
        let mut g = Graph::new();
        let x = g.input(Tensor::from_rows(&[[0.1, -0.7, 0.4]]).unwrap());
        let enc = g.encode(x, 4);
        assert_eq!(g.value(enc).data(), positional_encoding(&[0.1, -0.7, 0.4], 4).as_slice());
    }
}
