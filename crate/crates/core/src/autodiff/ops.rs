//! Elementwise, reduction and linear-algebra primitives.

use super::{BackwardRule, Graph, SwitchState, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Tanh,
    Relu,
    Scale(f64),
}

impl ElementwiseKind {
    fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul)
    }
}

struct AddRule;
struct SubRule;
struct MulRule;
struct ScaleRule(f64);
struct TanhRule;
struct ReluRule {
    active: Vec<bool>,
}
struct SumRule;
struct PassThroughRule;
struct MatmulRule {
    m: usize,
    k: usize,
    n: usize,
}
struct TransposeRule {
    rows: usize,
    cols: usize,
}
struct StackRule {
    parts: usize,
}
struct SliceRule {
    outer: usize,
    axis_len: usize,
    inner: usize,
    start: usize,
    len: usize,
}
struct MaxAxisRule {
    argmax: Vec<usize>,
}
struct SoftmaxRule;
struct MeanRowsRule {
    rows: usize,
    cols: usize,
}

fn unary(grad: Vec<f64>) -> Vec<Option<Vec<f64>>> {
    vec![Some(grad)]
}

impl BackwardRule for AddRule {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec()), Some(g.to_vec())]
    }
}

impl BackwardRule for SubRule {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
    }
}

impl BackwardRule for MulRule {
    fn backward(&self, g: &[f64], ops: &[&Tensor], _: &Tensor, wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (ops[0].data(), ops[1].data());
        let ga = wanted[0].then(|| g.iter().zip(b).map(|(g, b)| g * b).collect());
        let gb = wanted[1].then(|| g.iter().zip(a).map(|(g, a)| g * a).collect());
        vec![ga, gb]
    }
}

impl BackwardRule for ScaleRule {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        unary(g.iter().map(|v| v * self.0).collect())
    }
}

impl BackwardRule for TanhRule {
    fn backward(&self, g: &[f64], _: &[&Tensor], out: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        unary(g.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect())
    }
}

impl BackwardRule for ReluRule {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        unary(
            g.iter()
                .zip(&self.active)
                .map(|(g, &on)| if on { *g } else { 0.0 })
                .collect(),
        )
    }

    fn record_switches(&self, state: &mut SwitchState) {
        state.mask(self.active.iter().copied());
    }
}

impl BackwardRule for SumRule {
    fn backward(&self, g: &[f64], ops: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        unary(vec![g[0]; ops[0].numel()])
    }
}

impl BackwardRule for PassThroughRule {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        unary(g.to_vec())
    }
}

impl BackwardRule for MatmulRule {
    fn backward(&self, g: &[f64], ops: &[&Tensor], _: &Tensor, wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let (a, b) = (ops[0].data(), ops[1].data());
        // dA = G Bᵀ
        let ga = wanted[0].then(|| {
            let mut ga = vec![0.0; m * k];
            for i in 0..m {
                for p in 0..k {
                    ga[i * k + p] = (0..n).map(|j| g[i * n + j] * b[p * n + j]).sum();
                }
            }
            ga
        });
        // dB = Aᵀ G
        let gb = wanted[1].then(|| {
            let mut gb = vec![0.0; k * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = a[i * k + p];
                    let row = &mut gb[p * n..(p + 1) * n];
                    row.iter_mut()
                        .zip(&g[i * n..(i + 1) * n])
                        .for_each(|(acc, g)| *acc += aip * g);
                }
            }
            gb
        });
        vec![ga, gb]
    }
}

impl BackwardRule for TransposeRule {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        unary(transpose(g, self.cols, self.rows))
    }
}

impl BackwardRule for StackRule {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, wanted: &[bool]) -> Vec<Option<Vec<f64>>> {
        let chunk = g.len() / self.parts;
        g.chunks(chunk)
            .zip(wanted)
            .map(|(c, &w)| w.then(|| c.to_vec()))
            .collect()
    }
}

impl BackwardRule for SliceRule {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; self.outer * self.axis_len * self.inner];
        let block = self.len * self.inner;
        for o in 0..self.outer {
            let dst = (o * self.axis_len + self.start) * self.inner;
            gx[dst..dst + block].copy_from_slice(&g[o * block..(o + 1) * block]);
        }
        unary(gx)
    }
}

impl BackwardRule for MaxAxisRule {
    fn backward(&self, g: &[f64], ops: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; ops[0].numel()];
        for (&src, g) in self.argmax.iter().zip(g) {
            gx[src] += g;
        }
        unary(gx)
    }

    fn record_switches(&self, state: &mut SwitchState) {
        state.indices(&self.argmax);
    }
}

impl BackwardRule for SoftmaxRule {
    fn backward(&self, g: &[f64], _: &[&Tensor], out: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let y = out.data();
        let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
        unary(g.iter().zip(y).map(|(g, y)| y * (g - dot)).collect())
    }
}

impl BackwardRule for MeanRowsRule {
    fn backward(&self, g: &[f64], _: &[&Tensor], _: &Tensor, _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let inv = 1.0 / self.rows as f64;
        let mut gx = Vec::with_capacity(self.rows * self.cols);
        for _ in 0..self.rows {
            gx.extend(g.iter().map(|v| v * inv));
        }
        unary(gx)
    }
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

fn matrix_dims(g: &Graph, v: Var, op: &'static str) -> Result<(usize, usize)> {
    match *g.shape(v) {
        [r, c] => Ok((r, c)),
        ref s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
    }
}

impl Graph {
    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("operands {:?} and {:?} differ", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("operand shapes already validated")
    }

    /// Dispatches one of the elementwise primitives; binary kinds require `b`.
    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind.is_binary(), b) {
            (true, None) => {
                return Err(Error::InvalidArgument(format!("{kind:?} needs two operands")))
            }
            (false, Some(_)) => {
                return Err(Error::InvalidArgument(format!("{kind:?} takes one operand")))
            }
            _ => {}
        }
        match (kind, b) {
            (ElementwiseKind::Add, Some(b)) => self.add(a, b),
            (ElementwiseKind::Sub, Some(b)) => self.sub(a, b),
            (ElementwiseKind::Mul, Some(b)) => self.mul(a, b),
            (ElementwiseKind::Tanh, None) => Ok(self.tanh(a)),
            (ElementwiseKind::Relu, None) => Ok(self.relu(a)),
            (ElementwiseKind::Scale(c), None) => Ok(self.scale(a, c)),
            _ => unreachable!("arity checked above"),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_map(a, b, |x, y| x + y);
        Ok(self.record(&[a, b], out, AddRule))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_map(a, b, |x, y| x - y);
        Ok(self.record(&[a, b], out, SubRule))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_map(a, b, |x, y| x * y);
        Ok(self.record(&[a, b], out, MulRule))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.record(&[a], out, ScaleRule(c))
    }

    /// `a + c` for a constant `c`; the gradient passes through unchanged.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v + c);
        self.record(&[a], out, PassThroughRule)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.record(&[a], out, TanhRule)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let active: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
        let out = x.map(|v| v.max(0.0));
        self.record(&[a], out, ReluRule { active })
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.record(&[a], out, SumRule)
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.record(&[a], out, PassThroughRule))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self, a, "matmul")?;
        let (k2, n) = matrix_dims(self, b, "matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner extents differ: [{m}, {k}] x [{k2}, {n}]"),
            ));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                row.iter_mut()
                    .zip(&bd[p * n..(p + 1) * n])
                    .for_each(|(acc, b)| *acc += aip * b);
            }
        }
        let out = Tensor::new([m, n], out)?;
        Ok(self.record(&[a, b], out, MatmulRule { m, k, n }))
    }

    /// Matrix `[r, c]` times vector `[c]`, giving `[r]`.
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let c = self.value(v).numel();
        let col = self.reshape(v, [c, 1])?;
        let prod = self.matmul(m, col)?;
        let r = self.shape(prod)[0];
        self.reshape(prod, [r])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = matrix_dims(self, a, "transpose")?;
        let out = Tensor::new([cols, rows], transpose(self.value(a).data(), rows, cols))?;
        Ok(self.record(&[a], out, TransposeRule { rows, cols }))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("stack", "nothing to stack"))?;
        let inner = self.shape(first).to_vec();
        let mut data = Vec::with_capacity(parts.len() * self.value(first).numel());
        for &p in parts {
            if self.shape(p) != inner.as_slice() {
                return Err(Error::shape(
                    "stack",
                    format!("part {:?} differs from {inner:?}", self.shape(p)),
                ));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        let out = Tensor::new(shape, data)?;
        Ok(self.record(parts, out, StackRule { parts: parts.len() }))
    }

    /// `len` consecutive entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let axis_len = shape[axis];
        let x = self.value(a).data();
        let block = len * inner;
        let mut data = Vec::with_capacity(outer * block);
        for o in 0..outer {
            let src = (o * axis_len + start) * inner;
            data.extend_from_slice(&x[src..src + block]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.record(
            &[a],
            out,
            SliceRule {
                outer,
                axis_len,
                inner,
                start,
                len,
            },
        ))
    }

    /// Maximum of a matrix along `axis` (0: per column, 1: per row). Ties go
    /// to the first index.
    pub fn max_along(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (rows, cols) = matrix_dims(self, a, "max_along")?;
        let x = self.value(a).data();
        let (count, len, at): (usize, usize, Box<dyn Fn(usize, usize) -> usize>) = match axis {
            0 => (cols, rows, Box::new(move |c, r| r * cols + c)),
            1 => (rows, cols, Box::new(move |r, c| r * cols + c)),
            _ => return Err(Error::shape("max_along", format!("axis {axis} of a matrix"))),
        };
        let mut argmax = Vec::with_capacity(count);
        for i in 0..count {
            let mut best = at(i, 0);
            for j in 1..len {
                let idx = at(i, j);
                if x[idx] > x[best] {
                    best = idx;
                }
            }
            argmax.push(best);
        }
        let out = Tensor::new([count], argmax.iter().map(|&i| x[i]).collect())?;
        Ok(self.record(&[a], out, MaxAxisRule { argmax }))
    }

    /// Softmax of a vector.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.ndim() != 1 {
            return Err(Error::shape("softmax", format!("expected a vector, got {:?}", x.shape())));
        }
        let out = Tensor::vector(softmax(x.data()))?;
        Ok(self.record(&[a], out, SoftmaxRule))
    }

    /// Mean over the rows of `[rows, cols]`, giving `[cols]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = matrix_dims(self, a, "mean_rows")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            out.iter_mut()
                .zip(&x[r * cols..(r + 1) * cols])
                .for_each(|(acc, v)| *acc += v);
        }
        let inv = 1.0 / rows as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let out = Tensor::vector(out)?;
        Ok(self.record(&[a], out, MeanRowsRule { rows, cols }))
    }
}

/// Numerically stable softmax.
pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph, shape: &[usize], data: &[f64]) -> Var {
        g.param(Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
    }

    #[test]
    fn add_componentwise() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2], &[1.0, 2.0]);
        let b = leaf(&mut g, &[2], &[3.0, 4.0]);
        let c = g.elementwise(ElementwiseKind::Add, a, Some(b)).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn tanh_at_origin() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[1], &[0.0]);
        let t = g.elementwise(ElementwiseKind::Tanh, a, None).unwrap();
        assert_eq!(g.value(t).data(), &[0.0]);
    }

    #[test]
    fn mul_gradient_is_other_factor() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[1], &[2.0]);
        let b = leaf(&mut g, &[1], &[5.0]);
        let out = g.mul(a, b).unwrap();
        let grads = g.backward(out).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[5.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[2.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2], &[1.0, 2.0]);
        let b = leaf(&mut g, &[3], &[1.0, 2.0, 3.0]);
        for kind in [ElementwiseKind::Add, ElementwiseKind::Sub, ElementwiseKind::Mul] {
            let err = g.elementwise(kind, a, Some(b)).unwrap_err();
            assert!(matches!(err, Error::Shape { .. }), "{err}");
        }
        assert!(g.elementwise(ElementwiseKind::Add, a, None).is_err());
        assert!(g.elementwise(ElementwiseKind::Tanh, a, Some(b)).is_err());
    }

    #[test]
    fn relu_and_scale() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[3], &[-1.0, 0.0, 2.0]);
        let r = g.relu(a);
        let s = g.scale(r, 3.0);
        assert_eq!(g.value(s).data(), &[0.0, 0.0, 6.0]);
        let loss = g.sum(s);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn matmul_values() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = leaf(&mut g, &[3, 1], &[1.0, 0.0, -1.0]);
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[-2.0, -2.0]);
        let bad = leaf(&mut g, &[2, 1], &[0.0, 0.0]);
        assert!(g.matmul(a, bad).is_err());
    }

    #[test]
    fn max_along_rows_and_columns() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2, 3], &[1.0, 5.0, 5.0, 7.0, 0.0, 2.0]);
        let rows = g.max_along(a, 1).unwrap();
        let cols = g.max_along(a, 0).unwrap();
        assert_eq!(g.value(rows).data(), &[5.0, 7.0]);
        assert_eq!(g.value(cols).data(), &[7.0, 5.0, 5.0]);
        let loss = g.sum(rows);
        let grads = g.backward(loss).unwrap();
        // tie between columns 1 and 2 of row 0: first index wins
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_normalizes() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[3], &[1000.0, 1000.0, 1000.0]);
        let s = g.softmax(a).unwrap();
        for &p in g.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn slice_and_stack() {
        let mut g = Graph::new();
        let a = leaf(&mut g, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = g.slice(a, 1, 1, 2).unwrap();
        assert_eq!(g.value(s).data(), &[2.0, 3.0, 5.0, 6.0]);
        assert!(g.slice(a, 1, 2, 2).is_err());
        let st = g.stack(&[s, s]).unwrap();
        assert_eq!(g.shape(st), &[2, 2, 2]);
        let m = g.mean_rows(a).unwrap();
        assert_eq!(g.value(m).data(), &[2.5, 3.5, 4.5]);
    }
}
