//! Dense f64 tensors with reverse-mode gradient accumulation.
//!
//! Every operation records its inputs and a backward closure on the result
//! node. Calling [`Tensor::backward`] on a scalar walks the graph in reverse
//! topological order and accumulates `d loss / d leaf` into each
//! gradient-tracked leaf. Intermediate nodes never store gradients.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::error::{CtcnError, Result};

type BackFn = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>>>;

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Accumulated gradient; only ever populated on gradient-tracked leaves.
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    back: Option<BackFn>,
}

/// A dense row-major tensor. Cloning is cheap (shared handle).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .finish_non_exhaustive()
    }
}

/// A named trainable tensor.
#[derive(Clone)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Ok(Parameter {
            name: name.into(),
            tensor: Tensor::leaf_with_grad(shape, data)?,
        })
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&e| e == 0) {
        return Err(CtcnError::InvalidShape(format!(
            "zero extent in shape {shape:?}"
        )));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(CtcnError::InvalidShape(format!(
            "shape {shape:?} implies {n} elements, got {len}"
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn leaf(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        check_shape(&shape, data.len())?;
        Ok(Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                data,
                grad: None,
                requires_grad: false,
                parents: vec![],
                back: None,
            })),
        })
    }

    pub fn leaf_with_grad(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::leaf(shape, data)?;
        t.inner.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::leaf(vec![1], vec![v]).unwrap()
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::leaf(shape, vec![0.0; n]).unwrap()
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        back: BackFn,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if !requires_grad {
            // Constant subgraph: no need to keep history.
            return Tensor::leaf(shape, data).unwrap();
        }
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                data,
                grad: None,
                requires_grad,
                parents,
                back: Some(back),
            })),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn data(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Read the data without cloning.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.borrow().data)
    }

    /// Value of a single-element tensor.
    pub fn value(&self) -> f64 {
        let b = self.inner.borrow();
        assert_eq!(b.data.len(), 1, "value() on non-scalar");
        b.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrite the stored values (optimizer update). Length must match.
    pub fn set_data(&self, data: Vec<f64>) -> Result<()> {
        let mut b = self.inner.borrow_mut();
        if data.len() != b.data.len() {
            return Err(CtcnError::InvalidShape(format!(
                "set_data length {} != {}",
                data.len(),
                b.data.len()
            )));
        }
        b.data = data;
        Ok(())
    }

    fn ptr(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    // ---- elementwise ----

    fn binary(&self, other: &Tensor, kind: BinaryKind) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        let (na, nb) = (self.numel(), other.numel());
        // Exact match or single-element broadcast only.
        if sa != sb && na != 1 && nb != 1 {
            return Err(CtcnError::ShapeMismatch(sa, sb));
        }
        let n = na.max(nb);
        let shape = if na >= nb { sa } else { sb };
        let a = self.data();
        let b = other.data();
        let idx_a = move |i: usize| if na == 1 { 0 } else { i };
        let idx_b = move |i: usize| if nb == 1 { 0 } else { i };
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let (x, y) = (a[idx_a(i)], b[idx_b(i)]);
            *o = match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
            };
        }
        let (ac, bc) = (a, b);
        let back = move |g: &[f64]| {
            let mut ga = vec![0.0; na];
            let mut gb = vec![0.0; nb];
            for (i, &gi) in g.iter().enumerate() {
                match kind {
                    BinaryKind::Add => {
                        ga[idx_a(i)] += gi;
                        gb[idx_b(i)] += gi;
                    }
                    BinaryKind::Sub => {
                        ga[idx_a(i)] += gi;
                        gb[idx_b(i)] -= gi;
                    }
                    BinaryKind::Mul => {
                        ga[idx_a(i)] += gi * bc[idx_b(i)];
                        gb[idx_b(i)] += gi * ac[idx_a(i)];
                    }
                }
            }
            vec![ga, gb]
        };
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(back),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        self.add(&Tensor::scalar(s)).unwrap()
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor {
        self.mul(&Tensor::scalar(s)).unwrap()
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn relu(&self) -> Tensor {
        let x = self.data();
        let out: Vec<f64> = x.iter().map(|&v| v.max(0.0)).collect();
        let back = move |g: &[f64]| {
            vec![g
                .iter()
                .zip(&x)
                .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                .collect()]
        };
        Tensor::from_op(self.shape(), out, vec![self.clone()], Box::new(back))
    }

    pub fn exp(&self) -> Tensor {
        let out: Vec<f64> = self.with_data(|d| d.iter().map(|&v| v.exp()).collect());
        let outc = out.clone();
        let back = move |g: &[f64]| vec![g.iter().zip(&outc).map(|(&gi, &oi)| gi * oi).collect()];
        Tensor::from_op(self.shape(), out, vec![self.clone()], Box::new(back))
    }

    pub fn log(&self) -> Tensor {
        let x = self.data();
        let out: Vec<f64> = x.iter().map(|&v| v.ln()).collect();
        let back = move |g: &[f64]| vec![g.iter().zip(&x).map(|(&gi, &xi)| gi / xi).collect()];
        Tensor::from_op(self.shape(), out, vec![self.clone()], Box::new(back))
    }

    /// smooth_L1(x) = 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise, elementwise.
    pub fn smooth_l1(&self) -> Tensor {
        let x = self.data();
        let out: Vec<f64> = x
            .iter()
            .map(|&v| {
                if v.abs() < 1.0 {
                    0.5 * v * v
                } else {
                    v.abs() - 0.5
                }
            })
            .collect();
        let back = move |g: &[f64]| {
            vec![g
                .iter()
                .zip(&x)
                .map(|(&gi, &xi)| gi * xi.clamp(-1.0, 1.0))
                .collect()]
        };
        Tensor::from_op(self.shape(), out, vec![self.clone()], Box::new(back))
    }

    // ---- structural ----

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        check_shape(&shape, self.numel())?;
        let back = |g: &[f64]| vec![g.to_vec()];
        Ok(Tensor::from_op(
            shape,
            self.data(),
            vec![self.clone()],
            Box::new(back),
        ))
    }

    /// Pick elements by flat index into an output of the given shape.
    pub fn gather(&self, indices: &[usize], out_shape: Vec<usize>) -> Result<Tensor> {
        check_shape(&out_shape, indices.len())?;
        let n = self.numel();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(CtcnError::InvalidArgument(format!(
                "gather index {bad} out of range for {n} elements"
            )));
        }
        let data = self.data();
        let out: Vec<f64> = indices.iter().map(|&i| data[i]).collect();
        let idx = indices.to_vec();
        let back = move |g: &[f64]| {
            let mut gp = vec![0.0; n];
            for (&i, &gi) in idx.iter().zip(g) {
                gp[i] += gi;
            }
            vec![gp]
        };
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(back),
        ))
    }

    /// Concatenate along axis 0; trailing extents must agree.
    pub fn concat0(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(CtcnError::InvalidArgument("concat0 of zero tensors".into()));
        }
        let tail = parts[0].shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        let mut lens = Vec::new();
        for p in parts {
            let s = p.shape();
            if s[1..] != tail[..] {
                return Err(CtcnError::ShapeMismatch(parts[0].shape(), s));
            }
            rows += s[0];
            lens.push(p.numel());
            data.extend(p.data());
        }
        let mut shape = vec![rows];
        shape.extend(&tail);
        let back = move |g: &[f64]| {
            let mut out = Vec::with_capacity(lens.len());
            let mut off = 0;
            for &l in &lens {
                out.push(g[off..off + l].to_vec());
                off += l;
            }
            out
        };
        Ok(Tensor::from_op(shape, data, parts.to_vec(), Box::new(back)))
    }

    /// Rows `[from, to)` along axis 0.
    pub fn slice0(&self, from: usize, to: usize) -> Result<Tensor> {
        let shape = self.shape();
        if from >= to || to > shape[0] {
            return Err(CtcnError::InvalidArgument(format!(
                "slice0 {from}..{to} out of range for extent {}",
                shape[0]
            )));
        }
        let stride: usize = shape[1..].iter().product::<usize>().max(1);
        let n = self.numel();
        let data = self.with_data(|d| d[from * stride..to * stride].to_vec());
        let mut out_shape = vec![to - from];
        out_shape.extend(&shape[1..]);
        let back = move |g: &[f64]| {
            let mut gp = vec![0.0; n];
            gp[from * stride..to * stride].copy_from_slice(g);
            vec![gp]
        };
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(back),
        ))
    }

    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        let total: f64 = self.with_data(|d| d.iter().sum());
        let back = move |g: &[f64]| vec![vec![g[0]; n]];
        Tensor::from_op(vec![1], vec![total], vec![self.clone()], Box::new(back))
    }

    /// Nearest-neighbor x2 upsample along the last axis (each value duplicated).
    pub fn upsample2_last(&self) -> Tensor {
        let shape = self.shape();
        let t = *shape.last().unwrap();
        let rows = self.numel() / t;
        let data = self.data();
        let mut out = Vec::with_capacity(rows * 2 * t);
        for r in 0..rows {
            for j in 0..t {
                let v = data[r * t + j];
                out.push(v);
                out.push(v);
            }
        }
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = 2 * t;
        let back = move |g: &[f64]| {
            let mut gp = vec![0.0; rows * t];
            for r in 0..rows {
                for j in 0..t {
                    gp[r * t + j] = g[r * 2 * t + 2 * j] + g[r * 2 * t + 2 * j + 1];
                }
            }
            vec![gp]
        };
        Tensor::from_op(out_shape, out, vec![self.clone()], Box::new(back))
    }

    // ---- linear algebra ----

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let sa = self.shape();
        let sb = other.shape();
        if sa.len() != 2 || sb.len() != 2 {
            return Err(CtcnError::InvalidArgument(format!(
                "matmul requires rank-2 operands, got {sa:?} and {sb:?}"
            )));
        }
        if sa[1] != sb[0] {
            return Err(CtcnError::ShapeMismatch(sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let a = self.data();
        let b = other.data();
        let out = matmul_raw(&a, &b, m, k, n);
        let back = move |g: &[f64]| {
            // grad_a = g . b^T, grad_b = a^T . g
            let mut ga = vec![0.0; m * k];
            let mut gb = vec![0.0; k * n];
            for i in 0..m {
                for p in 0..k {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += g[i * n + j] * b[p * n + j];
                    }
                    ga[i * k + p] = s;
                }
            }
            for p in 0..k {
                for j in 0..n {
                    let mut s = 0.0;
                    for i in 0..m {
                        s += a[i * k + p] * g[i * n + j];
                    }
                    gb[p * n + j] = s;
                }
            }
            vec![ga, gb]
        };
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(back),
        ))
    }

    /// Add a per-row bias `b` (extent = rows) to a rank-2 tensor.
    pub fn add_bias_rows(&self, bias: &Tensor) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || bias.numel() != s[0] {
            return Err(CtcnError::ShapeMismatch(s, bias.shape()));
        }
        let (r, c) = (s[0], s[1]);
        let b = bias.data();
        let mut out = self.data();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += b[i];
            }
        }
        let back = move |g: &[f64]| {
            let gb: Vec<f64> = (0..r).map(|i| g[i * c..(i + 1) * c].iter().sum()).collect();
            vec![g.to_vec(), gb]
        };
        Ok(Tensor::from_op(
            s,
            out,
            vec![self.clone(), bias.clone()],
            Box::new(back),
        ))
    }

    /// Row-wise log-softmax of a rank-2 tensor (max-subtracted for stability).
    pub fn log_softmax_rows(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(CtcnError::InvalidArgument(format!(
                "log_softmax_rows requires rank 2, got {s:?}"
            )));
        }
        let (r, c) = (s[0], s[1]);
        let x = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln() + mx;
            for j in 0..c {
                out[i * c + j] = row[j] - lse;
            }
        }
        let outc = out.clone();
        let back = move |g: &[f64]| {
            let mut gp = vec![0.0; r * c];
            for i in 0..r {
                let gs: f64 = g[i * c..(i + 1) * c].iter().sum();
                for j in 0..c {
                    let p = outc[i * c + j].exp();
                    gp[i * c + j] = g[i * c + j] - p * gs;
                }
            }
            vec![gp]
        };
        Ok(Tensor::from_op(s, out, vec![self.clone()], Box::new(back)))
    }

    // ---- reverse pass ----

    /// Reverse-mode pass from a scalar loss. Gradients accumulate into every
    /// reachable gradient-tracked leaf; repeated calls without `zero_grad`
    /// keep accumulating.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(CtcnError::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        // Post-order DFS over the gradient-tracked subgraph.
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.ptr()) {
                continue;
            }
            stack.push((node.clone(), true));
            let parents = node.inner.borrow().parents.clone();
            for p in parents {
                if p.requires_grad() && !seen.contains(&p.ptr()) {
                    stack.push((p, false));
                }
            }
        }

        let mut grads: HashMap<usize, Vec<f64>> = HashMap::new();
        grads.insert(self.ptr(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.ptr()) else {
                continue;
            };
            let b = node.inner.borrow();
            match &b.back {
                Some(f) => {
                    let parent_grads = f(&g);
                    for (p, pg) in b.parents.iter().zip(parent_grads) {
                        if !p.requires_grad() {
                            continue;
                        }
                        let slot = grads
                            .entry(p.ptr())
                            .or_insert_with(|| vec![0.0; p.numel()]);
                        for (s, v) in slot.iter_mut().zip(pg) {
                            *s += v;
                        }
                    }
                }
                None => {
                    // Leaf: fold into the persistent gradient.
                    drop(b);
                    let mut bm = node.inner.borrow_mut();
                    let n = bm.data.len();
                    let slot = bm.grad.get_or_insert_with(|| vec![0.0; n]);
                    for (s, v) in slot.iter_mut().zip(g) {
                        *s += v;
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

/// Naive row-major matrix product, also used as a test oracle.
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

/// Compare analytic gradients of a scalar-valued function against central
/// finite differences at `point`. Returns the max over coordinates of
/// `|analytic - fd| / max(1, |analytic|)`.
pub fn finite_difference_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if step <= 0.0 {
        return Err(CtcnError::InvalidArgument("step must be positive".into()));
    }
    let shape = point.shape();
    let base = point.data();
    let leaf = Tensor::leaf_with_grad(shape.clone(), base.clone())?;
    let out = f(&leaf)?;
    if out.numel() != 1 {
        return Err(CtcnError::InvalidArgument(
            "finite_difference_check requires a scalar-valued function".into(),
        ));
    }
    out.backward()?;
    let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; base.len()]);

    let eval = |data: Vec<f64>| -> Result<f64> {
        let t = Tensor::leaf(shape.clone(), data)?;
        Ok(f(&t)?.value())
    };
    let mut max_err = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += step;
        let mut minus = base.clone();
        minus[i] -= step;
        let fp = eval(plus)?;
        let fm = eval(minus)?;
        let fd = (fp - fm) / (2.0 * step);
        if !fd.is_finite() || !analytic[i].is_finite() {
            return Err(CtcnError::NonFinite {
                coord: i,
                context: format!("analytic {} vs fd {}", analytic[i], fd),
            });
        }
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::leaf(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(t(&[3], &[-1.0, 0.0, 2.0]).relu().data(), vec![0.0, 0.0, 2.0]);
        assert_eq!(
            t(&[2], &[1.0, 2.0]).add(&t(&[2], &[3.0, 4.0])).unwrap().data(),
            vec![4.0, 6.0]
        );
        assert_eq!(t(&[1], &[0.0]).exp().data(), vec![1.0]);
    }

    #[test]
    fn elementwise_shape_mismatch_reports_both_shapes() {
        let err = t(&[2], &[1.0, 2.0]).add(&t(&[3], &[1.0, 2.0, 3.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn matmul_identity_and_small() {
        let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(id.matmul(&a).unwrap().data(), a.data());
        let r = t(&[1, 2], &[1.0, 0.0]).matmul(&t(&[2, 1], &[0.0, 1.0])).unwrap();
        assert_eq!(r.data(), vec![0.0]);
        assert!(t(&[3], &[0.0; 3]).matmul(&a).is_err());
        assert!(t(&[2, 3], &[0.0; 6]).matmul(&t(&[2, 2], &[0.0; 4])).is_err());
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = t(&[3, 4], &a).matmul(&t(&[4, 2], &b)).unwrap().data();
        assert_eq!(got, matmul_raw(&a, &b, 3, 4, 2));
    }

    #[test]
    fn backward_sum_and_squares() {
        let p = Tensor::leaf_with_grad(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        p.sum().backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![1.0, 1.0, 1.0]);

        let p = Tensor::leaf_with_grad(vec![2], vec![1.0, 2.0]).unwrap();
        p.mul(&p).unwrap().sum().backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let p = Tensor::leaf_with_grad(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(p.backward().is_err());
    }

    #[test]
    fn backward_accumulates_and_resets() {
        let p = Tensor::leaf_with_grad(vec![2], vec![1.0, 2.0]).unwrap();
        let run = || p.mul(&p).unwrap().sum().backward().unwrap();
        run();
        let first = p.grad().unwrap();
        run();
        let doubled: Vec<f64> = first.iter().map(|v| 2.0 * v).collect();
        assert_eq!(p.grad().unwrap(), doubled);
        p.zero_grad();
        run();
        assert_eq!(p.grad().unwrap(), first);
    }

    #[test]
    fn fd_check_linear_is_exact() {
        let point = t(&[4], &[0.3, -0.7, 1.1, 2.0]);
        let err = finite_difference_check(|x| Ok(x.sum()), &point, 1e-5).unwrap();
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn fd_check_sum_of_squares() {
        let point = t(&[3], &[1.0, 2.0, 3.0]);
        let err = finite_difference_check(|x| Ok(x.mul(x)?.sum()), &point, 1e-5).unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn fd_check_composed_graph_many_seeds() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..6).map(|_| rng.gen_range(0.5..2.0)).collect();
            let w: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let wt = t(&[2, 3], &w);
            let err = finite_difference_check(
                |x| {
                    let y = wt.matmul(&x.reshape(vec![3, 2])?)?;
                    Ok(y.exp().add(&y.relu())?.log().sum())
                },
                &t(&[6], &data),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: err = {err}");
        }
    }

    #[test]
    fn gather_concat_slice_roundtrip() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let g = x.gather(&[5, 0, 3], vec![3]).unwrap();
        assert_eq!(g.data(), vec![6.0, 1.0, 4.0]);
        let top = x.slice0(0, 1).unwrap();
        let bot = x.slice0(1, 2).unwrap();
        let back = Tensor::concat0(&[top, bot]).unwrap();
        assert_eq!(back.data(), x.data());
        assert_eq!(back.shape(), vec![2, 3]);
    }

    #[test]
    fn log_softmax_rows_sums_to_one() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, -5.0, 0.0, 5.0]);
        let lsm = x.log_softmax_rows().unwrap();
        for row in lsm.data().chunks(3) {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let err = finite_difference_check(
            |x| {
                Ok(x.log_softmax_rows()?
                    .gather(&[0, 5], vec![2])?
                    .sum()
                    .neg()
                    .sum())
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn upsample_duplicates_values() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = x.upsample2_last();
        assert_eq!(y.shape(), vec![1, 2, 4]);
        assert_eq!(y.data(), vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn determinism_same_inputs_bit_identical() {
        let run = || {
            let x = t(&[2, 2], &[0.1, -0.2, 0.3, 0.4]);
            x.exp().mul(&x.relu()).unwrap().sum().value()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
