//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! Every node holds a row-major `Array2`. Operations are recorded in
//! execution order, so a single reverse sweep over the tape propagates
//! gradients. Parameters enter the tape by reference and their gradients are
//! collected by parameter index after [`Tape::backward`].
//!
//! The op set is exactly what the sequence transformer needs: dense matmuls,
//! broadcasting adds, row gathers, column/row slicing, layer norm, SiLU,
//! row softmax, rotary rotation and a squared-error reduction.

use std::borrow::Cow;
use std::rc::Rc;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::real::Real;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F> {
    Const,
    Param(usize),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    /// `a + b` with `b` a single row broadcast over the rows of `a`.
    AddRow(Var, Var),
    AddConst(Var),
    Scale(Var, F),
    AddScalar(Var),
    Silu(Var),
    /// Row-wise normalization; the output value doubles as the saved `x̂`.
    LayerNorm(Var, Vec<F>),
    SoftmaxRows(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    /// Pairwise rotation of adjacent columns by per-element angles.
    Rotary(Var, Rc<Array2<F>>, Rc<Array2<F>>),
    /// `Σ (a − target)²`, a 1×1 result.
    SqErrSum(Var, Rc<Array2<F>>),
}

struct Node<'p, F: Real> {
    value: Cow<'p, Array2<F>>,
    op: Op<F>,
}

/// Records a computation for one forward pass.
pub struct Tape<'p, F: Real> {
    nodes: Vec<Node<'p, F>>,
}

/// Gradients with respect to parameters, indexed by parameter slot.
pub struct ParamGrads<F> {
    pub grads: Vec<Option<Array2<F>>>,
}

impl<'p, F: Real> Default for Tape<'p, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<F>, op: Op<F>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Array2<F>) -> Var {
        self.push(value, Op::Const)
    }

    /// Registers parameter `slot` without copying its storage.
    pub fn param(&mut self, slot: usize, value: &'p Array2<F>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Param(slot),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    /// Adds a constant matrix (e.g. an attention mask); no gradient flows to it.
    pub fn add_const(&mut self, a: Var, c: &Array2<F>) -> Var {
        let out = self.value(a) + c;
        self.push(out, Op::AddConst(a))
    }

    pub fn scale(&mut self, a: Var, k: F) -> Var {
        let out = self.value(a) * k;
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: F) -> Var {
        let out = self.value(a) + k;
        self.push(out, Op::AddScalar(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    pub fn layer_norm(&mut self, a: Var, eps: F) -> Var {
        let x = self.value(a);
        let cols = F::of(x.ncols() as f64);
        let mut out = x.clone();
        let mut inv = Vec::with_capacity(x.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / cols;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<F>() / cols;
            let r = F::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * r);
            inv.push(r);
        }
        self.push(out, Op::LayerNorm(a, inv))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let src = self.value(a);
        let mut out = Array2::zeros((idx.len(), src.ncols()));
        for (mut dst, &i) in out.rows_mut().into_iter().zip(idx.iter()) {
            dst.assign(&src.row(i));
        }
        self.push(out, Op::GatherRows(a, idx))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<F>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("row concat shapes");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<F>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("col concat shapes");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Rotates column pairs `(2k, 2k+1)` of each row by angles whose cosines
    /// and sines are given per (row, pair).
    pub fn rotary(&mut self, a: Var, cos: Rc<Array2<F>>, sin: Rc<Array2<F>>) -> Var {
        let x = self.value(a);
        debug_assert_eq!(x.ncols(), 2 * cos.ncols());
        let mut out = Array2::zeros(x.raw_dim());
        rotate_pairs(x.view(), &cos, &sin, false, &mut out);
        self.push(out, Op::Rotary(a, cos, sin))
    }

    pub fn sq_err_sum(&mut self, a: Var, target: Rc<Array2<F>>) -> Var {
        let mut total = F::zero();
        Zip::from(self.value(a)).and(&*target).for_each(|&p, &t| {
            let d = p - t;
            total += d * d;
        });
        self.push(Array2::from_elem((1, 1), total), Op::SqErrSum(a, target))
    }

    /// Back-propagates from the scalar node `root`, returning gradients for
    /// the `n_params` parameter slots.
    pub fn backward(&self, root: Var, n_params: usize) -> ParamGrads<F> {
        assert_eq!(self.value(root).dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Array2<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::from_elem((1, 1), F::one()));
        let mut out: Vec<Option<Array2<F>>> = (0..n_params).map(|_| None).collect();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param(slot) => accumulate(&mut out[*slot], g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::MatMulNT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[row.0], gr);
                    accumulate(&mut grads[a.0], g);
                }
                Op::AddConst(a) | Op::AddScalar(a) => accumulate(&mut grads[a.0], g),
                Op::Scale(a, k) => accumulate(&mut grads[a.0], g * *k),
                Op::Silu(a) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(self.value(*a)).for_each(|gv, &x| {
                        let sg = sigmoid(x);
                        *gv *= sg * (F::one() + x * (F::one() - sg));
                    });
                    accumulate(&mut grads[a.0], gx);
                }
                Op::LayerNorm(a, inv) => {
                    let y = &node.value;
                    let cols = F::of(y.ncols() as f64);
                    let mut gx = g;
                    for ((mut grow, yrow), &r) in gx.rows_mut().into_iter().zip(y.rows()).zip(inv) {
                        let mean_g = grow.sum() / cols;
                        let mean_gy = grow.iter().zip(yrow.iter()).map(|(&a, &b)| a * b).sum::<F>() / cols;
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|gv, &yv| *gv = r * (*gv - mean_g - yv * mean_gy));
                    }
                    accumulate(&mut grads[a.0], gx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut gx = g;
                    for (mut grow, yrow) in gx.rows_mut().into_iter().zip(y.rows()) {
                        let dot = grow.iter().zip(yrow.iter()).map(|(&a, &b)| a * b).sum::<F>();
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|gv, &yv| *gv = yv * (*gv - dot));
                    }
                    accumulate(&mut grads[a.0], gx);
                }
                Op::GatherRows(a, idx) => {
                    let src = self.value(*a);
                    let mut gs = Array2::zeros(src.raw_dim());
                    for (grow, &r) in g.rows().into_iter().zip(idx.iter()) {
                        let mut dst = gs.row_mut(r);
                        dst += &grow;
                    }
                    accumulate(&mut grads[a.0], gs);
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let entry = grads[a.0].get_or_insert_with(|| Array2::zeros(src.raw_dim()));
                    let mut dst = entry.slice_mut(s![.., *start..*start + g.ncols()]);
                    dst += &g;
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let entry = grads[a.0].get_or_insert_with(|| Array2::zeros(src.raw_dim()));
                    let mut dst = entry.slice_mut(s![*start..*start + g.nrows(), ..]);
                    dst += &g;
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).nrows();
                        let piece = g.slice(s![offset..offset + n, ..]).to_owned();
                        accumulate(&mut grads[p.0], piece);
                        offset += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).ncols();
                        let piece = g.slice(s![.., offset..offset + n]).to_owned();
                        accumulate(&mut grads[p.0], piece);
                        offset += n;
                    }
                }
                Op::Rotary(a, cos, sin) => {
                    let mut gx = Array2::zeros(g.raw_dim());
                    rotate_pairs(g.view(), cos, sin, true, &mut gx);
                    accumulate(&mut grads[a.0], gx);
                }
                Op::SqErrSum(a, target) => {
                    let k = g[[0, 0]] * F::of(2.0);
                    let gx = Zip::from(self.value(*a))
                        .and(&**target)
                        .map_collect(|&p, &t| k * (p - t));
                    accumulate(&mut grads[a.0], gx);
                }
            }
        }
        ParamGrads { grads: out }
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn accumulate<F: Real>(slot: &mut Option<Array2<F>>, g: Array2<F>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn rotate_pairs<F: Real>(
    x: ArrayView2<F>,
    cos: &Array2<F>,
    sin: &Array2<F>,
    inverse: bool,
    out: &mut Array2<F>,
) {
    let pairs = cos.ncols();
    for r in 0..x.nrows() {
        for k in 0..pairs {
            let (c, mut s) = (cos[[r, k]], sin[[r, k]]);
            if inverse {
                s = -s;
            }
            let (a, b) = (x[[r, 2 * k]], x[[r, 2 * k + 1]]);
            out[[r, 2 * k]] = a * c - b * s;
            out[[r, 2 * k + 1]] = a * s + b * c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
    }

    /// Checks d(loss)/d(param 0) against central differences for a
    /// single-parameter graph builder.
    fn check<B>(p0: Array2<f64>, build: B)
    where
        B: Fn(&mut Tape<f64>, Var) -> Var,
    {
        let eval = |p: &Array2<f64>| {
            let mut tape = Tape::new();
            let v = tape.param(0, p);
            let out = build(&mut tape, v);
            tape.value(out)[[0, 0]]
        };
        let mut tape = Tape::new();
        let v = tape.param(0, &p0);
        let out = build(&mut tape, v);
        let g = tape.backward(out, 1).grads.remove(0).expect("grad");
        let h = 1e-6;
        for idx in 0..p0.len() {
            let (r, c) = (idx / p0.ncols(), idx % p0.ncols());
            let mut plus = p0.clone();
            plus[[r, c]] += h;
            let mut minus = p0.clone();
            minus[[r, c]] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let an = g[[r, c]];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!((fd - an).abs() / denom < 1e-5, "idx {idx}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn matmul_family_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = rand_mat(&mut rng, 4, 3);
        let t = Rc::new(rand_mat(&mut rng, 5, 3));
        let p = rand_mat(&mut rng, 5, 4);
        check(p.clone(), |tape, v| {
            let bb = tape.constant(b.clone());
            let y = tape.matmul(v, bb);
            tape.sq_err_sum(y, t.clone())
        });
        let t2 = Rc::new(rand_mat(&mut rng, 5, 5));
        check(p, |tape, v| {
            let y = tape.matmul_nt(v, v);
            tape.sq_err_sum(y, t2.clone())
        });
    }

    #[test]
    fn norm_softmax_silu_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = rand_mat(&mut rng, 3, 6);
        let t = Rc::new(rand_mat(&mut rng, 3, 6));
        check(p.clone(), |tape, v| {
            let y = tape.layer_norm(v, 1e-6);
            let z = tape.silu(y);
            let w = tape.softmax_rows(z);
            tape.sq_err_sum(w, t.clone())
        });
    }

    #[test]
    fn structural_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = rand_mat(&mut rng, 3, 4);
        let t = Rc::new(rand_mat(&mut rng, 5, 6));
        let idx = Rc::new(vec![2, 0, 2, 1, 1]);
        let cos = Rc::new(rand_mat(&mut rng, 5, 3));
        let sin = Rc::new(rand_mat(&mut rng, 5, 3));
        check(p, |tape, v| {
            let g = tape.gather_rows(v, idx.clone());
            let a = tape.slice_cols(g, 1, 3);
            let b = tape.slice_rows(g, 0, 5);
            let c = tape.concat_cols(&[a, b]);
            let c = tape.slice_cols(c, 0, 6);
            let r = tape.rotary(c, cos.clone(), sin.clone());
            let top = tape.slice_rows(r, 0, 2);
            let bottom = tape.slice_rows(r, 2, 3);
            let r = tape.concat_rows(&[bottom, top]);
            let m = tape.mul(r, r);
            let s = tape.scale(m, 0.5);
            let s = tape.add_scalar(s, 0.25);
            let row = tape.slice_rows(s, 0, 1);
            let s = tape.add_row(s, row);
            let s = tape.add(s, r);
            tape.sq_err_sum(s, t.clone())
        });
    }

    #[test]
    fn masked_softmax_is_exactly_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Array2::from_shape_vec((1, 3), vec![0.3, 2.0, -1.0]).unwrap());
        let mask = Array2::from_shape_vec((1, 3), vec![0.0, f64::NEG_INFINITY, 0.0]).unwrap();
        let y = tape.add_const(x, &mask);
        let y = tape.softmax_rows(y);
        assert_eq!(tape.value(y)[[0, 1]], 0.0);
        assert!((tape.value(y).sum() - 1.0).abs() < 1e-15);
    }
}
