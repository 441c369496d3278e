use super::{GraphError, Tensor};
use ndarray::{Array2, ArrayD, ArrayView2, Axis, Ix2, IxDyn};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op {
    Leaf,
    Dense { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var },
    Tanh { x: Var },
    Add { a: Var, b: Var, broadcast: bool },
    Scale { x: Var, k: f64 },
    Reshape { x: Var },
    Mse { pred: Var, target: Var },
    GeneratedAffine { theta: Var, s: Var, rows: Vec<usize>, n: usize, m: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Dense { .. } => "dense",
            Op::Conv2d { .. } => "conv2d",
            Op::Tanh { .. } => "tanh",
            Op::Add { .. } => "add",
            Op::Scale { .. } => "scale",
            Op::Reshape { .. } => "reshape",
            Op::Mse { .. } => "mse_loss",
            Op::GeneratedAffine { .. } => "generated_affine",
        }
    }
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients indexed by graph variable.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when `v` received none.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> ArrayD<f64> {
        self.get(v).cloned().unwrap_or_else(|| ArrayD::zeros(IxDyn(shape)))
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> GraphError {
    GraphError::Shape { op, detail }
}

fn as2(a: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("checked 2-D")
}

fn check_finite(op: &'static str, a: &ArrayD<f64>) -> Result<(), GraphError> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GraphError::NonFinite { op })
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

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, needs_grad: bool) -> Result<Var, GraphError> {
        check_finite(op.name(), &value)?;
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: ArrayD<f64>) -> Result<Var, GraphError> {
        self.push(value, Op::Leaf, false)
    }

    /// Parameter leaf; trainable when `t.requires_grad`.
    pub fn param(&mut self, t: &Tensor) -> Result<Var, GraphError> {
        self.push(t.data.clone(), Op::Leaf, t.requires_grad)
    }

    /// `y = x·W + b` with `x: [B, In]`, `W: [In, Out]`, `b: [Out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, GraphError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.ndim() != 2 || wv.ndim() != 2 || bv.ndim() != 1 || xv.shape()[1] != wv.shape()[0] || wv.shape()[1] != bv.shape()[0] {
            return Err(shape_err("dense", format!("x {:?}, W {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape())));
        }
        let mut y = as2(xv).dot(&as2(wv));
        y += &bv.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let needs = self.needs(&[x, w, b]);
        self.push(y.into_dyn(), Op::Dense { x, w, b }, needs)
    }

    /// Same-padded, stride-1 cross-correlation. `x: [B, C, H, W]`,
    /// `w: [C', C, k, k]` with odd `k`, `b: [C']`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, GraphError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.ndim() != 4 || wv.ndim() != 4 || bv.ndim() != 1 {
            return Err(shape_err("conv2d", format!("x {:?}, W {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape())));
        }
        let (bs, c, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let (co, ci, kh, kw) = (wv.shape()[0], wv.shape()[1], wv.shape()[2], wv.shape()[3]);
        if ci != c || kh != kw || kh % 2 == 0 || bv.shape()[0] != co {
            return Err(shape_err("conv2d", format!("x {:?}, W {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape())));
        }
        let wm = wv.view().into_shape_with_order((co, c * kh * kw)).expect("contiguous weights");
        let hw = h * wd;
        let bias = bv.as_slice().expect("contiguous bias");
        let xs = xv.as_standard_layout();
        let src = xs.as_slice().expect("standard layout");
        let mut y = vec![0.0; bs * co * hw];
        let chunk = conv_chunk(c * kh * kw * hw);
        for b0 in (0..bs).step_by(chunk) {
            let nb = chunk.min(bs - b0);
            let cols = im2col(&src[b0 * c * hw..(b0 + nb) * c * hw], nb, c, h, wd, kh);
            let om = wm.dot(&cols);
            let om = om.as_slice().expect("standard layout");
            for o in 0..co {
                for bi in 0..nb {
                    let from = &om[o * nb * hw + bi * hw..o * nb * hw + (bi + 1) * hw];
                    let at = ((b0 + bi) * co + o) * hw;
                    for (t, f) in y[at..at + hw].iter_mut().zip(from) {
                        *t = f + bias[o];
                    }
                }
            }
        }
        let y = ArrayD::from_shape_vec(IxDyn(&[bs, co, h, wd]), y).expect("sized");
        let needs = self.needs(&[x, w, b]);
        self.push(y, Op::Conv2d { x, w, b }, needs)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, GraphError> {
        let y = self.value(x).mapv(f64::tanh);
        let needs = self.needs(&[x]);
        self.push(y, Op::Tanh { x }, needs)
    }

    /// Elementwise sum; `b` may also omit the leading batch axis of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = if av.shape() == bv.shape() {
            false
        } else if av.ndim() == bv.ndim() + 1 && &av.shape()[1..] == bv.shape() {
            true
        } else {
            return Err(shape_err("add", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        };
        let y = av + bv;
        let needs = self.needs(&[a, b]);
        self.push(y, Op::Add { a, b, broadcast }, needs)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var, GraphError> {
        let y = self.value(x) * k;
        let needs = self.needs(&[x]);
        self.push(y, Op::Scale { x, k }, needs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, GraphError> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.len() {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", xv.shape(), shape)));
        }
        let y = xv.as_standard_layout().into_owned().into_shape_with_order(IxDyn(shape)).expect("count checked");
        let needs = self.needs(&[x]);
        self.push(y, Op::Reshape { x }, needs)
    }

    /// `(1/B) Σ_b ‖pred_b − target_b‖²`: summed within a sample, averaged
    /// over the leading batch axis.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var, GraphError> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() || p.ndim() == 0 {
            return Err(shape_err("mse_loss", format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        let batch = p.shape()[0] as f64;
        let sum: f64 = p.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let y = ArrayD::from_elem(IxDyn(&[]), sum / batch);
        let needs = self.needs(&[pred, target]);
        self.push(y, Op::Mse { pred, target }, needs)
    }

    /// Per-sample affine map with generated parameters:
    /// `y_b = W(rows[b])·s_b + b(rows[b])`, where row `r` of `theta`
    /// (`[S, N·(M+1)]`) holds `W` (`N × M`, row-major) then `b` (`N`).
    pub fn generated_affine(&mut self, theta: Var, s: Var, rows: &[usize]) -> Result<Var, GraphError> {
        let (tv, sv) = (self.value(theta), self.value(s));
        if tv.ndim() != 2 || sv.ndim() != 2 || sv.shape()[0] != rows.len() {
            return Err(shape_err("generated_affine", format!("theta {:?}, s {:?}, rows {}", tv.shape(), sv.shape(), rows.len())));
        }
        let m = sv.shape()[1];
        let p = tv.shape()[1];
        if p % (m + 1) != 0 || rows.iter().any(|&r| r >= tv.shape()[0]) {
            return Err(shape_err("generated_affine", format!("theta {:?} incompatible with M = {m}", tv.shape())));
        }
        let n = p / (m + 1);
        let (t2, s2) = (as2(tv), as2(sv));
        let mut y = Array2::<f64>::zeros((rows.len(), n));
        for (bi, &r) in rows.iter().enumerate() {
            let th = t2.row(r);
            let th = th.as_slice().expect("row-major theta");
            let sb = s2.row(bi);
            for i in 0..n {
                let wrow = &th[i * m..(i + 1) * m];
                let acc: f64 = wrow.iter().zip(sb.iter()).map(|(a, b)| a * b).sum();
                y[[bi, i]] = acc + th[n * m + i];
            }
        }
        let needs = self.needs(&[theta, s]);
        self.push(y.into_dyn(), Op::GeneratedAffine { theta, s, rows: rows.to_vec(), n, m }, needs)
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GraphError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(GraphError::NotScalar(lv.shape().to_vec()));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(GraphError::Detached);
        }
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(ArrayD::from_elem(lv.raw_dim(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            let name = node.op.name();
            let mut contributions: Vec<(Var, ArrayD<f64>)> = Vec::new();
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::Dense { x, w, b } => {
                    let d = as2(&dy);
                    if self.requires_grad(*x) {
                        contributions.push((*x, d.dot(&as2(self.value(*w)).t()).into_dyn()));
                    }
                    if self.requires_grad(*w) {
                        contributions.push((*w, as2(self.value(*x)).t().dot(&d).into_dyn()));
                    }
                    if self.requires_grad(*b) {
                        contributions.push((*b, d.sum_axis(Axis(0)).into_dyn()));
                    }
                }
                Op::Conv2d { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (bs, c, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                    let (co, k) = (wv.shape()[0], wv.shape()[2]);
                    let hw = h * wd;
                    let ckk = c * k * k;
                    let wm = wv.view().into_shape_with_order((co, ckk)).expect("contiguous");
                    let xs = xv.as_standard_layout();
                    let xsrc = xs.as_slice().expect("standard layout");
                    let dys = dy.as_standard_layout();
                    let dsrc = dys.as_slice().expect("standard layout");
                    let (need_x, need_w) = (self.requires_grad(*x), self.requires_grad(*w));
                    let mut dw = Array2::<f64>::zeros((co, ckk));
                    let mut db = vec![0.0; co];
                    let mut dx = if need_x { vec![0.0; bs * c * hw] } else { Vec::new() };
                    let chunk = conv_chunk(ckk * hw);
                    for b0 in (0..bs).step_by(chunk) {
                        let nb = chunk.min(bs - b0);
                        // dY chunk [nb, C', H, W] -> [C', nb·H·W]
                        let mut dm = vec![0.0; co * nb * hw];
                        for bi in 0..nb {
                            for o in 0..co {
                                let from = &dsrc[((b0 + bi) * co + o) * hw..((b0 + bi) * co + o + 1) * hw];
                                dm[o * nb * hw + bi * hw..o * nb * hw + (bi + 1) * hw].copy_from_slice(from);
                                db[o] += from.iter().sum::<f64>();
                            }
                        }
                        let dm = Array2::from_shape_vec((co, nb * hw), dm).expect("sized");
                        if need_w {
                            let cols = im2col(&xsrc[b0 * c * hw..(b0 + nb) * c * hw], nb, c, h, wd, k);
                            ndarray::linalg::general_mat_mul(1.0, &dm, &cols.t(), 1.0, &mut dw);
                        }
                        if need_x {
                            let dcols = wm.t().dot(&dm);
                            col2im_add(&dcols, &mut dx[b0 * c * hw..(b0 + nb) * c * hw], nb, c, h, wd, k);
                        }
                    }
                    if need_w {
                        contributions.push((*w, dw.into_shape_with_order(IxDyn(wv.shape())).expect("sized")));
                    }
                    if self.requires_grad(*b) {
                        contributions.push((*b, ndarray::Array1::from(db).into_dyn()));
                    }
                    if need_x {
                        contributions.push((*x, ArrayD::from_shape_vec(IxDyn(&[bs, c, h, wd]), dx).expect("sized")));
                    }
                }
                Op::Tanh { x } => {
                    let y = &node.value;
                    let mut dx = dy.clone();
                    dx.zip_mut_with(y, |g, &t| *g *= 1.0 - t * t);
                    contributions.push((*x, dx));
                }
                Op::Add { a, b, broadcast } => {
                    if self.requires_grad(*b) {
                        let db = if *broadcast { dy.sum_axis(Axis(0)) } else { dy.clone() };
                        contributions.push((*b, db));
                    }
                    if self.requires_grad(*a) {
                        contributions.push((*a, dy));
                    }
                }
                Op::Scale { x, k } => contributions.push((*x, dy * *k)),
                Op::Reshape { x } => {
                    let shape = self.value(*x).shape().to_vec();
                    contributions.push((*x, dy.into_shape_with_order(IxDyn(&shape)).expect("count matches")));
                }
                Op::Mse { pred, target } => {
                    let (p, t) = (self.value(*pred), self.value(*target));
                    let g = dy.iter().next().copied().unwrap_or(1.0);
                    let k = 2.0 * g / p.shape()[0] as f64;
                    let diff = (p - t) * k;
                    if self.requires_grad(*target) {
                        contributions.push((*target, -&diff));
                    }
                    if self.requires_grad(*pred) {
                        contributions.push((*pred, diff));
                    }
                }
                Op::GeneratedAffine { theta, s, rows, n, m } => {
                    let (n, m) = (*n, *m);
                    let d = as2(&dy);
                    let sv = as2(self.value(*s));
                    if self.requires_grad(*theta) {
                        let ts = self.value(*theta).shape().to_vec();
                        let mut dt = Array2::<f64>::zeros((ts[0], ts[1]));
                        for (bi, &r) in rows.iter().enumerate() {
                            let mut row = dt.row_mut(r);
                            let row = row.as_slice_mut().expect("row-major");
                            let sb = sv.row(bi);
                            for i in 0..n {
                                let g = d[[bi, i]];
                                for (j, sj) in sb.iter().enumerate() {
                                    row[i * m + j] += g * sj;
                                }
                                row[n * m + i] += g;
                            }
                        }
                        contributions.push((*theta, dt.into_dyn()));
                    }
                    if self.requires_grad(*s) {
                        let tv = as2(self.value(*theta));
                        let mut ds = Array2::<f64>::zeros((rows.len(), m));
                        for (bi, &r) in rows.iter().enumerate() {
                            let th = tv.row(r);
                            for i in 0..n {
                                let g = d[[bi, i]];
                                for j in 0..m {
                                    ds[[bi, j]] += g * th[i * m + j];
                                }
                            }
                        }
                        contributions.push((*s, ds.into_dyn()));
                    }
                }
            }
            for (v, g) in contributions {
                check_finite(name, &g)?;
                match &mut grads[v.0] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Samples per convolution chunk, keeping the column buffer near 512 KiB.
fn conv_chunk(entries_per_sample: usize) -> usize {
    (65_536 / entries_per_sample.max(1)).max(1)
}

/// `nb` samples `[nb, C, H, W]` (flat) → `[C·k·k, nb·H·W]`, zero padding `k/2`.
fn im2col(src: &[f64], nb: usize, c: usize, h: usize, w: usize, k: usize) -> Array2<f64> {
    let pad = k / 2;
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    // zero-padded copy, so every kernel offset is a plain slice copy
    let mut padded = vec![0.0; nb * c * hp * wp];
    for plane in 0..nb * c {
        for i in 0..h {
            let at = (plane * hp + i + pad) * wp + pad;
            padded[at..at + w].copy_from_slice(&src[(plane * h + i) * w..(plane * h + i + 1) * w]);
        }
    }
    let mut cols = Vec::with_capacity(c * k * k * nb * h * w);
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                for bi in 0..nb {
                    let plane = (bi * c + ci) * hp;
                    for oi in 0..h {
                        let at = (plane + oi + ki) * wp + kj;
                        cols.extend_from_slice(&padded[at..at + w]);
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((c * k * k, nb * h * w), cols).expect("sized")
}

/// Adjoint of [`im2col`]: accumulates column gradients onto `out`.
fn col2im_add(cols: &Array2<f64>, out: &mut [f64], nb: usize, c: usize, h: usize, w: usize, k: usize) {
    let pad = k / 2;
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let src = cols.as_slice().expect("standard layout");
    let mut padded = vec![0.0; nb * c * hp * wp];
    let mut next = 0;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                for bi in 0..nb {
                    let plane = (bi * c + ci) * hp;
                    for oi in 0..h {
                        let at = (plane + oi + ki) * wp + kj;
                        for (d, s) in padded[at..at + w].iter_mut().zip(&src[next..next + w]) {
                            *d += s;
                        }
                        next += w;
                    }
                }
            }
        }
    }
    for plane in 0..nb * c {
        for i in 0..h {
            let at = (plane * hp + i + pad) * wp + pad;
            for (d, s) in out[(plane * h + i) * w..(plane * h + i + 1) * w].iter_mut().zip(&padded[at..at + w]) {
                *d += s;
            }
        }
    }
}
