//! Recurrent multi-head network with hand-written backpropagation.
//!
//! Layout: one gated recurrent cell over the window, its last hidden state
//! through ReLU dense layers, then one linear output per head. Tensors are
//! stored flat in [`Params`] so gradients and optimizer moments share the
//! parameter type.

use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;

use crate::error::{contract, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NetShape {
    pub input: usize,
    pub hidden: usize,
    pub dense: Vec<usize>,
    pub heads: Vec<usize>,
}

impl NetShape {
    /// Tensor shapes in storage order.
    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        let h = self.hidden;
        let mut shapes = vec![(self.input, 4 * h), (h, 4 * h), (1, 4 * h)];
        let mut prev = h;
        for &w in &self.dense {
            shapes.push((prev, w));
            shapes.push((1, w));
            prev = w;
        }
        for &n in &self.heads {
            shapes.push((prev, n));
            shapes.push((1, n));
        }
        shapes
    }

    fn dense_offset(&self) -> usize {
        3
    }

    fn head_offset(&self) -> usize {
        3 + 2 * self.dense.len()
    }
}

/// Ordered list of parameter (or gradient, or moment) tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Params(pub Vec<Array2<f64>>);

impl Params {
    pub fn zeros(shapes: &[(usize, usize)]) -> Self {
        Self(shapes.iter().map(|&s| Array2::zeros(s)).collect())
    }

    pub fn zeros_like(&self) -> Self {
        Self(self.0.iter().map(|t| Array2::zeros(t.raw_dim())).collect())
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a.dim() == b.dim())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|t| t.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.0 {
            t.mapv_inplace(|x| x * k);
        }
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
        n
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter().flat_map(|t| t.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.0.iter_mut().flat_map(|t| t.iter_mut())
    }
}

/// `target <- rho * target + (1 - rho) * source`, elementwise.
pub fn polyak_update(target: &mut Params, source: &Params, rho: f64) -> Result<()> {
    if !target.same_shape(source) {
        return Err(contract("polyak update between differently shaped parameter sets"));
    }
    for (t, s) in target.0.iter_mut().zip(&source.0) {
        Zip::from(t).and(s).for_each(|t, &s| *t = rho * *t + (1.0 - rho) * s);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub shape: NetShape,
    pub params: Params,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    xs: Vec<Array2<f64>>,
    hs: Vec<Array2<f64>>,
    cs: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    acts: Vec<Array2<f64>>,
}

impl Cache {
    /// Pre-activation values of each ReLU dense layer, one `(batch, width)`
    /// matrix per layer.
    pub fn dense_pre(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

/// Orthogonal columns by Gram-Schmidt over a Gaussian-ish draw.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0));
    let (short, by_rows) = if rows <= cols { (rows, true) } else { (cols, false) };
    for i in 0..short {
        for j in 0..i {
            let (vi, vj) = if by_rows {
                (m.row(i).to_owned(), m.row(j).to_owned())
            } else {
                (m.column(i).to_owned(), m.column(j).to_owned())
            };
            let proj = vi.dot(&vj);
            let mut target = if by_rows { m.row_mut(i) } else { m.column_mut(i) };
            target.scaled_add(-proj, &vj);
        }
        let mut v = if by_rows { m.row_mut(i) } else { m.column_mut(i) };
        let n: f64 = v.dot(&v);
        let n = n.sqrt().max(1e-12);
        v.mapv_inplace(|x| x / n);
    }
    m
}

impl Net {
    pub fn new<R: Rng + ?Sized>(shape: NetShape, orthogonal_recurrent: bool, rng: &mut R) -> Self {
        let mut tensors = Vec::new();
        for (i, (r, c)) in shape.tensor_shapes().into_iter().enumerate() {
            let is_bias = i == 2 || (i > 3 && i % 2 == 0);
            let t = if is_bias {
                Array2::zeros((r, c))
            } else if i == 1 && orthogonal_recurrent {
                orthogonal(r, c, rng)
            } else {
                xavier(r, c, rng)
            };
            tensors.push(t);
        }
        Self { shape, params: Params(tensors) }
    }

    /// `window` holds one `batch x input` matrix per time step, oldest first.
    /// Returns one `batch x n_head` output per head.
    pub fn forward(&self, window: &[Array2<f64>]) -> Result<(Vec<Array2<f64>>, Cache)> {
        let h = self.shape.hidden;
        let batch = window.first().map_or(0, |x| x.nrows());
        for x in window {
            if x.dim() != (batch, self.shape.input) {
                return Err(contract(format!("input step of shape {:?}, expected ({batch}, {})", x.dim(), self.shape.input)));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(contract("non-finite network input"));
            }
        }
        let p = &self.params.0;
        let mut cache = Cache {
            xs: window.to_vec(),
            hs: vec![Array2::zeros((batch, h))],
            cs: vec![Array2::zeros((batch, h))],
            gates: Vec::with_capacity(window.len()),
            pre: Vec::new(),
            acts: Vec::new(),
        };
        for x in window {
            let h_prev = cache.hs.last().expect("initial state");
            let mut z = x.dot(&p[0]) + h_prev.dot(&p[1]) + &p[2];
            z.slice_mut(s![.., 0..2 * h]).mapv_inplace(sigmoid);
            z.slice_mut(s![.., 2 * h..3 * h]).mapv_inplace(f64::tanh);
            z.slice_mut(s![.., 3 * h..]).mapv_inplace(sigmoid);
            let c_prev = cache.cs.last().expect("initial state");
            let c = &z.slice(s![.., h..2 * h]) * c_prev + &z.slice(s![.., 0..h]) * &z.slice(s![.., 2 * h..3 * h]);
            let hn = &z.slice(s![.., 3 * h..]) * &c.mapv(f64::tanh);
            cache.gates.push(z);
            cache.cs.push(c);
            cache.hs.push(hn);
        }
        let mut a = cache.hs.last().expect("initial state").clone();
        let off = self.shape.dense_offset();
        for l in 0..self.shape.dense.len() {
            let z = a.dot(&p[off + 2 * l]) + &p[off + 2 * l + 1];
            cache.acts.push(a);
            a = z.mapv(|v| v.max(0.0));
            cache.pre.push(z);
        }
        let off = self.shape.head_offset();
        let outs = (0..self.shape.heads.len()).map(|k| a.dot(&p[off + 2 * k]) + &p[off + 2 * k + 1]).collect();
        cache.acts.push(a);
        Ok((outs, cache))
    }

    /// Gradient of a scalar loss given its gradient with respect to every
    /// head output.
    pub fn backward(&self, cache: &Cache, d_outs: &[Array2<f64>]) -> Params {
        let h = self.shape.hidden;
        let p = &self.params.0;
        let mut g = self.params.zeros_like();
        let n_dense = self.shape.dense.len();
        let last = &cache.acts[n_dense];
        let off = self.shape.head_offset();
        let mut da = Array2::<f64>::zeros(last.raw_dim());
        for (k, d) in d_outs.iter().enumerate() {
            g.0[off + 2 * k] = last.t().dot(d);
            g.0[off + 2 * k + 1] = d.sum_axis(Axis(0)).insert_axis(Axis(0));
            da += &d.dot(&p[off + 2 * k].t());
        }
        let off = self.shape.dense_offset();
        for l in (0..n_dense).rev() {
            let mut dz = da;
            Zip::from(&mut dz).and(&cache.pre[l]).for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
            let a_in = &cache.acts[l];
            g.0[off + 2 * l] = a_in.t().dot(&dz);
            g.0[off + 2 * l + 1] = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            da = dz.dot(&p[off + 2 * l].t());
        }

        let mut dh = da;
        let mut dc = Array2::<f64>::zeros(dh.raw_dim());
        let batch = dh.nrows();
        let mut dz = Array2::<f64>::zeros((batch, 4 * h));
        for t in (0..cache.gates.len()).rev() {
            let gates = &cache.gates[t];
            let c = &cache.cs[t + 1];
            let c_prev = &cache.cs[t];
            for r in 0..batch {
                for j in 0..h {
                    let (i, f, gg, o) = (gates[[r, j]], gates[[r, h + j]], gates[[r, 2 * h + j]], gates[[r, 3 * h + j]]);
                    let tc = c[[r, j]].tanh();
                    let dhr = dh[[r, j]];
                    let dcr = dc[[r, j]] + dhr * o * (1.0 - tc * tc);
                    dz[[r, j]] = dcr * gg * i * (1.0 - i);
                    dz[[r, h + j]] = dcr * c_prev[[r, j]] * f * (1.0 - f);
                    dz[[r, 2 * h + j]] = dcr * i * (1.0 - gg * gg);
                    dz[[r, 3 * h + j]] = dhr * tc * o * (1.0 - o);
                    dc[[r, j]] = dcr * f;
                }
            }
            g.0[0] += &cache.xs[t].t().dot(&dz);
            g.0[1] += &cache.hs[t].t().dot(&dz);
            g.0[2] += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            dh = dz.dot(&p[1].t());
        }
        g
    }
}
