//! Reverse-mode automatic differentiation over dynamically shaped `f64` arrays.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! replays it in reverse and accumulates gradients for every recorded
//! variable. The op set is exactly what the encoders, captioner and losses
//! need; everything runs in double precision so analytic gradients can be
//! validated against central finite differences.

use ndarray::{ArrayD, Axis, Ix1, Ix2, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Handle to a value recorded on a [`Tape`].
pub type Var = usize;

type GradFn = Box<dyn Fn(&ArrayD<f64>) -> Vec<ArrayD<f64>>>;

struct Node {
    value: ArrayD<f64>,
    parents: Vec<Var>,
    grad_fn: Option<GradFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every tape variable.
pub struct Gradients(Vec<Option<ArrayD<f64>>>);

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.0.get(v).and_then(|g| g.as_ref())
    }
}

pub fn scalar(v: f64) -> ArrayD<f64> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

fn as2(a: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("2-d value")
}

fn as1(a: &ArrayD<f64>) -> ndarray::ArrayView1<'_, f64> {
    a.view().into_dimensionality::<Ix1>().expect("1-d value")
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

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let a = self.value(v);
        debug_assert_eq!(a.len(), 1, "scalar_value on non-scalar");
        *a.iter().next().unwrap()
    }

    fn push(&mut self, value: ArrayD<f64>, parents: Vec<Var>, grad_fn: Option<GradFn>) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            grad_fn,
        });
        self.nodes.len() - 1
    }

    /// Record a constant or parameter value; gradients flow into it but not past it.
    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Vec::new(), None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(
            v,
            vec![a, b],
            Some(Box::new(|g: &ArrayD<f64>| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(
            v,
            vec![a, b],
            Some(Box::new(|g: &ArrayD<f64>| vec![g.clone(), -g])),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let v = &av * &bv;
        self.push(
            v,
            vec![a, b],
            Some(Box::new(move |g: &ArrayD<f64>| vec![g * &bv, g * &av])),
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.push(v, vec![a], Some(Box::new(|g: &ArrayD<f64>| vec![-g])))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(
            v,
            vec![a],
            Some(Box::new(move |g: &ArrayD<f64>| vec![g * c])),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        let out = v.clone();
        self.push(
            v,
            vec![a],
            Some(Box::new(move |g: &ArrayD<f64>| vec![g * &out])),
        )
    }

    /// `x / s` where `s` is a scalar variable.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Var {
        let xv = self.value(x).clone();
        let sv = self.scalar_value(s);
        let v = &xv / sv;
        self.push(
            v,
            vec![x, s],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let gx = g / sv;
                let gs = -(g * &xv).sum() / (sv * sv);
                vec![gx, scalar(gs)]
            })),
        )
    }

    /// Add a 1-d vector to every row of a 2-d matrix.
    pub fn add_row_broadcast(&mut self, x: Var, v: Var) -> Var {
        let xv = as2(self.value(x)).to_owned();
        let vv = as1(self.value(v)).to_owned();
        let out = (&xv + &vv).into_dyn();
        self.push(
            out,
            vec![x, v],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let g2 = as2(g);
                vec![g.clone(), g2.sum_axis(Axis(0)).into_dyn()]
            })),
        )
    }

    /// `a @ b` for 2-d operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = as2(self.value(a)).to_owned();
        let bv = as2(self.value(b)).to_owned();
        let out = av.dot(&bv).into_dyn();
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let g2 = as2(g);
                let ga = g2.dot(&bv.t()).into_dyn();
                let gb = av.t().dot(&g2).into_dyn();
                vec![ga, gb]
            })),
        )
    }

    /// `a @ b^T` for 2-d operands with matching trailing dimension.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let av = as2(self.value(a)).to_owned();
        let bv = as2(self.value(b)).to_owned();
        let out = av.dot(&bv.t()).into_dyn();
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let g2 = as2(g);
                let ga = g2.dot(&bv).into_dyn();
                let gb = g2.t().dot(&av).into_dyn();
                vec![ga, gb]
            })),
        )
    }

    /// Stack 2-d blocks along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| as2(self.value(p))).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows");
        let row_counts: Vec<usize> = parts.iter().map(|&p| self.value(p).shape()[0]).collect();
        self.push(
            out.into_dyn(),
            parts.to_vec(),
            Some(Box::new(move |g: &ArrayD<f64>| {
                let g2 = as2(g);
                let mut grads = Vec::with_capacity(row_counts.len());
                let mut start = 0;
                for &rows in &row_counts {
                    grads.push(g2.slice(ndarray::s![start..start + rows, ..]).to_owned().into_dyn());
                    start += rows;
                }
                grads
            })),
        )
    }

    /// Stack 2-d blocks along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| as2(self.value(p))).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols");
        let col_counts: Vec<usize> = parts.iter().map(|&p| self.value(p).shape()[1]).collect();
        self.push(
            out.into_dyn(),
            parts.to_vec(),
            Some(Box::new(move |g: &ArrayD<f64>| {
                let g2 = as2(g);
                let mut grads = Vec::with_capacity(col_counts.len());
                let mut start = 0;
                for &cols in &col_counts {
                    grads.push(g2.slice(ndarray::s![.., start..start + cols]).to_owned().into_dyn());
                    start += cols;
                }
                grads
            })),
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = as2(self.value(x));
        let (rows, cols) = (xv.nrows(), xv.ncols());
        let out = xv.slice(ndarray::s![.., start..start + len]).to_owned().into_dyn();
        self.push(
            out,
            vec![x],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let mut gx = ArrayD::zeros(IxDyn(&[rows, cols]));
                gx.view_mut()
                    .into_dimensionality::<Ix2>()
                    .unwrap()
                    .slice_mut(ndarray::s![.., start..start + len])
                    .assign(&as2(g));
                vec![gx]
            })),
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = as2(self.value(x));
        let (rows, cols) = (xv.nrows(), xv.ncols());
        let out = xv.slice(ndarray::s![start..start + len, ..]).to_owned().into_dyn();
        self.push(
            out,
            vec![x],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let mut gx = ArrayD::zeros(IxDyn(&[rows, cols]));
                gx.view_mut()
                    .into_dimensionality::<Ix2>()
                    .unwrap()
                    .slice_mut(ndarray::s![start..start + len, ..])
                    .assign(&as2(g));
                vec![gx]
            })),
        )
    }

    /// Extract row `i` of a 2-d matrix as a 1-d vector.
    pub fn row(&mut self, x: Var, i: usize) -> Var {
        let xv = as2(self.value(x));
        let (rows, cols) = (xv.nrows(), xv.ncols());
        let out = xv.row(i).to_owned().into_dyn();
        self.push(
            out,
            vec![x],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let mut gx = ArrayD::zeros(IxDyn(&[rows, cols]));
                gx.view_mut()
                    .into_dimensionality::<Ix2>()
                    .unwrap()
                    .row_mut(i)
                    .assign(&as1(g));
                vec![gx]
            })),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let in_shape: Vec<usize> = self.value(x).shape().to_vec();
        let out = self
            .value(x)
            .clone()
            .into_shape(IxDyn(shape))
            .expect("reshape: element count mismatch");
        self.push(
            out,
            vec![x],
            Some(Box::new(move |g: &ArrayD<f64>| {
                vec![g.clone().into_shape(IxDyn(&in_shape)).unwrap()]
            })),
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let shape: Vec<usize> = self.value(x).shape().to_vec();
        let v = scalar(self.value(x).sum());
        self.push(
            v,
            vec![x],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let gv = *g.iter().next().unwrap();
                vec![ArrayD::from_elem(IxDyn(&shape), gv)]
            })),
        )
    }

    /// Row-wise softmax; `-inf` entries receive exactly zero probability.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = as2(self.value(x));
        let mut out = xv.to_owned();
        for mut row in out.rows_mut() {
            let max = row.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
            debug_assert!(max.is_finite(), "softmax row fully masked");
            row.mapv_inplace(|v| (v - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        let y = out.clone();
        self.push(
            out.into_dyn(),
            vec![x],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let g2 = as2(g);
                let mut gx = y.clone();
                for (mut grow, (yrow, gorow)) in
                    gx.rows_mut().into_iter().zip(y.rows().into_iter().zip(g2.rows()))
                {
                    let dot: f64 = yrow.iter().zip(gorow.iter()).map(|(a, b)| a * b).sum();
                    for ((gv, &yv), &go) in grow.iter_mut().zip(yrow.iter()).zip(gorow.iter()) {
                        *gv = yv * (go - dot);
                    }
                }
                vec![gx.into_dyn()]
            })),
        )
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xv = as2(self.value(x));
        let mut out = xv.to_owned();
        let mut soft = xv.to_owned();
        for (mut orow, mut srow) in out.rows_mut().into_iter().zip(soft.rows_mut()) {
            let max = orow.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + orow.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            orow.mapv_inplace(|v| v - lse);
            srow.assign(&orow);
            srow.mapv_inplace(f64::exp);
        }
        self.push(
            out.into_dyn(),
            vec![x],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let g2 = as2(g);
                let mut gx = g2.to_owned();
                for (mut grow, srow) in gx.rows_mut().into_iter().zip(soft.rows()) {
                    let gsum: f64 = grow.sum();
                    for (gv, &sv) in grow.iter_mut().zip(srow.iter()) {
                        *gv -= sv * gsum;
                    }
                }
                vec![gx.into_dyn()]
            })),
        )
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        const C: f64 = 0.7978845608028654; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let xv = self.value(x).clone();
        let out = xv.mapv(|v| 0.5 * v * (1.0 + (C * (v + A * v.powi(3))).tanh()));
        self.push(
            out,
            vec![x],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let dg = xv.mapv(|v| {
                    let u = C * (v + A * v.powi(3));
                    let t = u.tanh();
                    0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * C * (1.0 + 3.0 * A * v * v)
                });
                vec![g * &dg]
            })),
        )
    }

    /// Row-wise layer normalization with learnable gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-5;
        let xv = as2(self.value(x)).to_owned();
        let gv = as1(self.value(gamma)).to_owned();
        let bv = as1(self.value(beta)).to_owned();
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut sigmas = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let sigma = (var + EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) / sigma);
            sigmas.push(sigma);
        }
        let out = (&xhat * &gv + &bv).into_dyn();
        self.push(
            out,
            vec![x, gamma, beta],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let g2 = as2(g);
                let mut gx = xhat.clone();
                let mut ggamma = ndarray::Array1::<f64>::zeros(gv.len());
                let mut gbeta = ndarray::Array1::<f64>::zeros(gv.len());
                for ((mut gxrow, (xhrow, grow)), &sigma) in gx
                    .rows_mut()
                    .into_iter()
                    .zip(xhat.rows().into_iter().zip(g2.rows()))
                    .zip(sigmas.iter())
                {
                    // a = gamma ⊙ g_out ; dx = (a - mean(a) - xhat*mean(a⊙xhat)) / sigma
                    let a: Vec<f64> = grow.iter().zip(gv.iter()).map(|(g, gm)| g * gm).collect();
                    let mean_a: f64 = a.iter().sum::<f64>() / d;
                    let mean_ax: f64 =
                        a.iter().zip(xhrow.iter()).map(|(av, xv)| av * xv).sum::<f64>() / d;
                    for ((gxv, &av), &xhv) in gxrow.iter_mut().zip(a.iter()).zip(xhrow.iter()) {
                        *gxv = (av - mean_a - xhv * mean_ax) / sigma;
                    }
                    for ((gg, gb), (&gov, &xhv)) in ggamma
                        .iter_mut()
                        .zip(gbeta.iter_mut())
                        .zip(grow.iter().zip(xhrow.iter()))
                    {
                        *gg += gov * xhv;
                        *gb += gov;
                    }
                }
                vec![gx.into_dyn(), ggamma.into_dyn(), gbeta.into_dyn()]
            })),
        )
    }

    /// Look up rows of `table` at the given ids.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = as2(self.value(table));
        let (vocab, d) = (tv.nrows(), tv.ncols());
        let mut out = ndarray::Array2::<f64>::zeros((ids.len(), d));
        for (mut row, &id) in out.rows_mut().into_iter().zip(ids.iter()) {
            row.assign(&tv.row(id));
        }
        let ids = ids.to_vec();
        self.push(
            out.into_dyn(),
            vec![table],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let g2 = as2(g);
                let mut gt = ndarray::Array2::<f64>::zeros((vocab, d));
                for (grow, &id) in g2.rows().into_iter().zip(ids.iter()) {
                    let mut trow = gt.row_mut(id);
                    trow += &grow;
                }
                vec![gt.into_dyn()]
            })),
        )
    }

    /// Select element `(r, c)` of a 2-d matrix as a scalar.
    pub fn pick(&mut self, x: Var, r: usize, c: usize) -> Var {
        let xv = as2(self.value(x));
        let (rows, cols) = (xv.nrows(), xv.ncols());
        let v = scalar(xv[(r, c)]);
        self.push(
            v,
            vec![x],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let mut gx = ArrayD::zeros(IxDyn(&[rows, cols]));
                gx[[r, c]] = *g.iter().next().unwrap();
                vec![gx]
            })),
        )
    }

    /// Select element `i` of a 1-d vector as a scalar.
    pub fn index(&mut self, x: Var, i: usize) -> Var {
        let xv = as1(self.value(x));
        let len = xv.len();
        let v = scalar(xv[i]);
        self.push(
            v,
            vec![x],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let mut gx = ArrayD::zeros(IxDyn(&[len]));
                gx[[i]] = *g.iter().next().unwrap();
                vec![gx]
            })),
        )
    }

    /// Stack scalar variables into a 1-d vector.
    pub fn stack_scalars(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<f64> = parts.iter().map(|&p| self.scalar_value(p)).collect();
        let n = vals.len();
        self.push(
            ndarray::Array1::from_vec(vals).into_dyn(),
            parts.to_vec(),
            Some(Box::new(move |g: &ArrayD<f64>| {
                let g1 = as1(g);
                (0..n).map(|i| scalar(g1[i])).collect()
            })),
        )
    }

    /// Cosine similarity of two 1-d vectors. Norms must be nonzero.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let av = as1(self.value(a)).to_owned();
        let bv = as1(self.value(b)).to_owned();
        let na = av.dot(&av).sqrt();
        let nb = bv.dot(&bv).sqrt();
        debug_assert!(na > 0.0 && nb > 0.0, "cosine of zero vector");
        let s = av.dot(&bv) / (na * nb);
        self.push(
            scalar(s),
            vec![a, b],
            Some(Box::new(move |g: &ArrayD<f64>| {
                let gv = *g.iter().next().unwrap();
                let ga = (&bv / (na * nb) - &av * (s / (na * na))) * gv;
                let gb = (&av / (na * nb) - &bv * (s / (nb * nb))) * gv;
                vec![ga.into_dyn(), gb.into_dyn()]
            })),
        )
    }

    /// Inverted dropout; `keep` entries are scaled by `1/(1-rate)`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Var {
        debug_assert!((0.0..1.0).contains(&rate));
        if rate == 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let mask = self
            .value(x)
            .mapv(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let v = self.value(x) * &mask;
        self.push(
            v,
            vec![x],
            Some(Box::new(move |g: &ArrayD<f64>| vec![g * &mask])),
        )
    }

    /// Accumulate gradients of scalar `root` with respect to every variable.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(ArrayD::from_elem(self.value(root).raw_dim(), 1.0));
        for id in (0..=root).rev() {
            let node = &self.nodes[id];
            let Some(grad_fn) = &node.grad_fn else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let contribs = grad_fn(&g);
            debug_assert_eq!(contribs.len(), node.parents.len());
            for (&parent, contrib) in node.parents.iter().zip(contribs) {
                match &mut grads[parent] {
                    Some(acc) => *acc += &contrib,
                    slot => *slot = Some(contrib),
                }
            }
            grads[id] = Some(g);
        }
        Gradients(grads)
    }
}
