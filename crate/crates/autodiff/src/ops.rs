//! Elementwise, reduction, and shape ops on the tape.
//!
//! Shape rules are deliberately narrow: binary ops require identical shapes,
//! and the few broadcast patterns the networks need (`add_rows`,
//! `scale_axis0`, `mul_expand_last`, `div_by_scalar`) are separate ops with
//! hand-derived backward passes. Every backward here is covered by a centered
//! finite-difference test.

use crate::{Graph, Tensor, Var};
use ndarray::{Array1, Array2, ArrayD, Axis, IxDyn, Slice};

fn same_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

/// Standard-layout 2D view of a tensor interpreted as (rows, last-axis).
fn as2d(x: &Tensor, rows: usize, cols: usize) -> Array2<f64> {
    x.to_owned()
        .into_shape((rows, cols))
        .expect("as2d: length mismatch")
}

fn lead_len(shape: &[usize]) -> usize {
    shape[..shape.len() - 1].iter().product()
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "add");
        let v = self.value(a) + self.value(b);
        self.push(
            v,
            vec![a.idx, b.idx],
            Some(Box::new(|_, g, _| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "sub");
        let v = self.value(a) - self.value(b);
        self.push(
            v,
            vec![a.idx, b.idx],
            Some(Box::new(|_, g, _| vec![g.clone(), g.mapv(|x| -x)])),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "mul");
        let v = self.value(a) * self.value(b);
        self.push(
            v,
            vec![a.idx, b.idx],
            Some(Box::new(|_, g, p| vec![g * p[1], g * p[0]])),
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "div");
        let v = self.value(a) / self.value(b);
        self.push(
            v,
            vec![a.idx, b.idx],
            Some(Box::new(|out, g, p| {
                let da = g / p[1];
                let db = -(g * out) / p[1];
                vec![da, db]
            })),
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| -x);
        self.push(
            v,
            vec![a.idx],
            Some(Box::new(|_, g, _| vec![g.mapv(|x| -x)])),
        )
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x + c);
        self.push(v, vec![a.idx], Some(Box::new(|_, g, _| vec![g.clone()])))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x * c);
        self.push(
            v,
            vec![a.idx],
            Some(Box::new(move |_, g, _| vec![g.mapv(|x| x * c)])),
        )
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        self.push(v, vec![a.idx], Some(Box::new(|_, g, p| vec![g / p[0]])))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, vec![a.idx], Some(Box::new(|out, g, _| vec![g * out])))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::sqrt);
        self.push(
            v,
            vec![a.idx],
            Some(Box::new(|out, g, _| vec![g * &out.mapv(|y| 0.5 / y)])),
        )
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / x);
        self.push(
            v,
            vec![a.idx],
            Some(Box::new(|out, g, _| vec![-(g * out) * out])),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(
            v,
            vec![a.idx],
            Some(Box::new(|out, g, _| vec![g * &out.mapv(|s| s * (1.0 - s))])),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(
            v,
            vec![a.idx],
            Some(Box::new(|out, g, _| {
                vec![g * &out.mapv(|t| 1.0 - t * t)]
            })),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(
            v,
            vec![a.idx],
            Some(Box::new(|_, g, p| {
                vec![g * &p[0].mapv(|x| if x > 0.0 { 1.0 } else { 0.0 })]
            })),
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(
            v,
            vec![a.idx],
            Some(Box::new(move |_, g, p| {
                vec![g * &p[0].mapv(|x| if x > 0.0 { 1.0 } else { slope })]
            })),
        )
    }

    /// 2D matrix product `(m,k) x (k,n) -> (m,n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.ndim(), 2, "matmul lhs must be 2D");
        assert_eq!(bv.ndim(), 2, "matmul rhs must be 2D");
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let (k2, n) = (bv.shape()[0], bv.shape()[1]);
        assert_eq!(k, k2, "matmul inner dims");
        let a2 = as2d(av, m, k);
        let b2 = as2d(bv, k, n);
        let v = a2.dot(&b2).into_dyn();
        self.push(
            v,
            vec![a.idx, b.idx],
            Some(Box::new(move |_, g, p| {
                let g2 = as2d(g, m, n);
                let a2 = as2d(p[0], m, k);
                let b2 = as2d(p[1], k, n);
                let da = g2.dot(&b2.t()).into_dyn();
                let db = a2.t().dot(&g2).into_dyn();
                vec![da, db]
            })),
        )
    }

    pub fn transpose2(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert_eq!(av.ndim(), 2, "transpose2 needs 2D");
        let v = av.t().as_standard_layout().to_owned();
        self.push(
            v,
            vec![a.idx],
            Some(Box::new(|_, g, _| {
                vec![g.t().as_standard_layout().to_owned()]
            })),
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let v = Tensor::from_elem(IxDyn(&[1]), s);
        self.push(
            v,
            vec![a.idx],
            Some(Box::new(|_, g, p| {
                vec![Tensor::from_elem(p[0].raw_dim(), g[[0]])]
            })),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.mul_scalar(s, 1.0 / n)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        let v = self.value(a).sum_axis(Axis(axis));
        self.push(
            v,
            vec![a.idx],
            Some(Box::new(move |_, g, p| {
                let expanded = g.clone().insert_axis(Axis(axis));
                let full = expanded
                    .broadcast(p[0].raw_dim())
                    .expect("sum_axis backward broadcast")
                    .to_owned();
                vec![full]
            })),
        )
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Var {
        let n = self.value(a).shape()[axis] as f64;
        let s = self.sum_axis(a, axis);
        self.mul_scalar(s, 1.0 / n)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self
            .value(a)
            .to_owned()
            .into_shape(IxDyn(shape))
            .expect("reshape: length mismatch");
        self.push(
            v,
            vec![a.idx],
            Some(Box::new(|_, g, p| {
                vec![g.to_owned().into_shape(p[0].raw_dim()).unwrap()]
            })),
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
        let sizes: Vec<usize> = parts.iter().map(|&p| self.value(p).shape()[axis]).collect();
        let idxs: Vec<u32> = parts.iter().map(|p| p.idx).collect();
        self.push(
            v,
            idxs,
            Some(Box::new(move |_, g, _| {
                let mut out = Vec::with_capacity(sizes.len());
                let mut start = 0isize;
                for &sz in &sizes {
                    let piece = g
                        .slice_axis(Axis(axis), Slice::new(start, Some(start + sz as isize), 1))
                        .to_owned();
                    out.push(piece);
                    start += sz as isize;
                }
                out
            })),
        )
    }

    /// Contiguous slice of length `len` starting at `start` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.shape()[axis], "narrow out of range");
        let v = av
            .slice_axis(
                Axis(axis),
                Slice::new(start as isize, Some((start + len) as isize), 1),
            )
            .as_standard_layout()
            .to_owned();
        self.push(
            v,
            vec![a.idx],
            Some(Box::new(move |_, g, p| {
                let mut dx = ArrayD::zeros(p[0].raw_dim());
                dx.slice_axis_mut(
                    Axis(axis),
                    Slice::new(start as isize, Some((start + len) as isize), 1),
                )
                .assign(g);
                vec![dx]
            })),
        )
    }

    /// Reverse the last two axes (a 180-degree rotation of each trailing 2D
    /// plane). Self-inverse, so the backward is the same flip.
    pub fn flip_last2(&mut self, a: Var) -> Var {
        fn flip(x: &Tensor) -> Tensor {
            let nd = x.ndim();
            assert!(nd >= 2, "flip_last2 needs ndim >= 2");
            let mut out = x.to_owned();
            out.invert_axis(Axis(nd - 2));
            out.invert_axis(Axis(nd - 1));
            out.as_standard_layout().to_owned()
        }
        let v = flip(self.value(a));
        self.push(v, vec![a.idx], Some(Box::new(|_, g, _| vec![flip(g)])))
    }

    /// Cut the tape: a new leaf carrying the same value, through which no
    /// gradient flows back to `a`.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.leaf(v)
    }

    /// Row-broadcast bias add: `x (n,d) + b (d)`.
    pub fn add_rows(&mut self, x: Var, b: Var) -> Var {
        let xv = self.value(x);
        let bv = self.value(b);
        assert_eq!(xv.ndim(), 2, "add_rows lhs must be 2D");
        assert_eq!(bv.ndim(), 1, "add_rows rhs must be 1D");
        assert_eq!(xv.shape()[1], bv.shape()[0], "add_rows dims");
        let v = xv + bv;
        self.push(
            v,
            vec![x.idx, b.idx],
            Some(Box::new(|_, g, _| {
                let db = g.sum_axis(Axis(0));
                vec![g.clone(), db]
            })),
        )
    }

    /// Scale each axis-0 slice of `x` by the matching entry of `s (n)`.
    pub fn scale_axis0(&mut self, x: Var, s: Var) -> Var {
        let xv = self.value(x);
        let sv = self.value(s);
        assert_eq!(sv.ndim(), 1, "scale_axis0 scale must be 1D");
        assert_eq!(xv.shape()[0], sv.shape()[0], "scale_axis0 dims");
        let mut v = xv.clone();
        for (i, mut lane) in v.axis_iter_mut(Axis(0)).enumerate() {
            lane.mapv_inplace(|t| t * sv[[i]]);
        }
        self.push(
            v,
            vec![x.idx, s.idx],
            Some(Box::new(|_, g, p| {
                let (xv, sv) = (p[0], p[1]);
                let mut dx = g.clone();
                for (i, mut lane) in dx.axis_iter_mut(Axis(0)).enumerate() {
                    lane.mapv_inplace(|t| t * sv[[i]]);
                }
                let n = sv.shape()[0];
                let mut ds = Array1::<f64>::zeros(n);
                for i in 0..n {
                    let gi = g.index_axis(Axis(0), i);
                    let xi = xv.index_axis(Axis(0), i);
                    ds[i] = (&gi * &xi).sum();
                }
                vec![dx, ds.into_dyn()]
            })),
        )
    }

    /// `x (..., k) * w (...)`, broadcasting `w` across the last axis.
    pub fn mul_expand_last(&mut self, x: Var, w: Var) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(
            &xv.shape()[..xv.ndim() - 1],
            wv.shape(),
            "mul_expand_last dims"
        );
        let k = xv.shape()[xv.ndim() - 1];
        let l = lead_len(xv.shape());
        let x2 = as2d(xv, l, k);
        let wf = wv.to_owned().into_shape(l).unwrap();
        let mut out2 = x2.clone();
        for (mut row, &wi) in out2.rows_mut().into_iter().zip(wf.iter()) {
            row.mapv_inplace(|t| t * wi);
        }
        let shape = xv.raw_dim();
        let v = out2.into_dyn().into_shape(shape).unwrap();
        self.push(
            v,
            vec![x.idx, w.idx],
            Some(Box::new(move |_, g, p| {
                let (xv, wv) = (p[0], p[1]);
                let g2 = as2d(g, l, k);
                let x2 = as2d(xv, l, k);
                let wf = wv.to_owned().into_shape(l).unwrap();
                let mut dx2 = g2.clone();
                for (mut row, &wi) in dx2.rows_mut().into_iter().zip(wf.iter()) {
                    row.mapv_inplace(|t| t * wi);
                }
                let mut dw = Array1::<f64>::zeros(l);
                for (i, (grow, xrow)) in g2.rows().into_iter().zip(x2.rows()).enumerate() {
                    dw[i] = grow.dot(&xrow);
                }
                let dx = dx2.into_dyn().into_shape(xv.raw_dim()).unwrap();
                let dwt = dw.into_dyn().into_shape(wv.raw_dim()).unwrap();
                vec![dx, dwt]
            })),
        )
    }

    /// Divide every element of `x` by the single-element var `s`.
    pub fn div_by_scalar(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.value(s).len(), 1, "div_by_scalar divisor must be [1]");
        let sval = self.value(s)[[0]];
        let v = self.value(x).mapv(|t| t / sval);
        self.push(
            v,
            vec![x.idx, s.idx],
            Some(Box::new(|_, g, p| {
                let sval = p[1][[0]];
                let dx = g.mapv(|t| t / sval);
                let ds_val = -(g * p[0]).sum() / (sval * sval);
                vec![dx, Tensor::from_elem(IxDyn(&[1]), ds_val)]
            })),
        )
    }

    /// Pick one column per row: `x (n,c)[i, idx[i]] -> (n)`.
    pub fn gather_class(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.ndim(), 2, "gather_class needs 2D");
        let (n, c) = (xv.shape()[0], xv.shape()[1]);
        assert_eq!(idx.len(), n, "gather_class index count");
        let mut out = Array1::<f64>::zeros(n);
        for i in 0..n {
            assert!(idx[i] < c, "gather_class index out of range");
            out[i] = xv[[i, idx[i]]];
        }
        let idx_own: Vec<usize> = idx.to_vec();
        self.push(
            out.into_dyn(),
            vec![x.idx],
            Some(Box::new(move |_, g, p| {
                let mut dx = ArrayD::zeros(p[0].raw_dim());
                for (i, &j) in idx_own.iter().enumerate() {
                    dx[[i, j]] = g[[i]];
                }
                vec![dx]
            })),
        )
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let xv = self.value(a);
        let k = xv.shape()[xv.ndim() - 1];
        let l = lead_len(xv.shape());
        let mut x2 = as2d(xv, l, k);
        for mut row in x2.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &t| acc.max(t));
            row.mapv_inplace(|t| (t - m).exp());
            let s = row.sum();
            row.mapv_inplace(|t| t / s);
        }
        let v = x2.into_dyn().into_shape(xv.raw_dim()).unwrap();
        self.push(
            v,
            vec![a.idx],
            Some(Box::new(move |out, g, _| {
                let s2 = as2d(out, l, k);
                let g2 = as2d(g, l, k);
                let mut dx = g2.clone();
                for ((mut drow, srow), grow) in
                    dx.rows_mut().into_iter().zip(s2.rows()).zip(g2.rows())
                {
                    let dot = grow.dot(&srow);
                    for (d, &s) in drow.iter_mut().zip(srow.iter()) {
                        *d = s * (*d - dot);
                    }
                }
                vec![dx.into_dyn().into_shape(out.raw_dim()).unwrap()]
            })),
        )
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax_last(&mut self, a: Var) -> Var {
        let xv = self.value(a);
        let k = xv.shape()[xv.ndim() - 1];
        let l = lead_len(xv.shape());
        let mut x2 = as2d(xv, l, k);
        for mut row in x2.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &t| acc.max(t));
            let lse = m + row.iter().map(|&t| (t - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|t| t - lse);
        }
        let v = x2.into_dyn().into_shape(xv.raw_dim()).unwrap();
        self.push(
            v,
            vec![a.idx],
            Some(Box::new(move |out, g, _| {
                let o2 = as2d(out, l, k);
                let g2 = as2d(g, l, k);
                let mut dx = g2.clone();
                for ((mut drow, orow), grow) in
                    dx.rows_mut().into_iter().zip(o2.rows()).zip(g2.rows())
                {
                    let gsum: f64 = grow.sum();
                    for (d, &o) in drow.iter_mut().zip(orow.iter()) {
                        *d -= o.exp() * gsum;
                    }
                }
                vec![dx.into_dyn().into_shape(out.raw_dim()).unwrap()]
            })),
        )
    }
}
