//! Network layers as tape ops: convolution, pooling, batch normalization,
//! dropout, and the small compositions (`linear`, `l2_normalize_rows`) used
//! all over the model code.
//!
//! Convolution runs as im2col + one matrix product over the whole batch. The
//! backward pass rebuilds the column matrix instead of caching it; that
//! doubles the im2col work but keeps peak memory at one column matrix even on
//! large inputs.

use crate::{Graph, Tensor, Var};
use ndarray::{Array1, Array2, Array4, ArrayD, Axis};
use rand::Rng;

/// Output spatial size of a valid/padded convolution along one axis.
fn conv_out(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(
        len + 2 * pad >= k,
        "conv: input {len} (+2*{pad}) smaller than kernel {k}"
    );
    (len + 2 * pad - k) / stride + 1
}

/// Column matrix (c*kh*kw, n*oh*ow) for x (n,c,h,w).
fn im2col(
    x: &Array4<f64>,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let mut cols = Array2::<f64>::zeros((c * kh * kw, n * oh * ow));
    for bi in 0..n {
        for ci in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    for oi in 0..oh {
                        let ii = (oi * sh + ki) as isize - ph as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for oj in 0..ow {
                            let jj = (oj * sw + kj) as isize - pw as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            cols[[row, (bi * oh + oi) * ow + oj]] =
                                x[[bi, ci, ii as usize, jj as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of a column-matrix gradient back onto the input layout.
#[allow(clippy::too_many_arguments)]
fn col2im(
    dcols: &Array2<f64>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
) -> Array4<f64> {
    let mut dx = Array4::<f64>::zeros((n, c, h, w));
    for bi in 0..n {
        for ci in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    for oi in 0..oh {
                        let ii = (oi * sh + ki) as isize - ph as isize;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for oj in 0..ow {
                            let jj = (oj * sw + kj) as isize - pw as isize;
                            if jj < 0 || jj >= w as isize {
                                continue;
                            }
                            dx[[bi, ci, ii as usize, jj as usize]] +=
                                dcols[[row, (bi * oh + oi) * ow + oj]];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn to4(x: &Tensor) -> Array4<f64> {
    x.to_owned()
        .into_dimensionality::<ndarray::Ix4>()
        .expect("expected 4D tensor")
}

impl Graph {
    /// 2D convolution. `x (n,c,h,w)`, `w (o,c,kh,kw)`, optional bias `(o)`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Var {
        let xv = to4(self.value(x));
        let wv = to4(self.value(w));
        let (n, c, h, wd) = xv.dim();
        let (o, wc, kh, kw) = wv.dim();
        assert_eq!(c, wc, "conv2d channel mismatch");
        let (sh, sw) = stride;
        let (ph, pw) = pad;
        let oh = conv_out(h, kh, sh, ph);
        let ow = conv_out(wd, kw, sw, pw);

        let cols = im2col(&xv, kh, kw, sh, sw, ph, pw, oh, ow);
        let wmat = wv.into_shape((o, c * kh * kw)).unwrap();
        let out_mat = wmat.dot(&cols); // (o, n*oh*ow)
        let mut out = Array4::<f64>::zeros((n, o, oh, ow));
        for oi_ch in 0..o {
            for bi in 0..n {
                for i in 0..oh {
                    for j in 0..ow {
                        out[[bi, oi_ch, i, j]] = out_mat[[oi_ch, (bi * oh + i) * ow + j]];
                    }
                }
            }
        }
        if let Some(bias) = b {
            let bv = self.value(bias).to_owned().into_shape(o).unwrap();
            for (k, mut ch) in out.axis_iter_mut(Axis(1)).enumerate() {
                ch.mapv_inplace(|t| t + bv[k]);
            }
        }

        let mut parents = vec![x.idx, w.idx];
        if let Some(bias) = b {
            parents.push(bias.idx);
        }
        let has_bias = b.is_some();
        self.push(
            out.into_dyn(),
            parents,
            Some(Box::new(move |_, g, p| {
                let xv = to4(p[0]);
                let wv = to4(p[1]);
                let g4 = to4(g);
                let (n, c, h, wd) = xv.dim();
                let (o, _, kh, kw) = wv.dim();
                let mut g_mat = Array2::<f64>::zeros((o, n * oh * ow));
                for oi_ch in 0..o {
                    for bi in 0..n {
                        for i in 0..oh {
                            for j in 0..ow {
                                g_mat[[oi_ch, (bi * oh + i) * ow + j]] = g4[[bi, oi_ch, i, j]];
                            }
                        }
                    }
                }
                let cols = im2col(&xv, kh, kw, sh, sw, ph, pw, oh, ow);
                let wmat = wv.to_owned().into_shape((o, c * kh * kw)).unwrap();
                let dw = g_mat
                    .dot(&cols.t())
                    .into_shape((o, c, kh, kw))
                    .unwrap()
                    .into_dyn();
                let dcols = wmat.t().dot(&g_mat);
                let dx = col2im(&dcols, n, c, h, wd, kh, kw, sh, sw, ph, pw, oh, ow).into_dyn();
                let mut grads = vec![dx, dw];
                if has_bias {
                    let db: Array1<f64> = g_mat.sum_axis(Axis(1));
                    grads.push(db.into_dyn());
                }
                grads
            })),
        )
    }

    /// Max pooling with window `k` and stride `s` over `(n,c,h,w)`.
    pub fn maxpool2d(&mut self, x: Var, k: (usize, usize), s: (usize, usize)) -> Var {
        let xv = to4(self.value(x));
        let (n, c, h, w) = xv.dim();
        let oh = conv_out(h, k.0, s.0, 0);
        let ow = conv_out(w, k.1, s.1, 0);
        let mut out = Array4::<f64>::zeros((n, c, oh, ow));
        let mut arg = vec![0usize; n * c * oh * ow];
        for bi in 0..n {
            for ci in 0..c {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = 0usize;
                        for ki in 0..k.0 {
                            for kj in 0..k.1 {
                                let (ii, jj) = (oi * s.0 + ki, oj * s.1 + kj);
                                let v = xv[[bi, ci, ii, jj]];
                                if v > best {
                                    best = v;
                                    best_at = ii * w + jj;
                                }
                            }
                        }
                        out[[bi, ci, oi, oj]] = best;
                        arg[((bi * c + ci) * oh + oi) * ow + oj] = best_at;
                    }
                }
            }
        }
        self.push(
            out.into_dyn(),
            vec![x.idx],
            Some(Box::new(move |_, g, p| {
                let g4 = to4(g);
                let mut dx = ArrayD::zeros(p[0].raw_dim());
                for bi in 0..n {
                    for ci in 0..c {
                        for oi in 0..oh {
                            for oj in 0..ow {
                                let at = arg[((bi * c + ci) * oh + oi) * ow + oj];
                                dx[[bi, ci, at / w, at % w]] += g4[[bi, ci, oi, oj]];
                            }
                        }
                    }
                }
                vec![dx]
            })),
        )
    }

    /// Mean over the spatial axes: `(n,c,h,w) -> (n,c)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.ndim(), 4, "global_avg_pool needs 4D");
        let (h, w) = (xv.shape()[2], xv.shape()[3]);
        let m = (h * w) as f64;
        let v = xv.sum_axis(Axis(3)).sum_axis(Axis(2)).mapv(|t| t / m);
        self.push(
            v,
            vec![x.idx],
            Some(Box::new(move |_, g, p| {
                let scaled = g.mapv(|t| t / m);
                let e = scaled.insert_axis(Axis(2)).insert_axis(Axis(3));
                vec![e.broadcast(p[0].raw_dim()).unwrap().to_owned()]
            })),
        )
    }

    /// Batch normalization in training mode: normalizes with the batch
    /// statistics and returns them so the caller can update running buffers.
    /// `x (n,c,h,w)`, `gamma (c)`, `beta (c)`; variance is the biased estimate.
    pub fn batchnorm2d_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> (Var, Array1<f64>, Array1<f64>) {
        let xv = to4(self.value(x));
        let (n, c, h, w) = xv.dim();
        let m = (n * h * w) as f64;
        let mut mean = Array1::<f64>::zeros(c);
        let mut var = Array1::<f64>::zeros(c);
        for ci in 0..c {
            let ch = xv.index_axis(Axis(1), ci);
            let mu = ch.sum() / m;
            mean[ci] = mu;
            var[ci] = ch.fold(0.0, |acc, &t| acc + (t - mu) * (t - mu)) / m;
        }
        let gv = self.value(gamma).to_owned().into_shape(c).unwrap();
        let bv = self.value(beta).to_owned().into_shape(c).unwrap();
        let mut out = Array4::<f64>::zeros((n, c, h, w));
        for ci in 0..c {
            let inv_std = 1.0 / (var[ci] + eps).sqrt();
            let (mu, ga, be) = (mean[ci], gv[ci], bv[ci]);
            for bi in 0..n {
                for i in 0..h {
                    for j in 0..w {
                        out[[bi, ci, i, j]] = ga * (xv[[bi, ci, i, j]] - mu) * inv_std + be;
                    }
                }
            }
        }
        let (mean_c, var_c) = (mean.clone(), var.clone());
        let v = self.push(
            out.into_dyn(),
            vec![x.idx, gamma.idx, beta.idx],
            Some(Box::new(move |_, g, p| {
                let xv = to4(p[0]);
                let gv = p[1].to_owned().into_shape(c).unwrap();
                let g4 = to4(g);
                let mut dx = Array4::<f64>::zeros((n, c, h, w));
                let mut dgamma = Array1::<f64>::zeros(c);
                let mut dbeta = Array1::<f64>::zeros(c);
                for ci in 0..c {
                    let inv_std = 1.0 / (var_c[ci] + eps).sqrt();
                    let mu = mean_c[ci];
                    // Per-channel sums of g and g*xhat feed the standard
                    // batch-norm input gradient:
                    // dx = gamma*inv_std*(g - mean(g) - xhat*mean(g*xhat)).
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for bi in 0..n {
                        for i in 0..h {
                            for j in 0..w {
                                let xh = (xv[[bi, ci, i, j]] - mu) * inv_std;
                                let gg = g4[[bi, ci, i, j]];
                                sum_g += gg;
                                sum_gx += gg * xh;
                            }
                        }
                    }
                    dgamma[ci] = sum_gx;
                    dbeta[ci] = sum_g;
                    let (mg, mgx) = (sum_g / m, sum_gx / m);
                    let ga = gv[ci];
                    for bi in 0..n {
                        for i in 0..h {
                            for j in 0..w {
                                let xh = (xv[[bi, ci, i, j]] - mu) * inv_std;
                                dx[[bi, ci, i, j]] =
                                    ga * inv_std * (g4[[bi, ci, i, j]] - mg - xh * mgx);
                            }
                        }
                    }
                }
                vec![dx.into_dyn(), dgamma.into_dyn(), dbeta.into_dyn()]
            })),
        );
        (v, mean, var)
    }

    /// Batch normalization in inference mode, using stored running statistics.
    pub fn batchnorm2d_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Array1<f64>,
        running_var: &Array1<f64>,
        eps: f64,
    ) -> Var {
        let xv = to4(self.value(x));
        let (n, c, h, w) = xv.dim();
        let gv = self.value(gamma).to_owned().into_shape(c).unwrap();
        let bv = self.value(beta).to_owned().into_shape(c).unwrap();
        let mut out = Array4::<f64>::zeros((n, c, h, w));
        for ci in 0..c {
            let inv_std = 1.0 / (running_var[ci] + eps).sqrt();
            let (mu, ga, be) = (running_mean[ci], gv[ci], bv[ci]);
            for bi in 0..n {
                for i in 0..h {
                    for j in 0..w {
                        out[[bi, ci, i, j]] = ga * (xv[[bi, ci, i, j]] - mu) * inv_std + be;
                    }
                }
            }
        }
        let mean_c = running_mean.clone();
        let var_c = running_var.clone();
        self.push(
            out.into_dyn(),
            vec![x.idx, gamma.idx, beta.idx],
            Some(Box::new(move |_, g, p| {
                let xv = to4(p[0]);
                let gv = p[1].to_owned().into_shape(c).unwrap();
                let g4 = to4(g);
                let mut dx = Array4::<f64>::zeros((n, c, h, w));
                let mut dgamma = Array1::<f64>::zeros(c);
                let mut dbeta = Array1::<f64>::zeros(c);
                for ci in 0..c {
                    let inv_std = 1.0 / (var_c[ci] + eps).sqrt();
                    let mu = mean_c[ci];
                    let ga = gv[ci];
                    for bi in 0..n {
                        for i in 0..h {
                            for j in 0..w {
                                let gg = g4[[bi, ci, i, j]];
                                dx[[bi, ci, i, j]] = gg * ga * inv_std;
                                dgamma[ci] += gg * (xv[[bi, ci, i, j]] - mu) * inv_std;
                                dbeta[ci] += gg;
                            }
                        }
                    }
                }
                vec![dx.into_dyn(), dgamma.into_dyn(), dbeta.into_dyn()]
            })),
        )
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by
    /// `1/(1-p)`. Identity when `train` is false or `p == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, train: bool, rng: &mut R) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout p must be in [0,1)");
        if !train || p == 0.0 {
            return self.identity(x);
        }
        let keep = 1.0 - p;
        let mask = self
            .value(x)
            .mapv(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / keep });
        let v = self.value(x) * &mask;
        self.push(
            v,
            vec![x.idx],
            Some(Box::new(move |_, g, _| vec![g * &mask])),
        )
    }

    /// Pass-through node (keeps op structure uniform where a branch may or
    /// may not apply dropout).
    pub fn identity(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.push(v, vec![x.idx], Some(Box::new(|_, g, _| vec![g.clone()])))
    }

    /// Fully connected layer: `x (n,d_in) * w (d_in,d_out) + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_rows(xw, b)
    }

    /// Normalize each row of `x (n,d)` to unit L2 norm (plus `eps` under the
    /// square root for stability at zero).
    pub fn l2_normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let sq = self.mul(x, x);
        let ss = self.sum_axis(sq, 1);
        let ss_eps = self.add_scalar(ss, eps);
        let norm = self.sqrt(ss_eps);
        let inv = self.recip(norm);
        self.scale_axis0(x, inv)
    }
}
