//! Contrastive predictive coding stack over raw feature grids.
//!
//! A `(F, T)` grid is cut into `W = floor(T/w)` non-overlapping windows.
//! Each window is embedded by a small MLP, a gated recurrent unit summarizes
//! the first `anchor` windows into a context vector, and per-horizon linear
//! predictors map the context to guesses of the next `K_p` window
//! embeddings. Both true and predicted embeddings pass through a shared
//! linear projection; the contrastive loss lives elsewhere and consumes the
//! projected pairs.

use crate::heads::LinearLayer;
use crate::{init, ArchError};
use autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use ndarray::{Array2, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpcSpec {
    /// Rows of the feature grid the stack is built for.
    pub in_features: usize,
    /// Window length in timesteps.
    pub window: usize,
    pub enc_dim: usize,
    pub ctx_dim: usize,
    /// Number of future windows predicted from the context.
    pub k_p: usize,
    pub proj_dim: usize,
    pub temperature: f64,
    /// Minimum number of context windows before the anchor.
    pub w_min: usize,
    /// Per-sample probability that masking is applied at all.
    pub mask_prob: f64,
    /// Fraction of timesteps zeroed within each window when masking applies
    /// (count rounded to nearest, halves away from zero).
    pub mask_ratio: f64,
}

impl CpcSpec {
    pub fn paper(in_features: usize) -> Self {
        CpcSpec {
            in_features,
            window: 10,
            enc_dim: 256,
            ctx_dim: 512,
            k_p: 9,
            proj_dim: 256,
            temperature: 0.07,
            w_min: 8,
            mask_prob: 0.5,
            mask_ratio: 0.15,
        }
    }

    /// Shrunk dims for small synthetic grids; same window geometry.
    pub fn desk(in_features: usize) -> Self {
        CpcSpec {
            in_features,
            window: 10,
            enc_dim: 32,
            ctx_dim: 48,
            k_p: 4,
            proj_dim: 24,
            temperature: 0.07,
            w_min: 8,
            mask_prob: 0.5,
            mask_ratio: 0.15,
        }
    }

    pub fn num_windows(&self, t_len: usize) -> usize {
        t_len / self.window
    }

    /// Valid anchors (number of context windows consumed) for a grid of
    /// `t_len` timesteps: `w_min ..= W - k_p`.
    pub fn anchor_range(&self, t_len: usize) -> Result<(usize, usize), ArchError> {
        let w = self.num_windows(t_len);
        let needed = self.w_min + self.k_p;
        if w < needed {
            return Err(ArchError::SampleTooShort { windows: w, needed });
        }
        Ok((self.w_min, w - self.k_p))
    }

    pub fn register<R: Rng>(&self, store: &mut ParamStore, prefix: &str, rng: &mut R) -> CpcStack {
        let flat = self.in_features * self.window;
        let enc1 = LinearLayer::register(store, &format!("{prefix}.enc1"), flat, self.enc_dim, rng);
        let enc2 = LinearLayer::register(
            store,
            &format!("{prefix}.enc2"),
            self.enc_dim,
            self.enc_dim,
            rng,
        );
        let gru = GruParams::register(store, &format!("{prefix}.gru"), self.enc_dim, self.ctx_dim, rng);
        let predictors = (0..self.k_p)
            .map(|k| {
                LinearLayer::register(
                    store,
                    &format!("{prefix}.pred{k}"),
                    self.ctx_dim,
                    self.enc_dim,
                    rng,
                )
            })
            .collect();
        let proj = LinearLayer::register(
            store,
            &format!("{prefix}.proj"),
            self.enc_dim,
            self.proj_dim,
            rng,
        );
        CpcStack {
            spec: self.clone(),
            enc1,
            enc2,
            gru,
            predictors,
            proj,
        }
    }
}

#[derive(Clone, Debug)]
struct GruParams {
    w_z: ParamId,
    u_z: ParamId,
    b_z: ParamId,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_n: ParamId,
    u_n: ParamId,
    b_n: ParamId,
}

impl GruParams {
    fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        ctx_dim: usize,
        rng: &mut R,
    ) -> Self {
        // 1/sqrt(fan-in) keeps the recurrence away from gate saturation.
        let gate = |store: &mut ParamStore, rng: &mut R, g: &str| {
            let w = store.add_param(
                &format!("{name}.w_{g}"),
                init::normal_tensor(rng, &[in_dim, ctx_dim], (1.0 / in_dim as f64).sqrt()),
            );
            let u = store.add_param(
                &format!("{name}.u_{g}"),
                init::normal_tensor(rng, &[ctx_dim, ctx_dim], (1.0 / ctx_dim as f64).sqrt()),
            );
            let b = store.add_param(&format!("{name}.b_{g}"), init::zeros(&[ctx_dim]));
            (w, u, b)
        };
        let (w_z, u_z, b_z) = gate(store, rng, "z");
        let (w_r, u_r, b_r) = gate(store, rng, "r");
        let (w_n, u_n, b_n) = gate(store, rng, "n");
        GruParams {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_n,
            u_n,
            b_n,
        }
    }
}

/// Outputs of one encoding pass, all on the tape. `future[k]` and
/// `predicted[k]` are the projected true and guessed embeddings of window
/// `anchor + k`, shape `(1, proj_dim)` each; `context` is `(1, ctx_dim)`.
pub struct CpcEncoding {
    pub context: Var,
    pub future: Vec<Var>,
    pub predicted: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct CpcStack {
    spec: CpcSpec,
    enc1: LinearLayer,
    enc2: LinearLayer,
    gru: GruParams,
    predictors: Vec<LinearLayer>,
    proj: LinearLayer,
}

impl CpcStack {
    pub fn spec(&self) -> &CpcSpec {
        &self.spec
    }

    /// Window-masking augmentation: with probability `mask_prob` zero a
    /// uniformly chosen `mask_ratio` share of timesteps inside every full
    /// window. Returns the input untouched when the per-sample draw says no.
    pub fn mask_input<R: Rng>(&self, x: &Array2<f64>, rng: &mut R) -> Array2<f64> {
        let mut out = x.clone();
        if rng.gen::<f64>() >= self.spec.mask_prob {
            return out;
        }
        let w = self.spec.window;
        let n_mask = (self.spec.mask_ratio * w as f64).round() as usize;
        if n_mask == 0 {
            return out;
        }
        let windows = self.spec.num_windows(x.ncols());
        for wi in 0..windows {
            let mut offsets: Vec<usize> = (0..w).collect();
            for i in 0..n_mask {
                let j = rng.gen_range(i..w);
                offsets.swap(i, j);
            }
            for &dt in &offsets[..n_mask] {
                let col = wi * w + dt;
                for f in 0..x.nrows() {
                    out[(f, col)] = 0.0;
                }
            }
        }
        out
    }

    fn window_embedding(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        data: &Array2<f64>,
        wi: usize,
    ) -> Var {
        let w = self.spec.window;
        let f = self.spec.in_features;
        let mut flat = Tensor::zeros(IxDyn(&[1, f * w]));
        for fi in 0..f {
            for dt in 0..w {
                flat[IxDyn(&[0, fi * w + dt])] = data[(fi, wi * w + dt)];
            }
        }
        let leaf = g.leaf(flat);
        let h = self.enc1.forward(g, store, leaf);
        let h = g.relu(h);
        self.enc2.forward(g, store, h)
    }

    fn gru_step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var) -> Var {
        let gate = |g: &mut Graph, w, u, b, x, h| {
            let xw = g.param(store, w);
            let uw = g.param(store, u);
            let bw = g.param(store, b);
            let xp = g.matmul(x, xw);
            let hp = g.matmul(h, uw);
            let s = g.add(xp, hp);
            g.add_rows(s, bw)
        };
        let zs = gate(g, self.gru.w_z, self.gru.u_z, self.gru.b_z, x, h);
        let z = g.sigmoid(zs);
        let rs = gate(g, self.gru.w_r, self.gru.u_r, self.gru.b_r, x, h);
        let r = g.sigmoid(rs);

        let xw = g.param(store, self.gru.w_n);
        let uw = g.param(store, self.gru.u_n);
        let bw = g.param(store, self.gru.b_n);
        let xn = g.matmul(x, xw);
        let hn = g.matmul(h, uw);
        let rhn = g.mul(r, hn);
        let ns = g.add(xn, rhn);
        let ns = g.add_rows(ns, bw);
        let n = g.tanh(ns);

        // h' = (1 - z) * n + z * h
        let nz = g.neg(z);
        let omz = g.add_scalar(nz, 1.0);
        let a = g.mul(omz, n);
        let b = g.mul(z, h);
        g.add(a, b)
    }

    /// Encode one `(F, T)` grid at the given anchor. The context summarizes
    /// windows `0..anchor`; true and predicted embeddings cover windows
    /// `anchor..anchor+k_p`. Pass a masking RNG to apply the augmentation;
    /// `None` encodes the grid as-is.
    pub fn encode<R: Rng>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: &Array2<f64>,
        anchor: usize,
        mask_rng: Option<&mut R>,
    ) -> Result<CpcEncoding, ArchError> {
        if x.nrows() != self.spec.in_features {
            return Err(ArchError::Shape(format!(
                "grid has {} feature rows, stack expects {}",
                x.nrows(),
                self.spec.in_features
            )));
        }
        let (lo, hi) = self.spec.anchor_range(x.ncols())?;
        if anchor < lo || anchor > hi {
            return Err(ArchError::Shape(format!(
                "anchor {anchor} outside valid range {lo}..={hi}"
            )));
        }
        let data = match mask_rng {
            Some(rng) => self.mask_input(x, rng),
            None => x.clone(),
        };

        let mut h = g.leaf(Tensor::zeros(IxDyn(&[1, self.spec.ctx_dim])));
        for wi in 0..anchor {
            let e = self.window_embedding(g, store, &data, wi);
            h = self.gru_step(g, store, e, h);
        }

        let mut future = Vec::with_capacity(self.spec.k_p);
        let mut predicted = Vec::with_capacity(self.spec.k_p);
        for k in 0..self.spec.k_p {
            let z_e = self.window_embedding(g, store, &data, anchor + k);
            future.push(self.proj.forward(g, store, z_e));
            let guess = self.predictors[k].forward(g, store, h);
            predicted.push(self.proj.forward(g, store, guess));
        }
        Ok(CpcEncoding {
            context: h,
            future,
            predicted,
        })
    }
}
