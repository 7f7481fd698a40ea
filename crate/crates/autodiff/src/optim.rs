//! Optimizers over a [`ParamStore`]. State is indexed by slot position, so
//! stepping order (and therefore every training run) is deterministic.

use crate::{ParamStore, SlotKind, Tensor};
use ndarray::ArrayD;

/// Adam with optional decoupled-free (classic L2-in-gradient) weight decay.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let n = store.len();
        self.m.resize_with(n, || None);
        self.v.resize_with(n, || None);
        for id in store.ids().collect::<Vec<_>>() {
            if store.kind(id) != SlotKind::Param || !store.is_trainable(id) {
                continue;
            }
            let i = id.index();
            let mut g = store.grad(id).clone();
            if self.weight_decay != 0.0 {
                g = &g + &store.value(id).mapv(|w| self.weight_decay * w);
            }
            let m = self
                .m[i]
                .get_or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            *m = m.mapv(|x| x * self.beta1) + &g.mapv(|x| x * (1.0 - self.beta1));
            let v = self
                .v[i]
                .get_or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            *v = v.mapv(|x| x * self.beta2) + &g.mapv(|x| x * x * (1.0 - self.beta2));
            let m_hat = m.mapv(|x| x / bc1);
            let v_hat = v.mapv(|x| x / bc2);
            let step = ndarray::Zip::from(&m_hat)
                .and(&v_hat)
                .map_collect(|&mh, &vh| self.lr * mh / (vh.sqrt() + self.eps));
            let new = store.value(id) - &step;
            store.set_value(id, new);
        }
    }
}

/// SGD with classical momentum and L2 weight decay folded into the gradient.
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    vel: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            vel: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        let n = store.len();
        self.vel.resize_with(n, || None);
        for id in store.ids().collect::<Vec<_>>() {
            if store.kind(id) != SlotKind::Param || !store.is_trainable(id) {
                continue;
            }
            let i = id.index();
            let mut g = store.grad(id).clone();
            if self.weight_decay != 0.0 {
                g = &g + &store.value(id).mapv(|w| self.weight_decay * w);
            }
            let update = if self.momentum != 0.0 {
                let v = self
                    .vel[i]
                    .get_or_insert_with(|| ArrayD::zeros(g.raw_dim()));
                *v = v.mapv(|x| x * self.momentum) + &g;
                v.clone()
            } else {
                g
            };
            let new = store.value(id) - &update.mapv(|x| x * self.lr);
            store.set_value(id, new);
        }
    }
}
