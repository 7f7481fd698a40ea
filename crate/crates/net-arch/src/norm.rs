//! Batch-normalization parameter bundle shared by the conv backbones.

use crate::{init, ArchError, BN_EPS, BN_MOMENTUM};
use autodiff::{Graph, ParamId, ParamStore, Var};
use ndarray::{Array1, Ix1};

#[derive(Clone, Debug)]
pub(crate) struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub run_mean: ParamId,
    pub run_var: ParamId,
}

pub(crate) fn register_bn(store: &mut ParamStore, name: &str, channels: usize) -> BnParams {
    BnParams {
        gamma: store.add_param(&format!("{name}.gamma"), init::ones(&[channels])),
        beta: store.add_param(&format!("{name}.beta"), init::zeros(&[channels])),
        run_mean: store.add_buffer(&format!("{name}.run_mean"), init::zeros(&[channels])),
        run_var: store.add_buffer(&format!("{name}.run_var"), init::ones(&[channels])),
    }
}

fn buffer_1d(store: &ParamStore, id: ParamId) -> Result<Array1<f64>, ArchError> {
    store
        .value(id)
        .clone()
        .into_dimensionality::<Ix1>()
        .map_err(|e| ArchError::Shape(e.to_string()))
}

/// Normalize `x (n,c,h,w)`. Training mode uses batch statistics and queues
/// exponential running updates (momentum 0.1, unbiased variance) on the
/// graph; the caller applies them after the optimizer step. Eval mode reads
/// the stored running statistics, so it is a pure function of `x`.
pub(crate) fn bn_forward(
    g: &mut Graph,
    store: &ParamStore,
    bn: &BnParams,
    x: Var,
    train: bool,
) -> Result<Var, ArchError> {
    let gamma = g.param(store, bn.gamma);
    let beta = g.param(store, bn.beta);
    if !train {
        let rm = buffer_1d(store, bn.run_mean)?;
        let rv = buffer_1d(store, bn.run_var)?;
        return Ok(g.batchnorm2d_eval(x, gamma, beta, &rm, &rv, BN_EPS));
    }
    let shape = g.value(x).shape().to_vec();
    let count = (shape[0] * shape[2] * shape[3]) as f64;
    let (out, mean, var) = g.batchnorm2d_train(x, gamma, beta, BN_EPS);
    let unbiased = if count > 1.0 {
        var.mapv(|v| v * count / (count - 1.0))
    } else {
        var.clone()
    };
    let old_mean = buffer_1d(store, bn.run_mean)?;
    let old_var = buffer_1d(store, bn.run_var)?;
    let new_mean = &old_mean * (1.0 - BN_MOMENTUM) + &mean * BN_MOMENTUM;
    let new_var = &old_var * (1.0 - BN_MOMENTUM) + &unbiased * BN_MOMENTUM;
    g.queue_buffer_update(bn.run_mean, new_mean.into_dyn());
    g.queue_buffer_update(bn.run_var, new_var.into_dyn());
    Ok(out)
}
