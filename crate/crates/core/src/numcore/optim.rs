use super::param::ParamStore;
use super::real::Real;
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
/// `buf ← momentum·buf + (grad + weight_decay·value)`, `value ← value − lr·buf`.
/// Frozen parameters are skipped. Gradients are left for the caller to zero.
pub fn sgd_step<T: Real>(
    store: &mut ParamStore<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    let (lr, mu, wd) = (T::lit(lr), T::lit(momentum), T::lit(weight_decay));
    for p in store.iter_mut().filter(|p| !p.frozen) {
        let value = p.value.data_mut();
        let buf = p.momentum.data_mut();
        for ((v, b), &g) in value.iter_mut().zip(buf.iter_mut()).zip(p.grad.data()) {
            *b = mu * *b + (g + wd * *v);
            *v = *v - lr * *b;
        }
    }
    Ok(())
}
