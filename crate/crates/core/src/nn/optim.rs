use super::params::ParamStore;
use crate::error::{Error, Result};

/// Plain gradient descent: `theta -= lr * grad` for every entry.
///
/// Gradients are left untouched. Fails without modifying anything when a
/// gradient is not finite.
pub fn sgd_step(store: &mut ParamStore, lr: f64) -> Result<()> {
    for e in store.entries() {
        if let Some(k) = e.grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in parameter {} at index {k}", e.name)));
        }
    }
    for e in store.entries_mut() {
        for (v, g) in e.values.iter_mut().zip(&e.grads) {
            *v -= lr * g;
        }
    }
    Ok(())
}
