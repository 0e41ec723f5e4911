use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Worst `|analytic - numeric| / max(1, |numeric|)` over the checked
/// elements of one parameter entry.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockError {
    pub name: String,
    pub worst: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.blocks.iter().map(|b| b.worst).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.worst() <= tolerance
    }
}

/// Compares tape gradients of the scalar produced by `forward` against
/// central differences with step `step`.
///
/// `max_per_block` limits how many elements of each entry are perturbed;
/// the chosen elements are evenly spaced so the first and last are always
/// included. `forward` must be deterministic.
pub fn grad_check<F>(
    forward: F,
    store: &mut ParamStore,
    step: f64,
    max_per_block: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = forward(store, &mut tape)?;
    tape.backward(loss, 1.0, store)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = forward(s, &mut t)?;
        Ok(t.scalar(l))
    };

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.entry(id).len();
        let picks: Vec<usize> = match max_per_block {
            Some(m) if m < n && m > 1 => (0..m).map(|k| k * (n - 1) / (m - 1)).collect(),
            Some(1) if n > 1 => vec![0],
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for &k in &picks {
            let orig = store.values(id)[k];
            store.entry_mut(id).values[k] = orig + step;
            let plus = eval(store)?;
            store.entry_mut(id).values[k] = orig - step;
            let minus = eval(store)?;
            store.entry_mut(id).values[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = store.grads(id)[k];
            worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1.0));
        }
        report.blocks.push(BlockError { name: store.entry(id).name.clone(), worst, checked: picks.len() });
    }
    Ok(report)
}
