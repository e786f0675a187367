use super::forward::{batch_loss, loss_and_grad};
use super::store::ParamStore;
use crate::error::{Error, Result};
use crate::numkernel::Rng;

/// Outcome of a central-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(flat index, analytic, finite-difference)` per sampled parameter.
    pub samples: Vec<(usize, f64, f64)>,
}

/// Compare analytic gradients of the mean batch NLL against central differences
/// on `n_samples` parameters drawn uniformly from the canonical order.
///
/// Error per parameter is `|g − g_fd| / (|g_fd| + 1e-12)`.
pub fn grad_check(params: &ParamStore, batch: &[Vec<u32>], h: f64, n_samples: usize, seed: u64) -> Result<GradCheck> {
    let (_, grads) = loss_and_grad(params, batch)?;
    let mut rng = Rng::new(seed).split("gradcheck");
    let total = params.total_params();
    let picks = rand::seq::index::sample(&mut rng, total, n_samples.min(total)).into_vec();
    let mut probe = params.clone();
    let mut samples = Vec::with_capacity(picks.len());
    let mut max_rel = 0.0f64;
    for flat in picks {
        let orig = params.get_flat(flat);
        probe.set_flat(flat, orig + h);
        let up = batch_loss(&probe, batch)?;
        probe.set_flat(flat, orig - h);
        let down = batch_loss(&probe, batch)?;
        probe.set_flat(flat, orig);
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numeric("grad_check", "non-finite loss under finite difference"));
        }
        let fd = (up - down) / (2.0 * h);
        let analytic = grads.get_flat(params, flat);
        let rel = (analytic - fd).abs() / (fd.abs() + 1e-12);
        max_rel = max_rel.max(rel);
        samples.push((flat, analytic, fd));
    }
    Ok(GradCheck { max_rel_error: max_rel, samples })
}
