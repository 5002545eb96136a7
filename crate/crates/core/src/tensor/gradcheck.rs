use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Params;
use crate::error::{Error, Result};

/// Compares analytic gradients against central finite differences on
/// randomly probed coordinates and returns the worst relative error,
/// with denominator `max(|analytic|, |numeric|, 1e-8)`.
///
/// `loss_fn` must be a deterministic function of the parameters (fix any
/// dropout seeds). Run this at `f64`; central differences are unreliable
/// at 32-bit.
pub fn finite_diff_check(
    loss_fn: &dyn Fn(&Params<f64>) -> f64,
    params: &Params<f64>,
    analytic: &Params<f64>,
    probe_count: usize,
    eps: f64,
    seed: u64,
) -> Result<f64> {
    assert!(eps > 0.0, "finite_diff_check: eps must be positive");
    let base = loss_fn(params);
    if !base.is_finite() {
        return Err(Error::NonFiniteLoss);
    }

    let total = params.total_elements();
    assert!(total > 0, "finite_diff_check: no parameters");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;

    for _ in 0..probe_count {
        let flat = rng.gen_range(0..total);
        let (entry_idx, offset) = locate(params, flat);
        let name = params.entries()[entry_idx].name.clone();

        let perturbed = |delta: f64| -> Result<f64> {
            let mut probe = params.clone();
            probe.get_mut(&name).data[offset] += delta;
            let loss = loss_fn(&probe);
            if loss.is_finite() {
                Ok(loss)
            } else {
                Err(Error::NonFiniteLoss)
            }
        };

        let numeric = (perturbed(eps)? - perturbed(-eps)?) / (2.0 * eps);
        let a = analytic.get(&name).data[offset];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

fn locate(params: &Params<f64>, mut flat: usize) -> (usize, usize) {
    for (i, entry) in params.entries().iter().enumerate() {
        if flat < entry.data.len() {
            return (i, flat);
        }
        flat -= entry.data.len();
    }
    unreachable!("flat index out of range");
}
