//! Central finite-difference gradient checking.
//!
//! The checker rebuilds the forward graph from fresh untracked leaves for
//! every perturbation, so it exercises only forward evaluation and stays
//! independent of the backward rules it verifies.

use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// One named leaf group for a gradient check.
pub type Seed = (Vec<usize>, Vec<f64>);

/// Max relative error between analytic gradients (via `backward`) and central
/// finite differences over every element of every seed. `f` must build the
/// scalar loss from the given leaves.
pub fn fd_max_rel_err(
    f: &dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
    seeds: &[Seed],
    h: f64,
) -> Result<f64> {
    let leaves: Vec<Tensor<f64>> = seeds
        .iter()
        .map(|(s, d)| {
            Tensor::from_vec(s.clone(), d.clone())
                .unwrap()
                .requires_grad()
        })
        .collect();
    let loss = f(&leaves)?;
    loss.backward()?;

    let mut worst = 0.0f64;
    for (i, (_, data)) in seeds.iter().enumerate() {
        let analytic = match leaves[i].grad() {
            Some(g) => g,
            // leaf unreachable from the loss: numeric side must agree it is zero
            None => vec![0.0; data.len()],
        };
        for j in 0..data.len() {
            let eval = |delta: f64| -> Result<f64> {
                let perturbed: Vec<Tensor<f64>> = seeds
                    .iter()
                    .enumerate()
                    .map(|(k, (s, d))| {
                        let mut d = d.clone();
                        if k == i {
                            d[j] += delta;
                        }
                        Tensor::from_vec(s.clone(), d).unwrap()
                    })
                    .collect();
                Ok(f(&perturbed)?.item())
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    Ok(worst)
}

/// Relative where gradients are O(1), absolute-ish near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}
