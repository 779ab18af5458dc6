use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f64,
    /// Above this many coordinates, a uniform random subsample of this size is checked.
    pub max_coords: usize,
    /// Denominator floor for the relative error, so that gradients near zero
    /// are compared in absolute terms instead of amplifying round-off.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            max_coords: 10_000,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub coords_total: usize,
    /// `(tensor index, flat offset)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares analytic gradients of a scalar function against central differences.
///
/// `analytic[i]` must have the shape of `inputs[i]`. Every coordinate is
/// perturbed unless there are more than `cfg.max_coords`, in which case a
/// seeded subsample is used.
pub fn grad_check<F>(
    inputs: &[Tensor],
    analytic: &[Tensor],
    mut f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if inputs.len() != analytic.len() {
        return Err(Error::contract(format!(
            "grad_check: {} inputs but {} gradients",
            inputs.len(),
            analytic.len()
        )));
    }
    for (x, g) in inputs.iter().zip(analytic) {
        x.same_shape(g, "grad_check")?;
    }
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(t, x)| (0..x.len()).map(move |i| (t, i)))
        .collect();
    let total = coords.len();
    let chosen: Vec<(usize, usize)> = if total > cfg.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = sample(&mut rng, total, cfg.max_coords).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| coords[k]).collect()
    } else {
        coords
    };

    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: chosen.len(),
        coords_total: total,
        worst: None,
    };
    for &(t, i) in &chosen {
        let orig = work[t].data()[i];
        work[t].data_mut()[i] = orig + cfg.h;
        let plus = f(&work)?;
        work[t].data_mut()[i] = orig - cfg.h;
        let minus = f(&work)?;
        work[t].data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.h);
        let a = analytic[t].data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
        if !err.is_finite() {
            return Err(Error::numeric(format!(
                "grad_check: non-finite error at tensor {t}, index {i}"
            )));
        }
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((t, i));
        }
    }
    Ok(report)
}

/// Grad-checks a tensor-valued operation by contracting its output with a
/// fixed random upstream gradient, `L = Σ g ⊙ forward(inputs)`.
pub fn check_op<F, B>(
    inputs: &[Tensor],
    forward: F,
    backward: B,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
    B: Fn(&[Tensor], &Tensor) -> Result<Vec<Tensor>>,
{
    let y = forward(inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    let g = Tensor::new(
        y.shape(),
        (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let analytic = backward(inputs, &g)?;
    grad_check(inputs, &analytic, |t| forward(t)?.dot(&g), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_wrong_gradient() {
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let f = |t: &[Tensor]| Ok(t[0].data().iter().map(|v| v * v).sum::<f64>());
        let good = x.scale(2.0).unwrap();
        let bad = x.scale(2.1).unwrap();
        let cfg = GradCheckConfig::default();
        assert!(
            grad_check(&[x.clone()], &[good], f, &cfg)
                .unwrap()
                .max_rel_error
                < 1e-8
        );
        assert!(grad_check(&[x], &[bad], f, &cfg).unwrap().max_rel_error > 1e-2);
    }

    #[test]
    fn subsamples_large_inputs() {
        let x = Tensor::full(&[200, 60], 0.1);
        let g = Tensor::full(&[200, 60], 1.0);
        let cfg = GradCheckConfig {
            max_coords: 500,
            ..Default::default()
        };
        let rep = grad_check(&[x], &[g], |t| Ok(t[0].sum()), &cfg).unwrap();
        assert_eq!(rep.coords_checked, 500);
        assert_eq!(rep.coords_total, 12_000);
        assert!(rep.passed(1e-6));
    }
}
