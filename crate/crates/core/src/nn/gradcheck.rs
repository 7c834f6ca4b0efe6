//! Central finite-difference verification of analytic gradients.
//!
//! Coordinates whose perturbation flips a ReLU sign or a max-pool winner are
//! skipped and counted: the loss is only piecewise smooth, and a difference
//! quotient straddling a kink does not estimate the derivative.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{Matrix, ParamSet};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    /// Step size of the central difference.
    pub h: f64,
    /// Entries checked per tensor; `None` checks every entry.
    pub per_tensor: Option<usize>,
    /// Random whole-parameter-vector directions checked in addition to coordinates.
    pub directions: usize,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { h: 1e-5, per_tensor: None, directions: 4, floor: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_directional_rel_err: f64,
}

impl GradcheckReport {
    pub fn merge(&mut self, other: &GradcheckReport) {
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst.clone();
        }
        self.max_directional_rel_err = self.max_directional_rel_err.max(other.max_directional_rel_err);
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
    }

    pub fn overall(&self) -> f64 {
        self.max_rel_err.max(self.max_directional_rel_err)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` (indexed by parameter id) against central differences of `eval`,
/// which returns the loss and the kink signature of its forward pass.
pub fn gradcheck<F>(
    params: &ParamSet,
    analytic: &[Option<Matrix>],
    mut eval: F,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport>
where
    F: FnMut(&ParamSet) -> Result<(f64, u64)>,
{
    let (_, base_sig) = eval(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradcheckReport::default();
    let mut work = params.clone();
    let ids: Vec<_> = params.trainable_ids().collect();

    for &id in &ids {
        let n = params.get(id).len();
        let entries: Vec<usize> = match opts.per_tensor {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for e in entries {
            let orig = params.get(id).data()[e];
            work.get_mut(id).data_mut()[e] = orig + opts.h;
            let (fp, sp) = eval(&work)?;
            work.get_mut(id).data_mut()[e] = orig - opts.h;
            let (fm, sm) = eval(&work)?;
            work.get_mut(id).data_mut()[e] = orig;
            if sp != base_sig || sm != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * opts.h);
            let a = analytic.get(id.0).and_then(|g| g.as_ref()).map_or(0.0, |g| g.data()[e]);
            let err = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = format!("{}[{e}]: analytic {a:e}, numeric {numeric:e}", params.name(id));
            }
        }
    }

    for _ in 0..opts.directions {
        let dirs: Vec<Vec<f64>> = ids
            .iter()
            .map(|&id| (0..params.get(id).len()).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let norm = dirs.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let shift = |work: &mut ParamSet, sign: f64| {
            for (&id, d) in ids.iter().zip(&dirs) {
                let base = params.get(id).data();
                for ((w, b), dv) in work.get_mut(id).data_mut().iter_mut().zip(base).zip(d) {
                    *w = b + sign * opts.h * dv / norm;
                }
            }
        };
        shift(&mut work, 1.0);
        let (fp, sp) = eval(&work)?;
        shift(&mut work, -1.0);
        let (fm, sm) = eval(&work)?;
        shift(&mut work, 0.0);
        if sp != base_sig || sm != base_sig {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * opts.h);
        let a: f64 = ids
            .iter()
            .zip(&dirs)
            .map(|(&id, d)| match analytic.get(id.0).and_then(|g| g.as_ref()) {
                Some(g) => g.data().iter().zip(d).map(|(x, y)| x * y).sum::<f64>() / norm,
                None => 0.0,
            })
            .sum();
        report.checked += 1;
        report.max_directional_rel_err =
            report.max_directional_rel_err.max(relative_error(a, numeric, opts.floor));
    }
    Ok(report)
}
