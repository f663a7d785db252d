//! Central finite-difference verification of taped gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{ParamSet, Tape, Var};

/// Minimum distance to a ReLU kink for a coordinate to be checked.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_near_kink: usize,
    /// `(tensor, index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Options for [`finite_diff_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub n_coords: usize,
    pub seed: u64,
    /// Floor of the relative-error denominator, multiplied by `max(1, |f|)`.
    /// Central differences of a loss `f` carry roundoff near `1e-11·|f|`, so
    /// coordinates with a vanishing gradient need a floor well above that.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            n_coords: 100,
            seed: 0,
            floor: 1e-6,
        }
    }
}

/// Compares the analytic gradient of `loss_fn` with
/// `(f(θ+ε) − f(θ−ε)) / 2ε` on sampled parameter coordinates.
///
/// Coordinates are drawn from those with a nonzero analytic gradient (topped
/// up with zero-gradient coordinates when fewer exist). A coordinate is
/// skipped when any recorded kink input sits within [`KINK_MARGIN`] of zero
/// and moves under the perturbation, or changes sign between `θ±ε`.
pub fn finite_diff_check<F>(params: &ParamSet, loss_fn: F, opts: GradCheckOptions) -> GradCheckReport
where
    F: Fn(&mut Tape<'_>) -> Var,
{
    assert!(opts.eps > 0.0, "eps must be positive");
    let (grads, base_kinks, f0) = {
        let mut tape = Tape::new(params);
        let out = loss_fn(&mut tape);
        (tape.backward(out), tape.kinks().to_vec(), tape.scalar(out))
    };
    let floor = opts.floor * f0.abs().max(1.0);

    let mut flat: Vec<(usize, usize)> = Vec::new();
    let mut zeros: Vec<(usize, usize)> = Vec::new();
    for (k, t) in grads.tensors.iter().enumerate() {
        for (i, g) in t.data.iter().enumerate() {
            if *g != 0.0 {
                flat.push((k, i));
            } else {
                zeros.push((k, i));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut coords: Vec<(usize, usize)> = if flat.len() > opts.n_coords {
        index::sample(&mut rng, flat.len(), opts.n_coords)
            .into_iter()
            .map(|i| flat[i])
            .collect()
    } else {
        flat.clone()
    };
    let need = opts.n_coords.saturating_sub(coords.len()).min(zeros.len());
    if need > 0 {
        coords.extend(index::sample(&mut rng, zeros.len(), need).into_iter().map(|i| zeros[i]));
    }

    let mut work = params.clone();
    let eval = |work: &ParamSet| -> (f64, Vec<f64>) {
        let mut tape = Tape::new(work);
        let out = loss_fn(&mut tape);
        (tape.scalar(out), tape.kinks().to_vec())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_near_kink: 0,
        worst: None,
    };
    for (k, i) in coords {
        let orig = work.get(k, i);
        work.set(k, i, orig + opts.eps);
        let (f_plus, kinks_plus) = eval(&work);
        work.set(k, i, orig - opts.eps);
        let (f_minus, kinks_minus) = eval(&work);
        work.set(k, i, orig);

        if crosses_kink(&base_kinks, &kinks_plus, &kinks_minus) {
            report.skipped_near_kink += 1;
            continue;
        }
        let numeric = (f_plus - f_minus) / (2.0 * opts.eps);
        let analytic = grads.get(k, i);
        let err = relative_error(analytic, numeric, floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((k, i, analytic, numeric));
        }
    }
    report
}

fn crosses_kink(base: &[f64], plus: &[f64], minus: &[f64]) -> bool {
    if base.len() != plus.len() || base.len() != minus.len() {
        return true;
    }
    base.iter().zip(plus).zip(minus).any(|((&b, &p), &m)| {
        let moved = p != b || m != b;
        (moved && b.abs() < KINK_MARGIN) || (p > 0.0) != (m > 0.0)
    })
}
