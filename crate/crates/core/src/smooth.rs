//! Perturbed argmax operators and their Monte-Carlo derivative estimators.
//!
//! Two hard solvers are smoothed here: the Heaviside step (an argmax over
//! `[0, 1]`) used for occupancy, and the argmax over the probability simplex
//! used for depth aggregation. For a hard solver `y*(theta)` and noise `Z`
//! with density `exp(-nu(z))`, the smoothed operator is
//! `y_eps(theta) = E[y*(theta + eps Z)]` and its derivatives are
//!
//! ```text
//! d/dtheta y_eps = E[(y*(theta + eps Z) - b) grad nu(Z)^T / eps]
//! d/deps   y_eps = E[(y*(theta + eps Z) - b) (grad nu(Z)^T Z - n) / eps]
//! ```
//!
//! with `b = 0` (plain estimator) or `b = y*(theta)` (control variate), and
//! `n` the dimension of `theta`. The baseline term has zero mean whenever
//! `E[grad nu(Z)] = 0` and `E[grad nu(Z)^T Z] = n`, which holds for the
//! Gaussian, Cauchy and Logistic priors.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self, sqrt};
use crate::priors::{NoisePrior, NoiseStream};
use crate::{Error, Result};

/// Lower clamp on occupancy inside the log barrier.
pub const OCCUPANCY_FLOOR: f64 = 1e-7;

/// Smoothing scales and priors for the two perturbed stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    /// Rasterization noise scale, in NDC units.
    pub sigma: f64,
    /// Aggregation noise scale, in inverse-depth units.
    pub gamma: f64,
    /// Log-barrier strength.
    pub alpha: f64,
    /// Monte-Carlo sample count.
    pub samples: usize,
    pub raster_prior: NoisePrior,
    pub agg_prior: NoisePrior,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self {
            sigma: 0.02,
            gamma: 0.02,
            alpha: 10.0,
            samples: 8,
            raster_prior: NoisePrior::Gaussian,
            agg_prior: NoisePrior::Gaussian,
        }
    }
}

impl SmoothingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidSmoothing("sigma must be finite and >= 0"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidSmoothing("gamma must be finite and >= 0"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidSmoothing("alpha must be > 0"));
        }
        if self.samples == 0 {
            return Err(Error::InvalidSmoothing("samples must be >= 1"));
        }
        Ok(())
    }

    /// The SoftRas-equivalent configuration: logistic occupancy, Gumbel
    /// aggregation.
    pub fn softras(sigma: f64, gamma: f64, alpha: f64) -> Self {
        Self {
            sigma,
            gamma,
            alpha,
            samples: 1,
            raster_prior: NoisePrior::Logistic,
            agg_prior: NoisePrior::Gumbel,
        }
    }
}

/// How an expectation is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Evaluation {
    Closed,
    MonteCarlo { samples: usize, stream: NoiseStream },
}

/// Monte-Carlo value and Jacobian of a perturbed optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedEstimate {
    /// `(1/M) sum y*(theta + eps Z_i)`.
    pub value: Vec<f64>,
    /// Row-major `rows x cols` Jacobian estimate.
    pub jacobian: Vec<f64>,
    /// Per-entry sample variance of the per-draw Jacobian terms.
    pub variance: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub samples: usize,
}

impl PerturbedEstimate {
    pub fn jacobian_at(&self, row: usize, col: usize) -> f64 {
        self.jacobian[row * self.cols + col]
    }

    /// Standard error of the Jacobian entry.
    pub fn std_error(&self, row: usize, col: usize) -> f64 {
        sqrt(self.variance[row * self.cols + col] / self.samples as f64)
    }
}

/// `H(x) = 0` for `x <= 0`, `1` otherwise.
#[inline]
pub fn hard_heaviside(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `H_sigma(x) = E[H(x + sigma X)]`.
pub fn smooth_heaviside(x: f64, sigma: f64, prior: NoisePrior, eval: Evaluation) -> Result<f64> {
    if sigma == 0.0 {
        return Ok(hard_heaviside(x));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidSmoothing("sigma must be >= 0"));
    }
    match eval {
        Evaluation::Closed => Ok(prior.step(x / sigma)),
        Evaluation::MonteCarlo { samples, stream } => {
            if samples == 0 {
                return Err(Error::InvalidSmoothing("samples must be >= 1"));
            }
            let hits: f64 = (0..samples as u32)
                .map(|k| {
                    let s = stream.at(k, stream.pixel, stream.face);
                    hard_heaviside(x + sigma * prior.sample(&s))
                })
                .sum();
            Ok(hits / samples as f64)
        }
    }
}

/// Index of the maximal score. Ties go to the smallest index, so the
/// background (last slot) loses every tie.
pub fn hard_simplex_argmax(scores: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s == f64::NEG_INFINITY {
            continue;
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i).ok_or(Error::AllScoresInfinite)
}

pub fn one_hot(len: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// Aggregation score of a single face: `z + ln(max(occupancy, floor)) / alpha`.
#[inline]
pub fn barrier_score(inv_depth: f64, occupancy: f64, alpha: f64) -> f64 {
    if occupancy == 1.0 {
        inv_depth
    } else {
        inv_depth + math::ln(occupancy.max(OCCUPANCY_FLOOR)) / alpha
    }
}

/// Scores for `m` faces plus the background slot.
///
/// `inv_depths` holds `m + 1` entries, the last one being the background
/// inverse depth, which carries no barrier term.
pub fn barrier_scores(inv_depths: &[f64], occupancy: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if inv_depths.len() != occupancy.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: occupancy.len() + 1,
            got: inv_depths.len(),
        });
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidSmoothing("alpha must be > 0"));
    }
    let m = occupancy.len();
    let mut out: Vec<f64> = inv_depths[..m]
        .iter()
        .zip(occupancy)
        .map(|(&z, &o)| barrier_score(z, o, alpha))
        .collect();
    out.push(inv_depths[m]);
    Ok(out)
}

/// `softmax(scores / temperature)`; `-inf` entries get weight 0.
pub fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = scores
        .iter()
        .map(|&s| {
            if s == f64::NEG_INFINITY {
                0.0
            } else {
                math::exp((s - max) / temperature)
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    w
}

/// `E[onehot(argmax(scores + gamma Z))]` with i.i.d. noise per coordinate.
pub fn smooth_simplex_argmax(
    scores: &[f64],
    gamma: f64,
    prior: NoisePrior,
    eval: Evaluation,
) -> Result<Vec<f64>> {
    let n = scores.len();
    if gamma == 0.0 {
        return Ok(one_hot(n, hard_simplex_argmax(scores)?));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidSmoothing("gamma must be >= 0"));
    }
    match eval {
        Evaluation::Closed => {
            if prior != NoisePrior::Gumbel {
                return Err(Error::NoClosedForm(prior));
            }
            hard_simplex_argmax(scores)?;
            Ok(softmax(scores, gamma))
        }
        Evaluation::MonteCarlo { samples, stream } => {
            if samples == 0 {
                return Err(Error::InvalidSmoothing("samples must be >= 1"));
            }
            let mut w = vec![0.0; n];
            let mut perturbed = vec![0.0; n];
            for k in 0..samples as u32 {
                for (j, p) in perturbed.iter_mut().enumerate() {
                    *p = scores[j] + gamma * prior.sample(&stream.at(k, stream.pixel, j as u32));
                }
                w[hard_simplex_argmax(&perturbed)?] += 1.0;
            }
            for x in &mut w {
                *x /= samples as f64;
            }
            Ok(w)
        }
    }
}

/// `sum_i nu'(z_i) z_i - n`: the zero-mean weight of the smoothing-scale
/// derivative for an `n`-dimensional perturbation.
pub fn sensitivity_weight(prior: NoisePrior, z: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for &zi in z {
        acc += prior.nu_grad(zi)? * zi;
    }
    Ok(acc - z.len() as f64)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Baseline {
    None,
    Unperturbed,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Target {
    Theta,
    Scale,
}

/// Shared driver for the four score-function estimators.
fn estimate<F>(
    mut solver: F,
    theta: &[f64],
    eps: f64,
    prior: NoisePrior,
    samples: usize,
    stream: NoiseStream,
    baseline: Baseline,
    target: Target,
) -> Result<PerturbedEstimate>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidSmoothing("eps must be > 0"));
    }
    if samples == 0 {
        return Err(Error::InvalidSmoothing("samples must be >= 1"));
    }
    if !prior.supports_score_function() {
        return Err(Error::UnsupportedPrior(prior));
    }
    let n = theta.len();
    let y0 = solver(theta);
    let rows = y0.len();
    let cols = match target {
        Target::Theta => n,
        Target::Scale => 1,
    };
    let mut value = vec![0.0; rows];
    // Welford accumulators per Jacobian entry.
    let mut mean = vec![0.0; rows * cols];
    let mut m2 = vec![0.0; rows * cols];
    let mut z = vec![0.0; n];
    let mut weights = vec![0.0; cols];
    let mut shifted = vec![0.0; n];
    for k in 0..samples {
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = prior.sample(&stream.at(k as u32, stream.pixel, i as u32));
        }
        for i in 0..n {
            shifted[i] = theta[i] + eps * z[i];
        }
        let y = solver(&shifted);
        if y.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                got: y.len(),
            });
        }
        match target {
            Target::Theta => {
                for (w, &zi) in weights.iter_mut().zip(&z) {
                    *w = prior.nu_grad(zi)? / eps;
                }
            }
            Target::Scale => weights[0] = sensitivity_weight(prior, &z)? / eps,
        }
        let count = (k + 1) as f64;
        for r in 0..rows {
            value[r] += y[r];
            let dy = match baseline {
                Baseline::None => y[r],
                Baseline::Unperturbed => y[r] - y0[r],
            };
            for c in 0..cols {
                let term = dy * weights[c];
                let idx = r * cols + c;
                let delta = term - mean[idx];
                mean[idx] += delta / count;
                m2[idx] += delta * (term - mean[idx]);
            }
        }
    }
    let m = samples as f64;
    for v in &mut value {
        *v /= m;
    }
    let variance = if samples > 1 {
        m2.iter().map(|s| s / (m - 1.0)).collect()
    } else {
        vec![0.0; rows * cols]
    };
    Ok(PerturbedEstimate {
        value,
        jacobian: mean,
        variance,
        rows,
        cols,
        samples,
    })
}

/// Score-function Jacobian `(1/M) sum y*(theta + eps Z_i) grad nu(Z_i)^T / eps`.
pub fn jacobian_plain<F>(
    solver: F,
    theta: &[f64],
    eps: f64,
    prior: NoisePrior,
    samples: usize,
    stream: NoiseStream,
) -> Result<PerturbedEstimate>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    estimate(solver, theta, eps, prior, samples, stream, Baseline::None, Target::Theta)
}

/// Control-variate Jacobian: subtracts `y*(theta)` inside the average, so
/// draws that do not change the argmax contribute exactly zero.
pub fn jacobian_vr<F>(
    solver: F,
    theta: &[f64],
    eps: f64,
    prior: NoisePrior,
    samples: usize,
    stream: NoiseStream,
) -> Result<PerturbedEstimate>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    estimate(
        solver,
        theta,
        eps,
        prior,
        samples,
        stream,
        Baseline::Unperturbed,
        Target::Theta,
    )
}

/// Control-variate estimate of `d y_eps / d eps` (a single Jacobian column).
pub fn sensitivity_vr<F>(
    solver: F,
    theta: &[f64],
    eps: f64,
    prior: NoisePrior,
    samples: usize,
    stream: NoiseStream,
) -> Result<PerturbedEstimate>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    estimate(
        solver,
        theta,
        eps,
        prior,
        samples,
        stream,
        Baseline::Unperturbed,
        Target::Scale,
    )
}

/// Same as [`sensitivity_vr`] without the control variate.
pub fn sensitivity_plain<F>(
    solver: F,
    theta: &[f64],
    eps: f64,
    prior: NoisePrior,
    samples: usize,
    stream: NoiseStream,
) -> Result<PerturbedEstimate>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    estimate(solver, theta, eps, prior, samples, stream, Baseline::None, Target::Scale)
}

/// The Heaviside as a one-dimensional hard solver, for the estimators above.
pub fn heaviside_solver(theta: &[f64]) -> Vec<f64> {
    vec![hard_heaviside(theta[0])]
}

/// The simplex argmax as a hard solver returning a one-hot vector.
pub fn simplex_solver(theta: &[f64]) -> Vec<f64> {
    match hard_simplex_argmax(theta) {
        Ok(i) => one_hot(theta.len(), i),
        Err(_) => vec![0.0; theta.len()],
    }
}
