//! Adam, the adaptive smoothing schedule and the single-view pose task.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;
use rand_distr::{Distribution, StandardNormal};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::losses::rgb_l2;
use crate::math::{self, hash2, Vec3};
use crate::priors::{NoiseStream, Stage};
use crate::renderer::{Adjoint, RenderOptions, Scene};
use crate::scene::{rotation_angle, rotation_log, rotation_matrix, Pose};
use crate::smooth::SmoothingParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("lr must be finite and > 0"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("Adam epsilon must be > 0"));
        }
        Ok(())
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, dim: usize) -> Self {
        Self {
            config,
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    /// One update of `params` along `-grad`. A non-finite gradient leaves
    /// both the state and the parameters untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let n = self.m.len();
        for len in [params.len(), grad.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(i));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - math::powi(beta1, t);
        let c2 = 1.0 - math::powi(beta2, t);
        for i in 0..n {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (math::sqrt(v_hat) + epsilon);
        }
        Ok(())
    }
}

/// How the smoothing scales shrink once triggered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayMode {
    /// `x <- rho * x`.
    Multiplicative,
    /// `x <- x - (1 - rho) * x_0`.
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    /// EMA coefficient of the `dL/dgamma` average.
    pub beta_gamma: f64,
    pub decay: f64,
    pub floor_sigma: f64,
    pub floor_gamma: f64,
    pub mode: DecayMode,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            beta_gamma: 0.9,
            decay: 0.95,
            floor_sigma: 1e-4,
            floor_gamma: 1e-4,
            mode: DecayMode::Multiplicative,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta_gamma) {
            return Err(Error::InvalidConfig("beta_gamma must lie in [0, 1)"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::InvalidConfig("decay must lie in (0, 1)"));
        }
        if !(self.floor_sigma >= 0.0 && self.floor_gamma >= 0.0) {
            return Err(Error::InvalidConfig("smoothing floors must be >= 0"));
        }
        Ok(())
    }
}

/// Shrinks `(sigma, gamma)` whenever the running mean of `dL/dgamma` is
/// positive, i.e. when less smoothing would lower the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingController {
    pub config: ControllerConfig,
    pub v_gamma: f64,
    initial: (f64, f64),
}

impl SmoothingController {
    pub fn new(config: ControllerConfig, initial: &SmoothingParams) -> Self {
        Self {
            config,
            v_gamma: 0.0,
            initial: (initial.sigma, initial.gamma),
        }
    }

    /// Returns whether the smoothing was decreased.
    pub fn update(&mut self, d_gamma: f64, params: &mut SmoothingParams) -> bool {
        let c = &self.config;
        self.v_gamma = c.beta_gamma * self.v_gamma + (1.0 - c.beta_gamma) * d_gamma;
        if !(self.v_gamma > 0.0) {
            return false;
        }
        let shrink = |x: f64, x0: f64, floor: f64| {
            let next = match c.mode {
                DecayMode::Multiplicative => c.decay * x,
                DecayMode::Additive => x - (1.0 - c.decay) * x0,
            };
            x.min(next.max(floor))
        };
        params.sigma = shrink(params.sigma, self.initial.0, c.floor_sigma);
        params.gamma = shrink(params.gamma, self.initial.1, c.floor_gamma);
        true
    }
}

/// Direction uniform on the unit sphere.
pub fn random_axis<R: RngCore>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Rotation drawn uniformly from SO(3).
pub fn random_rotation<R: RngCore>(rng: &mut R) -> Vec3 {
    // A normalized 4D Gaussian is a uniform unit quaternion.
    let q: [f64; 4] = core::array::from_fn(|_| StandardNormal.sample(rng));
    let n = math::sqrt(q.iter().map(|x| x * x).sum());
    let (w, v) = (q[0] / n, Vec3::new(q[1], q[2], q[3]) / n);
    let (w, v) = if w < 0.0 { (-w, -v) } else { (w, v) };
    let s = v.norm();
    if s < 1e-300 {
        return Vec3::zeros();
    }
    v * (2.0 * math::atan2(s, w) / s)
}

/// Rotate `truth` by exactly `magnitude_deg` about a uniformly random axis.
pub fn random_pose_perturbation<R: RngCore>(truth: &Pose, magnitude_deg: f64, rng: &mut R) -> Pose {
    let axis = random_axis(rng);
    let delta = rotation_matrix(&(axis * magnitude_deg.to_radians()));
    Pose {
        rotation: rotation_log(&(delta * truth.rotation_matrix())),
        translation: truth.translation,
    }
}

/// Geodesic distance between the rotations of two poses, in degrees.
pub fn angular_error(a: &Pose, b: &Pose) -> f64 {
    let relative = a.rotation_matrix().transpose() * b.rotation_matrix();
    rotation_angle(&relative).to_degrees()
}

/// Where the ground-truth pose of each trial comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruePose {
    Fixed(Pose),
    /// Uniformly random rotation per trial, zero translation.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseTaskConfig {
    pub params: SmoothingParams,
    pub options: RenderOptions,
    pub adam: AdamConfig,
    /// `None` keeps the smoothing fixed.
    pub controller: Option<ControllerConfig>,
    pub iterations: usize,
    pub trials: usize,
    pub magnitude_deg: f64,
    pub threshold_deg: f64,
    pub seed: u64,
    pub true_pose: TruePose,
    pub optimize_translation: bool,
}

impl Default for PoseTaskConfig {
    fn default() -> Self {
        Self {
            params: SmoothingParams {
                sigma: 0.1,
                gamma: 0.1,
                ..SmoothingParams::default()
            },
            options: RenderOptions::monte_carlo(),
            adam: AdamConfig::default(),
            // Half a pixel at 64x64.
            controller: Some(ControllerConfig {
                floor_sigma: 0.015,
                floor_gamma: 0.015,
                ..ControllerConfig::default()
            }),
            iterations: 200,
            trials: 50,
            magnitude_deg: 20.0,
            threshold_deg: 10.0,
            seed: 0,
            true_pose: TruePose::Random,
            optimize_translation: false,
        }
    }
}

impl PoseTaskConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.adam.validate()?;
        if let Some(c) = &self.controller {
            c.validate()?;
        }
        if !(self.magnitude_deg >= 0.0 && self.magnitude_deg < 180.0) {
            return Err(Error::InvalidConfig("perturbation must lie in [0, 180) degrees"));
        }
        if !(self.threshold_deg > 0.0) {
            return Err(Error::InvalidConfig("threshold must be > 0"));
        }
        Ok(())
    }
}

/// Outcome of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    pub true_pose: Pose,
    pub final_pose: Pose,
    pub init_err_deg: f64,
    pub final_err_deg: f64,
    pub iterations: usize,
    pub solved: bool,
    pub losses: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Set when the run aborted; such trials count as unsolved.
    pub failure: Option<Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub magnitude_deg: f64,
    pub threshold_deg: f64,
    pub trials: Vec<TrialResult>,
}

impl TaskResult {
    pub fn solved_fraction(&self) -> f64 {
        self.solved_fraction_at(self.threshold_deg)
    }

    /// Fraction of trials with final error below `threshold_deg`.
    pub fn solved_fraction_at(&self, threshold_deg: f64) -> f64 {
        if self.trials.is_empty() {
            return 0.0;
        }
        let solved = self
            .trials
            .iter()
            .filter(|t| t.failure.is_none() && t.final_err_deg < threshold_deg)
            .count();
        solved as f64 / self.trials.len() as f64
    }

    pub fn mean_final_error(&self) -> f64 {
        let n = self.trials.len().max(1) as f64;
        self.trials.iter().map(|t| t.final_err_deg).sum::<f64>() / n
    }

    /// Sample standard deviation of the final errors.
    pub fn std_final_error(&self) -> f64 {
        let n = self.trials.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean_final_error();
        let ss: f64 = self.trials.iter().map(|t| math::powi(t.final_err_deg - mean, 2)).sum();
        math::sqrt(ss / (n - 1) as f64)
    }
}

const PERTURB_STAGE: Stage = Stage::Custom(0x706f);

/// Seed of trial `index` under `master`.
pub fn trial_seed(master: u64, index: usize) -> u64 {
    hash2(master, index as u64)
}

/// Fit the pose of `scene`'s mesh to hard renders of random true poses.
pub fn run_pose_task(scene: &Scene, config: &PoseTaskConfig) -> Result<TaskResult> {
    config.validate()?;
    let trials = map_trials(config.trials, |i| run_trial(scene, config, trial_seed(config.seed, i)));
    Ok(TaskResult {
        magnitude_deg: config.magnitude_deg,
        threshold_deg: config.threshold_deg,
        trials,
    })
}

/// One optimization run from a perturbed start.
pub fn run_trial(scene: &Scene, config: &PoseTaskConfig, seed: u64) -> TrialResult {
    let mut rng = NoiseStream::new(seed, PERTURB_STAGE).rng();
    let truth = match config.true_pose {
        TruePose::Fixed(p) => p,
        TruePose::Random => Pose::from_rotation(random_rotation(&mut rng)),
    };
    let start = random_pose_perturbation(&truth, config.magnitude_deg, &mut rng);
    let init_err_deg = angular_error(&truth, &start);
    let mut result = TrialResult {
        seed,
        true_pose: truth,
        final_pose: start,
        init_err_deg,
        final_err_deg: init_err_deg,
        iterations: 0,
        solved: false,
        losses: Vec::with_capacity(config.iterations),
        sigmas: Vec::with_capacity(config.iterations),
        gammas: Vec::with_capacity(config.iterations),
        failure: None,
    };
    if let Err(e) = optimize(scene, config, seed, &truth, &mut result) {
        result.failure = Some(e);
    }
    result.final_err_deg = angular_error(&truth, &result.final_pose);
    result.solved = result.failure.is_none() && result.final_err_deg < config.threshold_deg;
    result
}

fn optimize(
    scene: &Scene,
    config: &PoseTaskConfig,
    seed: u64,
    truth: &Pose,
    out: &mut TrialResult,
) -> Result<()> {
    let target = scene.render_hard(truth)?.rgb;
    let dim = if config.optimize_translation { 6 } else { 3 };
    let mut adam = AdamState::new(config.adam, dim);
    let mut params = config.params;
    let mut controller = config.controller.map(|c| SmoothingController::new(c, &params));
    let mut pose = out.final_pose;
    let mut theta = [0.0; 6];
    let mut grad = [0.0; 6];
    for it in 0..config.iterations {
        let render = scene.render_soft(&pose, &params, hash2(seed, it as u64), &config.options)?;
        let loss = rgb_l2(&target, &render.rgb)?;
        let report = scene.backward(&render, &Adjoint::rgb(loss.adjoint))?;
        out.losses.push(loss.value);
        out.sigmas.push(params.sigma);
        out.gammas.push(params.gamma);
        theta[..3].copy_from_slice(pose.rotation.as_slice());
        theta[3..].copy_from_slice(pose.translation.as_slice());
        grad.copy_from_slice(&report.d_pose);
        adam.step(&mut theta[..dim], &grad[..dim])?;
        pose.rotation = Vec3::new(theta[0], theta[1], theta[2]);
        pose.translation = Vec3::new(theta[3], theta[4], theta[5]);
        out.final_pose = pose;
        out.iterations = it + 1;
        if let Some(c) = controller.as_mut() {
            c.update(report.d_gamma, &mut params);
        }
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn map_trials<F: Fn(usize) -> TrialResult + Sync + Send>(n: usize, f: F) -> Vec<TrialResult> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_trials<F: Fn(usize) -> TrialResult>(n: usize, f: F) -> Vec<TrialResult> {
    (0..n).map(f).collect()
}
