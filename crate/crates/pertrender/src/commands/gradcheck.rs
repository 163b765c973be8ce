//! Oracle, finite-difference and variance checks of the smoothing operators,
//! the renderer and the losses.

use serde::Serialize;

use pertrender_core::losses::{laplacian_loss, neg_iou, rgb_l2};
use pertrender_core::math::Vec3;
use pertrender_core::priors::{NoisePrior, NoiseStream, Stage};
use pertrender_core::smooth::{
    heaviside_solver, jacobian_plain, jacobian_vr, sensitivity_vr, simplex_solver, smooth_heaviside,
    smooth_simplex_argmax, softmax, Evaluation,
};
use pertrender_core::{
    Adjoint, Camera, DirectionalLight, Image, Pose, RenderOptions, Scene, SmoothingParams,
};

use crate::commands::ensure_dir;
use crate::config::Config;
use crate::error::Result;
use crate::report::write_csv;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// Error statistic; the check passes when it is below `tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            pass: value < tolerance,
        }
    }
}

/// Runs every check and writes `gradcheck.csv`.
///
/// `inject_fault` flips the sign of every analytic derivative before it is
/// compared, which must make the derivative checks fail.
pub fn run(config: &Config, inject_fault: bool) -> Result<Vec<Check>> {
    ensure_dir(&config.out)?;
    let checks = checks(config, inject_fault)?;
    write_csv(&config.out.join("gradcheck.csv"), &checks)?;
    Ok(checks)
}

pub fn checks(config: &Config, inject_fault: bool) -> Result<Vec<Check>> {
    let sign = if inject_fault { -1.0 } else { 1.0 };
    let mut out = Vec::new();
    heaviside_oracles(config.seed, &mut out)?;
    gumbel_oracle(config.seed, &mut out)?;
    estimator_checks(config.seed, sign, &mut out)?;
    variance_reduction(config.seed, &mut out)?;
    renderer_checks(config, sign, &mut out)?;
    loss_checks(config.seed, sign, &mut out)?;
    Ok(out)
}

const SCORE_PRIORS: [NoisePrior; 3] = [NoisePrior::Gaussian, NoisePrior::Logistic, NoisePrior::Cauchy];

fn stream(seed: u64, tag: u32) -> NoiseStream {
    NoiseStream::new(seed, Stage::Custom(0x6763_0000 | tag))
}

/// Largest z-score of MC occupancy against `P(x + Z > 0) = 1 - F(-x)`.
fn heaviside_oracles(seed: u64, out: &mut Vec<Check>) -> Result<()> {
    let m = 100_000;
    for (k, prior) in NoisePrior::ALL.into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..9 {
            let x = -2.0 + 0.5 * i as f64;
            let eval = Evaluation::MonteCarlo {
                samples: m,
                stream: stream(seed, k as u32).at(0, i, 0),
            };
            let mc = smooth_heaviside(x, 1.0, prior, eval)?;
            let p = 1.0 - prior.cdf(-x);
            let se = (p * (1.0 - p) / m as f64).sqrt().max(1.0 / m as f64);
            worst = worst.max((mc - p).abs() / se);
        }
        out.push(Check::new(format!("heaviside_mc_vs_cdf_{prior}"), worst, 4.0));
    }
    Ok(())
}

fn gumbel_oracle(seed: u64, out: &mut Vec<Check>) -> Result<()> {
    let m = 100_000;
    let scores = [0.5, -0.3, 1.0, 0.2];
    let gamma = 0.8;
    let eval = Evaluation::MonteCarlo {
        samples: m,
        stream: stream(seed, 16),
    };
    let mc = smooth_simplex_argmax(&scores, gamma, NoisePrior::Gumbel, eval)?;
    let exact = softmax(&scores, gamma);
    let worst = mc
        .iter()
        .zip(&exact)
        .map(|(a, p)| (a - p).abs() / (p * (1.0 - p) / m as f64).sqrt())
        .fold(0.0, f64::max);
    out.push(Check::new("simplex_mc_gumbel_vs_softmax", worst, 4.0));
    Ok(())
}

/// Score-function estimates against the analytic derivatives of the CDF.
fn estimator_checks(seed: u64, sign: f64, out: &mut Vec<Check>) -> Result<()> {
    let m = 100_000;
    let est = jacobian_vr(heaviside_solver, &[0.0], 1.0, NoisePrior::Gaussian, m, stream(seed, 32))?;
    let z = (sign * est.jacobian_at(0, 0) - NoisePrior::Gaussian.pdf(0.0)).abs() / est.std_error(0, 0);
    out.push(Check::new("jacobian_vr_gaussian_at_0", z, 4.0));

    let (x, sigma) = (0.3, 0.5);
    for (k, prior) in SCORE_PRIORS.into_iter().enumerate() {
        let s = stream(seed, 33 + k as u32);
        let est = jacobian_vr(heaviside_solver, &[x], sigma, prior, m, s)?;
        let exact = prior.pdf(x / sigma) / sigma;
        let z = (sign * est.jacobian_at(0, 0) - exact).abs() / est.std_error(0, 0);
        out.push(Check::new(format!("jacobian_vr_{prior}"), z, 4.0));

        let est = sensitivity_vr(heaviside_solver, &[x], sigma, prior, m, s.with_pixel(1))?;
        let exact = -x / (sigma * sigma) * prior.pdf(x / sigma);
        let z = (sign * est.jacobian_at(0, 0) - exact).abs() / est.std_error(0, 0);
        out.push(Check::new(format!("sensitivity_vr_{prior}"), z, 4.0));
    }

    // Simplex Jacobian under Gaussian noise against central differences of
    // the smoothed argmax, both with common random numbers.
    let scores = [0.2, 0.0, -0.1];
    let gamma = 0.5;
    let s = stream(seed, 40);
    let est = jacobian_vr(simplex_solver, &scores, gamma, NoisePrior::Gaussian, m, s)?;
    let h = 0.05;
    let mut worst: f64 = 0.0;
    for col in 0..3 {
        let shifted = |d: f64| {
            let mut t = scores;
            t[col] += d;
            smooth_simplex_argmax(
                &t,
                gamma,
                NoisePrior::Gaussian,
                Evaluation::MonteCarlo { samples: m, stream: s },
            )
        };
        let (plus, minus) = (shifted(h)?, shifted(-h)?);
        for row in 0..3 {
            let fd = (plus[row] - minus[row]) / (2.0 * h);
            let g = sign * est.jacobian_at(row, col);
            worst = worst.max((g - fd).abs() / (est.std_error(row, col) + 0.01));
        }
    }
    out.push(Check::new("jacobian_vr_simplex_gaussian_vs_fd", worst, 4.0));
    Ok(())
}

/// Per-draw variance of the VR Jacobian over the plain one, averaged over
/// a 41-point grid on [-1, 1].
pub fn variance_ratio(seed: u64, sigma: f64, samples: usize) -> Result<f64> {
    let (mut vr, mut plain) = (0.0, 0.0);
    for i in 0..41 {
        let x = -1.0 + 0.05 * i as f64;
        let s = stream(seed, 48).at(0, i, 0);
        vr += jacobian_vr(heaviside_solver, &[x], sigma, NoisePrior::Gaussian, samples, s)?.variance[0];
        plain += jacobian_plain(heaviside_solver, &[x], sigma, NoisePrior::Gaussian, samples, s)?.variance[0];
    }
    Ok(vr / plain)
}

fn variance_reduction(seed: u64, out: &mut Vec<Check>) -> Result<()> {
    let ratios = [1.0, 0.3, 0.1]
        .into_iter()
        .map(|sigma| variance_ratio(seed, sigma, 20_000))
        .collect::<Result<Vec<_>>>()?;
    for (sigma, r) in [1.0, 0.3, 0.1].into_iter().zip(&ratios) {
        out.push(Check::new(format!("vr_variance_ratio_sigma_{sigma}"), *r, 1.0));
    }
    let shrink = (ratios[1] / ratios[0]).max(ratios[2] / ratios[1]);
    out.push(Check::new("vr_variance_ratio_shrinks_with_sigma", shrink, 1.0));
    Ok(())
}

fn weights(len: usize, seed: u64) -> Vec<f64> {
    let s = stream(seed, 64);
    (0..len)
        .map(|i| NoisePrior::Uniform.sample(&s.at(i as u32, 0, 0)))
        .collect()
}

fn renderer_checks(config: &Config, sign: f64, out: &mut Vec<Check>) -> Result<()> {
    let size = 24;
    let camera = Camera {
        width: size,
        height: size,
        ..config.camera()?
    };
    let base = config.scene()?.with_camera(camera)?;
    let pose = Pose {
        rotation: Vec3::new(0.35, -0.5, 0.2),
        translation: Vec3::new(0.05, -0.02, 0.1),
    };
    let s = &config.smoothing;
    let params = SmoothingParams::softras(s.sigma, s.gamma, s.alpha);
    let options = RenderOptions::default();
    let adj = Image::from_data(size, size, 3, weights(size * size * 3, config.seed))?;
    let loss = |scene: &Scene, pose: &Pose, params: &SmoothingParams| -> Result<f64> {
        let r = scene.render_soft(pose, params, config.seed, &options)?;
        Ok(r.rgb.data.iter().zip(&adj.data).map(|(a, b)| a * b).sum())
    };

    let render = base.render_soft(&pose, &params, config.seed, &options)?;
    let g = base.backward(&render, &Adjoint::rgb(adj.clone()))?;
    let h = 1e-5;
    let mut fd = [0.0; 6];
    for (i, f) in fd.iter_mut().enumerate() {
        let (mut plus, mut minus) = (pose, pose);
        if i < 3 {
            plus.rotation[i] += h;
            minus.rotation[i] -= h;
        } else {
            plus.translation[i - 3] += h;
            minus.translation[i - 3] -= h;
        }
        *f = (loss(&base, &plus, &params)? - loss(&base, &minus, &params)?) / (2.0 * h);
    }
    let scale = fd.iter().map(|x| x.abs()).fold(1e-6, f64::max);
    let err = fd
        .iter()
        .zip(&g.d_pose)
        .map(|(f, a)| (sign * a - f).abs() / scale)
        .fold(0.0, f64::max);
    out.push(Check::new("render_pose_gradient_vs_fd", err, 1e-3));

    let h = 1e-6;
    let with = |ds: f64, dg: f64| SmoothingParams {
        sigma: params.sigma + ds,
        gamma: params.gamma + dg,
        ..params
    };
    let fd_sigma = (loss(&base, &pose, &with(h, 0.0))? - loss(&base, &pose, &with(-h, 0.0))?) / (2.0 * h);
    let fd_gamma = (loss(&base, &pose, &with(0.0, h))? - loss(&base, &pose, &with(0.0, -h))?) / (2.0 * h);
    let err = (sign * g.d_sigma - fd_sigma).abs() / fd_sigma.abs().max(1.0);
    out.push(Check::new("render_sigma_gradient_vs_fd", err, 1e-3));
    let err = (sign * g.d_gamma - fd_gamma).abs() / fd_gamma.abs().max(1.0);
    out.push(Check::new("render_gamma_gradient_vs_fd", err, 1e-3));

    // Vertex gradients cover geometry only, so shading is made
    // vertex-independent with an ambient-only light.
    let flat = DirectionalLight {
        ambient: 1.0,
        diffuse: 0.0,
        ..config.light()
    };
    let scene = Scene::with_lighting(base.mesh().clone(), *base.camera(), flat, base.background())?;
    let render = scene.render_soft(&pose, &params, config.seed, &options)?;
    let g = scene.backward(&render, &Adjoint::rgb(adj.clone()))?;
    let vertices = scene.mesh().vertices().to_vec();
    let mut worst: f64 = 0.0;
    let mut largest: f64 = 1e-6;
    for v in 0..vertices.len() {
        for k in 0..3 {
            let shifted = |d: f64| -> Result<f64> {
                let mut vs = vertices.clone();
                vs[v][k] += d;
                loss(&scene.with_mesh(scene.mesh().with_vertices(vs)?)?, &pose, &params)
            };
            let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            largest = largest.max(fd.abs());
            worst = worst.max((sign * g.d_vertices[v][k] - fd).abs());
        }
    }
    out.push(Check::new("render_vertex_gradient_vs_fd", worst / largest, 1e-3));
    Ok(())
}

fn loss_checks(seed: u64, sign: f64, out: &mut Vec<Check>) -> Result<()> {
    let h = 1e-6;
    let rel = |a: f64, fd: f64| (sign * a - fd).abs() / fd.abs().max(1e-3);
    let central = |img: &Image, k: usize, f: &dyn Fn(&Image) -> f64| {
        let (mut plus, mut minus) = (img.clone(), img.clone());
        plus.data[k] += h;
        minus.data[k] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    };
    let image = |salt: u64| {
        let w = weights(48, seed ^ salt);
        Image::from_data(4, 4, 3, w.iter().map(|x| x + 0.5).collect())
    };
    let (target, rendered) = (image(1)?, image(2)?);

    let part = rgb_l2(&target, &rendered)?;
    let f = |x: &Image| rgb_l2(&target, x).map(|p| p.value).unwrap_or(f64::NAN);
    let worst = (0..48)
        .map(|k| rel(part.adjoint.data[k], central(&rendered, k, &f)))
        .fold(0.0, f64::max);
    out.push(Check::new("rgb_l2_adjoint_vs_fd", worst, 1e-5));

    let gray = |img: &Image| Image::from_data(4, 4, 1, img.data[..16].to_vec());
    let (t, r) = (gray(&target)?, gray(&rendered)?);
    let part = neg_iou(&t, &r)?;
    let f = |x: &Image| neg_iou(&t, x).map(|p| p.value).unwrap_or(f64::NAN);
    let worst = (0..16)
        .map(|k| rel(part.adjoint.data[k], central(&r, k, &f)))
        .fold(0.0, f64::max);
    out.push(Check::new("neg_iou_adjoint_vs_fd", worst, 1e-5));

    let mesh = pertrender_core::Mesh::cube();
    let jitter = weights(24, seed ^ 3);
    let vertices: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, v)| v + 0.3 * Vec3::new(jitter[3 * i], jitter[3 * i + 1], jitter[3 * i + 2]))
        .collect();
    let part = laplacian_loss(&mesh, &vertices)?;
    let mut worst: f64 = 0.0;
    for v in 0..vertices.len() {
        for k in 0..3 {
            let eval = |d: f64| -> Result<f64> {
                let mut vs = vertices.clone();
                vs[v][k] += d;
                Ok(laplacian_loss(&mesh, &vs)?.value)
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            worst = worst.max(rel(part.adjoint[v][k], fd));
        }
    }
    out.push(Check::new("laplacian_adjoint_vs_fd", worst, 1e-5));
    Ok(())
}
