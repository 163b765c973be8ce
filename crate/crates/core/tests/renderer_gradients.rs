use pertrender_core::math::Vec3;
use pertrender_core::{
    Adjoint, Camera, DirectionalLight, Image, Mesh, Mode, NoisePrior, Pose, RenderOptions, Scene,
    SmoothingParams,
};

fn pose() -> Pose {
    Pose {
        rotation: Vec3::new(0.35, -0.5, 0.2),
        translation: Vec3::new(0.05, -0.02, 0.1),
    }
}

fn shifted(p: &Pose, i: usize, h: f64) -> Pose {
    let mut q = *p;
    if i < 3 {
        q.rotation[i] += h;
    } else {
        q.translation[i - 3] += h;
    }
    q
}

/// Pixels whose red value is sensitive to the pose: the ones in the blurred
/// edge band of the hard silhouette.
fn edge_pixels(scene: &Scene, pose: &Pose, count: usize) -> Vec<(usize, usize)> {
    let hard = scene.render_hard(pose).unwrap();
    let w = scene.camera().width;
    let mut out = Vec::new();
    for i in 0..hard.winner.len() {
        let (r, c) = (i / w, i % w);
        if c + 1 < w && hard.winner[i] != hard.winner[i + 1] {
            out.push((r, c));
        }
    }
    let step = (out.len() / count).max(1);
    out.into_iter().step_by(step).take(count).collect()
}

fn red_adjoint(w: usize, h: usize, r: usize, c: usize) -> Adjoint {
    let mut img = Image::zeros(w, h, 3);
    img.set(r, c, 0, 1.0);
    Adjoint::rgb(img)
}

fn check_closed_fd(params: SmoothingParams, options: RenderOptions) {
    let scene = Scene::cube(32);
    let p = pose();
    let h = 1e-4;
    let mut checked = 0;
    for (r, c) in edge_pixels(&scene, &p, 6) {
        let render = scene.render_soft(&p, &params, 0, &options).unwrap();
        let g = scene.backward(&render, &red_adjoint(32, 32, r, c)).unwrap();
        let red = |q: &Pose| scene.render_soft(q, &params, 0, &options).unwrap().rgb.get(r, c, 0);
        let scale = g.d_pose.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if scale < 1e-3 {
            continue;
        }
        for i in 0..6 {
            let fd = (red(&shifted(&p, i, h)) - red(&shifted(&p, i, -h))) / (2.0 * h);
            let err = (fd - g.d_pose[i]).abs() / scale;
            assert!(err < 1e-3, "pixel ({r},{c}) coord {i}: fd {fd} analytic {}", g.d_pose[i]);
        }
        checked += 1;
    }
    assert!(checked >= 3, "only {checked} sensitive pixels");
}

#[test]
fn closed_gaussian_gumbel_pose_gradient_matches_finite_differences() {
    let params = SmoothingParams {
        sigma: 0.03,
        gamma: 0.05,
        raster_prior: NoisePrior::Gaussian,
        agg_prior: NoisePrior::Gumbel,
        ..SmoothingParams::default()
    };
    check_closed_fd(params, RenderOptions::default());
}

#[test]
fn closed_softras_pose_gradient_matches_finite_differences() {
    check_closed_fd(SmoothingParams::softras(0.03, 0.05, 10.0), RenderOptions::default());
}

#[test]
fn closed_sigma_gamma_gradients_match_finite_differences() {
    let scene = Scene::cube(24);
    let p = pose();
    let params = SmoothingParams::softras(0.04, 0.05, 10.0);
    let options = RenderOptions::default();
    let mut adj = Image::zeros(24, 24, 3);
    for (i, v) in adj.data.iter_mut().enumerate() {
        *v = ((i * 7919) % 13) as f64 / 13.0 - 0.5;
    }
    let adjoint = Adjoint::rgb(adj.clone());
    let render = scene.render_soft(&p, &params, 0, &options).unwrap();
    let g = scene.backward(&render, &adjoint).unwrap();
    let loss = |s: &SmoothingParams| {
        let r = scene.render_soft(&p, s, 0, &options).unwrap();
        r.rgb.data.iter().zip(&adj.data).map(|(a, b)| a * b).sum::<f64>()
    };
    let h = 1e-6;
    let fd_sigma = (loss(&SmoothingParams { sigma: 0.04 + h, ..params })
        - loss(&SmoothingParams { sigma: 0.04 - h, ..params }))
        / (2.0 * h);
    let fd_gamma = (loss(&SmoothingParams { gamma: 0.05 + h, ..params })
        - loss(&SmoothingParams { gamma: 0.05 - h, ..params }))
        / (2.0 * h);
    assert!((fd_sigma - g.d_sigma).abs() < 1e-4 * fd_sigma.abs().max(1.0), "{fd_sigma} {}", g.d_sigma);
    assert!((fd_gamma - g.d_gamma).abs() < 1e-4 * fd_gamma.abs().max(1.0), "{fd_gamma} {}", g.d_gamma);
}

#[test]
fn vertex_gradient_matches_finite_differences() {
    // Ambient-only light, so face colors do not depend on the vertices.
    let light = DirectionalLight {
        ambient: 1.0,
        diffuse: 0.0,
        ..DirectionalLight::default()
    };
    let camera = Camera {
        width: 24,
        height: 24,
        ..Camera::default()
    };
    let scene = Scene::with_lighting(Mesh::cube(), camera, light, [0.5; 3]).unwrap();
    let p = pose();
    let params = SmoothingParams::softras(0.04, 0.05, 10.0);
    let options = RenderOptions::default();
    let mut adj = Image::zeros(24, 24, 3);
    for (i, v) in adj.data.iter_mut().enumerate() {
        *v = ((i * 104_729) % 17) as f64 / 17.0 - 0.5;
    }
    let render = scene.render_soft(&p, &params, 0, &options).unwrap();
    let g = scene.backward(&render, &Adjoint::rgb(adj.clone())).unwrap();
    let loss = |verts: Vec<Vec3>| {
        let s = scene.with_mesh(scene.mesh().with_vertices(verts).unwrap()).unwrap();
        let r = s.render_soft(&p, &params, 0, &options).unwrap();
        r.rgb.data.iter().zip(&adj.data).map(|(a, b)| a * b).sum::<f64>()
    };
    let base = scene.mesh().vertices().to_vec();
    let scale = g.d_vertices.iter().map(|v| v.amax()).fold(0.0, f64::max);
    assert!(scale > 1e-2);
    let h = 1e-6;
    for v in 0..base.len() {
        for k in 0..3 {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[v][k] += h;
            minus[v][k] -= h;
            let fd = (loss(plus) - loss(minus)) / (2.0 * h);
            let err = (fd - g.d_vertices[v][k]).abs() / scale;
            assert!(err < 1e-4, "vertex {v} axis {k}: fd {fd} analytic {}", g.d_vertices[v][k]);
        }
    }
}

#[test]
fn monte_carlo_mode_matches_closed_form_for_softras_priors() {
    let scene = Scene::cube(16);
    let p = pose();
    let params = SmoothingParams {
        samples: 10_000,
        ..SmoothingParams::softras(0.05, 0.05, 10.0)
    };
    let closed = scene.render_soft(&p, &params, 0, &RenderOptions::default()).unwrap();
    let options = RenderOptions {
        mode: Mode::MonteCarlo,
        cull: false,
        ..RenderOptions::default()
    };
    let mc = scene.render_soft(&p, &params, 11, &options).unwrap();
    let diffs: Vec<f64> = closed.rgb.data.iter().zip(&mc.rgb.data).map(|(a, b)| b - a).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 3.0 * (var / n).sqrt(), "mean diff {mean}");
    let mean_abs = diffs.iter().map(|d| d.abs()).sum::<f64>() / n;
    assert!(mean_abs < 5e-3, "mean abs diff {mean_abs}");
}
