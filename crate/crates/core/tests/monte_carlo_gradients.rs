use pertrender_core::math::Vec3;
use pertrender_core::{
    Adjoint, Camera, Image, Mesh, NoisePrior, Pose, RenderOptions, Scene, SmoothingParams,
};

const SIZE: usize = 4;

fn pose() -> Pose {
    Pose::from_rotation(Vec3::new(0.35, -0.5, 0.2))
}

/// Narrow camera aimed at a cube corner so every pixel sits near an edge.
fn corner_scene() -> Scene {
    let p = pose();
    let corner = p.rotation_matrix() * Vec3::new(0.5, 0.5, 0.5);
    let camera = Camera {
        width: SIZE,
        height: SIZE,
        fov: 8f64.to_radians(),
        at: corner,
        ..Camera::default()
    };
    Scene::new(Mesh::cube(), camera).unwrap()
}

fn params(samples: usize) -> SmoothingParams {
    SmoothingParams {
        sigma: 0.3,
        gamma: 0.05,
        samples,
        raster_prior: NoisePrior::Gaussian,
        agg_prior: NoisePrior::Gaussian,
        ..SmoothingParams::default()
    }
}

fn options() -> RenderOptions {
    RenderOptions {
        memory_budget: u64::MAX,
        ..RenderOptions::monte_carlo()
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

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn mc_pose_gradient_is_unbiased_against_high_sample_finite_differences() {
    let scene = corner_scene();
    let p = pose();
    let big = params(100_000);
    let h = 3e-3;
    let fd_seeds = [101u64, 202, 303];
    // fd[seed][coord][pixel]
    let mut fd = vec![vec![vec![0.0; SIZE * SIZE]; 6]; fd_seeds.len()];
    for (s, &seed) in fd_seeds.iter().enumerate() {
        for i in 0..6 {
            let plus = scene.render_soft(&shifted(&p, i, h), &big, seed, &options()).unwrap();
            let minus = scene.render_soft(&shifted(&p, i, -h), &big, seed, &options()).unwrap();
            for px in 0..SIZE * SIZE {
                fd[s][i][px] = (plus.rgb.data[3 * px] - minus.rgb.data[3 * px]) / (2.0 * h);
            }
        }
    }
    let strength = |px: usize| (0..6).map(|i| fd[0][i][px].abs()).sum::<f64>();
    let px = (0..SIZE * SIZE).max_by(|&a, &b| strength(a).total_cmp(&strength(b))).unwrap();

    let mut adj = Image::zeros(SIZE, SIZE, 3);
    adj.data[3 * px] = 1.0;
    let adjoint = Adjoint::rgb(adj);
    // The estimator chains Monte-Carlo occupancies through the log barrier,
    // which adds an O(1/M) bias; at a few hundred samples it is ~10% here.
    let small = params(4096);
    let grads: Vec<[f64; 6]> = (0..16u64)
        .map(|seed| {
            let r = scene.render_soft(&p, &small, seed, &options()).unwrap();
            scene.backward(&r, &adjoint).unwrap().d_pose
        })
        .collect();
    let scale = (0..6).map(|i| fd[0][i][px].abs()).fold(0.0, f64::max);
    for i in 0..6 {
        let (g, g_se) = mean_and_se(&grads.iter().map(|g| g[i]).collect::<Vec<_>>());
        let (f, f_se) = mean_and_se(&fd.iter().map(|s| s[i][px]).collect::<Vec<_>>());
        let se = (g_se * g_se + f_se * f_se).sqrt();
        assert!(
            (g - f).abs() <= 4.0 * se + 1e-3 * scale,
            "coord {i}: backward {g} +- {g_se}, fd {f} +- {f_se}"
        );
    }
}

#[test]
fn variance_reduction_lowers_renderer_gradient_variance() {
    let scene = corner_scene();
    let p = pose();
    let small = params(8);
    let mut adj = Image::zeros(SIZE, SIZE, 3);
    adj.data.iter_mut().step_by(3).for_each(|x| *x = 1.0);
    let adjoint = Adjoint::rgb(adj);
    let run = |vr: bool| {
        let opts = RenderOptions {
            variance_reduction: vr,
            ..options()
        };
        (0..200u64)
            .map(|seed| {
                let r = scene.render_soft(&p, &small, seed, &opts).unwrap();
                scene.backward(&r, &adjoint).unwrap().d_pose
            })
            .collect::<Vec<_>>()
    };
    let with = run(true);
    let without = run(false);
    let var = |xs: &[[f64; 6]], i: usize| {
        let v: Vec<f64> = xs.iter().map(|g| g[i]).collect();
        let (_, se) = mean_and_se(&v);
        se * se
    };
    let total_with: f64 = (0..6).map(|i| var(&with, i)).sum();
    let total_without: f64 = (0..6).map(|i| var(&without, i)).sum();
    assert!(total_with < total_without, "{total_with} vs {total_without}");
}

#[test]
fn sensitivity_is_nonnegative_at_the_optimum() {
    // At the true pose any smoothing only blurs the render away from the
    // target, so dL/dgamma should not be negative on average.
    let scene = Scene::cube(16);
    let p = pose();
    let target = scene.render_hard(&p).unwrap().rgb;
    let small = SmoothingParams {
        sigma: 0.02,
        gamma: 0.02,
        samples: 8,
        ..SmoothingParams::default()
    };
    let d_gamma: Vec<f64> = (0..200u64)
        .map(|seed| {
            let r = scene.render_soft(&p, &small, seed, &options()).unwrap();
            let loss = pertrender_core::losses::rgb_l2(&target, &r.rgb).unwrap();
            scene.backward(&r, &Adjoint::rgb(loss.adjoint)).unwrap().d_gamma
        })
        .collect();
    let (mean, se) = mean_and_se(&d_gamma);
    assert!(mean >= -4.0 * se, "mean {mean} se {se}");
}
