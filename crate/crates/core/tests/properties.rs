use pertrender_core::losses::{laplacian_loss, neg_iou, rgb_l2};
use pertrender_core::math::Vec3;
use pertrender_core::{
    Adjoint, Camera, DirectionalLight, Image, Mesh, Mode, NoisePrior, Pose, RenderOptions, Scene,
    SmoothingParams,
};
use proptest::prelude::*;

const PRIORS: [NoisePrior; 5] = [
    NoisePrior::Gaussian,
    NoisePrior::Logistic,
    NoisePrior::Cauchy,
    NoisePrior::Uniform,
    NoisePrior::Gumbel,
];

fn scene_of(tris: &[[[f64; 3]; 3]], size: usize) -> Scene {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for t in tris {
        let base = vertices.len();
        vertices.extend(t.iter().map(|v| Vec3::from(*v)));
        faces.push([base, base + 1, base + 2]);
    }
    let colors = (0..tris.len())
        .map(|j| [0.2 + 0.1 * j as f64, 0.9 - 0.2 * j as f64, 0.5])
        .collect();
    let mesh = Mesh::new(vertices, faces, colors).unwrap();
    let camera = Camera {
        width: size,
        height: size,
        ..Camera::default()
    };
    let light = DirectionalLight {
        direction: Vec3::z(),
        ambient: 1.0,
        diffuse: 0.0,
    };
    Scene::with_lighting(mesh, camera, light, [0.5; 3]).unwrap()
}

fn triangle() -> impl Strategy<Value = [[f64; 3]; 3]> {
    let v = || (-1.2..1.2f64, -1.2..1.2f64, -1.0..1.5f64).prop_map(|(x, y, z)| [x, y, z]);
    [v(), v(), v()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn weights_are_a_simplex(
        tris in prop::collection::vec(triangle(), 1..4),
        sigma in 0.0..0.2f64,
        gamma in 0.0..0.2f64,
        raster in 0..5usize,
        agg in 0..5usize,
        mc in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let scene = scene_of(&tris, 6);
        let params = SmoothingParams {
            sigma,
            gamma,
            alpha: 10.0,
            samples: 4,
            raster_prior: PRIORS[raster],
            agg_prior: PRIORS[agg],
        };
        let options = if mc { RenderOptions::monte_carlo() } else { RenderOptions::default() };
        let r = scene.render_soft(&Pose::identity(), &params, seed, &options).unwrap();
        let n = r.faces + 1;
        let colors = scene.colors();
        for (i, w) in r.weights.chunks(n).enumerate() {
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert_eq!(r.silhouette.data[i], 1.0 - w[n - 1]);
            for c in 0..3 {
                let expected = (0..r.faces).map(|j| w[j] * colors[j][c]).sum::<f64>() + w[n - 1] * 0.5;
                let got = r.rgb.data[3 * i + c];
                prop_assert!((got - expected).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&got));
            }
        }
    }

    #[test]
    fn l2_adjoint_matches_finite_differences(
        t in prop::collection::vec(0.0..1.0f64, 12),
        r in prop::collection::vec(0.0..1.0f64, 12),
        k in 0..12usize,
    ) {
        let target = Image::from_data(2, 2, 3, t).unwrap();
        let rendered = Image::from_data(2, 2, 3, r).unwrap();
        let g = rgb_l2(&target, &rendered).unwrap().adjoint.data[k];
        let fd = central(&rendered, k, |x| rgb_l2(&target, x).unwrap().value);
        prop_assert!((fd - g).abs() <= 1e-5 * g.abs().max(1e-3));
    }

    #[test]
    fn iou_adjoint_matches_finite_differences(
        t in prop::collection::vec(0.0..1.0f64, 16),
        r in prop::collection::vec(0.01..0.99f64, 16),
        k in 0..16usize,
    ) {
        let target = Image::from_data(4, 4, 1, t).unwrap();
        let rendered = Image::from_data(4, 4, 1, r).unwrap();
        let part = neg_iou(&target, &rendered).unwrap();
        prop_assert!((0.0..=1.0).contains(&part.value));
        let g = part.adjoint.data[k];
        let fd = central(&rendered, k, |x| neg_iou(&target, x).unwrap().value);
        prop_assert!((fd - g).abs() <= 1e-5 * g.abs().max(1e-3));
    }

    #[test]
    fn laplacian_adjoint_matches_finite_differences(
        offsets in prop::collection::vec((-0.3..0.3f64, -0.3..0.3f64, -0.3..0.3f64), 8),
        k in 0..24usize,
    ) {
        let cube = Mesh::cube();
        let vertices: Vec<Vec3> = cube
            .vertices()
            .iter()
            .zip(&offsets)
            .map(|(v, (x, y, z))| v + Vec3::new(*x, *y, *z))
            .collect();
        let part = laplacian_loss(&cube, &vertices).unwrap();
        prop_assert!(part.value >= 0.0);
        let g = part.adjoint[k / 3][k % 3];
        let h = 1e-6;
        let eval = |s: f64| {
            let mut v = vertices.clone();
            v[k / 3][k % 3] += s;
            laplacian_loss(&cube, &v).unwrap().value
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        prop_assert!((fd - g).abs() <= 1e-5 * g.abs().max(1e-3));
    }
}

fn central(img: &Image, k: usize, f: impl Fn(&Image) -> f64) -> f64 {
    let h = 1e-6;
    let mut plus = img.clone();
    plus.data[k] += h;
    let mut minus = img.clone();
    minus.data[k] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

#[test]
fn laplacian_vanishes_only_at_neighbor_centroids() {
    // A flat fan: the hub sits at the centroid of its ring, the ring vertices
    // do not.
    let ring: Vec<Vec3> = (0..6)
        .map(|k| {
            let a = k as f64 * std::f64::consts::PI / 3.0;
            Vec3::new(a.cos(), a.sin(), 0.0)
        })
        .collect();
    let mut vertices = vec![Vec3::zeros()];
    vertices.extend(ring);
    let faces: Vec<[usize; 3]> = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
    let mesh = Mesh::with_uniform_color(vertices.clone(), faces, [1.0; 3]).unwrap();
    assert!(laplacian_loss(&mesh, &vertices).unwrap().value > 0.0);

    let tri = Mesh::with_uniform_color(vertices[..3].to_vec(), vec![[0, 1, 2]], [1.0; 3]).unwrap();
    let collapsed = vec![Vec3::new(0.2, 0.1, 0.4); 3];
    assert_eq!(laplacian_loss(&tri, &collapsed).unwrap().value, 0.0);
}

#[test]
fn nearer_face_never_loses_weight() {
    // Pulling a triangle toward the eye along its viewing rays keeps its
    // projection and raises its inverse depth.
    let eye = Vec3::new(0.0, 0.0, 2.5);
    let back = [[-1.0, -1.0, -0.5], [1.2, -0.8, -0.5], [0.0, 1.1, -0.5]];
    let front = [[-0.9, 0.9, 0.2], [0.8, 0.2, 0.1], [-0.3, -1.0, 0.3]];
    let params = SmoothingParams::softras(0.05, 0.05, 10.0);
    let mut previous: Option<Vec<f64>> = None;
    for s in [1.0, 0.95, 0.9, 0.8, 0.7, 0.6] {
        let pulled = front.map(|v| {
            let v = Vec3::from(v);
            let p = eye + (v - eye) * s;
            [p.x, p.y, p.z]
        });
        let scene = scene_of(&[back, pulled], 12);
        let r = scene.render_soft(&Pose::identity(), &params, 0, &RenderOptions::default()).unwrap();
        let w: Vec<f64> = r.weights.chunks(3).map(|w| w[1]).collect();
        if let Some(prev) = &previous {
            for (a, b) in prev.iter().zip(&w) {
                assert!(b >= a, "{b} < {a} at scale {s}");
            }
        }
        previous = Some(w);
    }
}

fn render_with_threads(threads: usize, mode: Mode) -> (Vec<u64>, Vec<u64>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let scene = Scene::cube(24);
        let pose = Pose::from_rotation(Vec3::new(0.4, 0.2, -0.3));
        let params = SmoothingParams {
            sigma: 0.05,
            gamma: 0.05,
            ..SmoothingParams::default()
        };
        let options = RenderOptions {
            mode,
            ..RenderOptions::default()
        };
        let r = scene.render_soft(&pose, &params, 11, &options).unwrap();
        let adjoint = Adjoint::rgb(Image::from_data(24, 24, 3, vec![1.0; 24 * 24 * 3]).unwrap());
        let g = scene.backward(&r, &adjoint).unwrap();
        let mut grads: Vec<f64> = g.d_pose.to_vec();
        grads.extend(g.d_vertices.iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()));
        grads.extend([g.d_sigma, g.d_gamma]);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let mut forward = bits(&r.rgb.data);
        forward.extend(bits(&r.weights));
        (forward, bits(&grads))
    })
}

#[test]
fn identical_across_thread_counts() {
    for mode in [Mode::Auto, Mode::MonteCarlo] {
        let single = render_with_threads(1, mode);
        for threads in [2, 3, 8] {
            assert_eq!(render_with_threads(threads, mode), single, "{threads} threads, {mode:?}");
        }
    }
}

#[test]
fn identical_across_runs() {
    assert_eq!(render_with_threads(2, Mode::MonteCarlo), render_with_threads(2, Mode::MonteCarlo));
}
