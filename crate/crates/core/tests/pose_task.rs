use pertrender_core::optim::{run_pose_task, trial_seed};
use pertrender_core::{Mode, PoseTaskConfig, RenderOptions, Scene, SmoothingParams};

fn small_config() -> PoseTaskConfig {
    PoseTaskConfig {
        iterations: 15,
        trials: 3,
        seed: 21,
        ..PoseTaskConfig::default()
    }
}

#[test]
fn near_identity_start_is_solved() {
    let scene = Scene::cube(32);
    let config = PoseTaskConfig {
        params: SmoothingParams::softras(0.05, 0.05, 10.0),
        options: RenderOptions {
            mode: Mode::Auto,
            ..RenderOptions::default()
        },
        iterations: 20,
        trials: 8,
        magnitude_deg: 0.5,
        seed: 5,
        ..PoseTaskConfig::default()
    };
    let result = run_pose_task(&scene, &config).unwrap();
    assert_eq!(result.solved_fraction(), 1.0);
    for t in &result.trials {
        assert!((t.init_err_deg - 0.5).abs() < 1e-6);
        assert_eq!(t.iterations, 20);
    }
}

#[test]
fn same_seed_same_result() {
    let scene = Scene::cube(24);
    let a = run_pose_task(&scene, &small_config()).unwrap();
    let b = run_pose_task(&scene, &small_config()).unwrap();
    assert_eq!(a, b);
    for (i, t) in a.trials.iter().enumerate() {
        assert_eq!(t.seed, trial_seed(21, i));
    }
    let other = PoseTaskConfig {
        seed: 22,
        ..small_config()
    };
    assert_ne!(run_pose_task(&scene, &other).unwrap().trials[0].true_pose, a.trials[0].true_pose);
}

#[test]
fn statistics_and_schedules() {
    let scene = Scene::cube(24);
    let result = run_pose_task(&scene, &small_config()).unwrap();
    let recount = result.trials.iter().filter(|t| t.final_err_deg < 10.0).count();
    assert_eq!(result.solved_fraction(), recount as f64 / 3.0);
    for t in &result.trials {
        assert!(t.failure.is_none());
        assert_eq!(t.losses.len(), 15);
        assert!((0.0..=180.0).contains(&t.final_err_deg));
        for w in t.sigmas.windows(2).chain(t.gammas.windows(2)) {
            assert!(w[1] <= w[0]);
        }
        assert!(t.sigmas.iter().chain(&t.gammas).all(|&s| s >= 0.015));
    }
}
