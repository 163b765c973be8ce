//! Forward/backward timing and peak heap per render mode.

use std::time::Instant;

use serde::Serialize;

use pertrender_core::losses::rgb_l2;
use pertrender_core::{Adjoint, Mode, Pose, RenderOptions, Scene, SmoothingParams};

use crate::commands::ensure_dir;
use crate::config::Config;
use crate::error::Result;
use crate::memory;
use crate::report::write_csv;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    /// `hard`, `closed` or `mc`.
    pub mode: String,
    /// Monte-Carlo samples; 0 for the sample-free modes.
    pub samples: usize,
    pub forward_ms: f64,
    pub forward_std_ms: f64,
    /// Empty for the hard renderer, which has no backward pass.
    pub backward_ms: Option<f64>,
    pub backward_std_ms: Option<f64>,
    /// Peak heap growth over one forward plus backward pass; empty when the
    /// tracking allocator is not installed.
    pub mem_mb: Option<f64>,
}

enum Case {
    Hard,
    Soft(SmoothingParams, RenderOptions),
}

/// Times each mode over `warmup + repeats` runs and writes `bench.csv`.
///
/// The closed mode uses the logistic/Gumbel priors so both stages are
/// closed forms; the MC rows use the configured priors in sampling mode.
pub fn run(config: &Config) -> Result<Vec<BenchRow>> {
    ensure_dir(&config.out)?;
    let scene = config.scene()?;
    let pose = config.render_pose();
    let target = scene.render_hard(&Pose::identity())?.rgb;
    let base = config.smoothing_params();
    let mut cases = vec![
        ("hard".to_string(), 0, Case::Hard),
        (
            "closed".to_string(),
            0,
            Case::Soft(
                SmoothingParams::softras(base.sigma, base.gamma, base.alpha),
                RenderOptions {
                    mode: Mode::Auto,
                    ..config.render_options()
                },
            ),
        ),
    ];
    for &m in &config.bench.samples {
        let params = SmoothingParams { samples: m, ..base };
        let options = RenderOptions {
            mode: Mode::MonteCarlo,
            ..config.render_options()
        };
        cases.push(("mc".to_string(), m, Case::Soft(params, options)));
    }
    let tracked = memory::is_installed();
    let mut rows = Vec::new();
    for (mode, samples, case) in cases {
        let mut forward = Vec::new();
        let mut backward = Vec::new();
        let mut peak = 0usize;
        for run in 0..config.bench.warmup + config.bench.repeats {
            let (f, b, p) = measure(&scene, &pose, &target, &case, config.seed)?;
            if run >= config.bench.warmup {
                forward.push(f);
                backward.extend(b);
                peak = peak.max(p);
            }
        }
        let (forward_ms, forward_std_ms) = mean_std(&forward);
        let (backward_ms, backward_std_ms) = if backward.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&backward);
            (Some(m), Some(s))
        };
        rows.push(BenchRow {
            mode,
            samples,
            forward_ms,
            forward_std_ms,
            backward_ms,
            backward_std_ms,
            mem_mb: tracked.then(|| peak as f64 / (1u64 << 20) as f64),
        });
    }
    write_csv(&config.out.join("bench.csv"), &rows)?;
    Ok(rows)
}

/// Forward ms, backward ms and peak heap growth in bytes of one pass.
fn measure(
    scene: &Scene,
    pose: &Pose,
    target: &pertrender_core::Image,
    case: &Case,
    seed: u64,
) -> Result<(f64, Option<f64>, usize)> {
    let base = memory::current();
    memory::reset_peak();
    let start = Instant::now();
    let result = match case {
        Case::Hard => {
            let hard = scene.render_hard(pose)?;
            let f = ms(start);
            drop(hard);
            (f, None)
        }
        Case::Soft(params, options) => {
            let render = scene.render_soft(pose, params, seed, options)?;
            let f = ms(start);
            let adjoint = Adjoint::rgb(rgb_l2(target, &render.rgb)?.adjoint);
            let start = Instant::now();
            let grads = scene.backward(&render, &adjoint)?;
            let b = ms(start);
            drop(grads);
            (f, Some(b))
        }
    };
    Ok((result.0, result.1, memory::peak().saturating_sub(base)))
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
