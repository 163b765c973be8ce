use serde::Serialize;

use pertrender_core::Image;

use crate::commands::ensure_dir;
use crate::config::Config;
use crate::error::Result;
use crate::imageio::{save_npy, save_png};
use crate::report::write_csv;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderRow {
    pub name: String,
    pub sigma: f64,
    pub gamma: f64,
    /// Pixels whose silhouette lies strictly inside (0.01, 0.99).
    pub edge_pixels: usize,
}

pub fn edge_pixels(silhouette: &Image) -> usize {
    silhouette.data.iter().filter(|&&s| s > 0.01 && s < 0.99).count()
}

/// Hard render plus one soft render per `(sigma, gamma)` of the sweep.
///
/// Writes `hard.png`, `hard.npy`, `hard_silhouette.png`, `soft_<k>.png`,
/// `soft_<k>.npy`, `soft_<k>_silhouette.npy` and `render.csv`.
pub fn run(config: &Config) -> Result<Vec<RenderRow>> {
    let out = &config.out;
    ensure_dir(out)?;
    let scene = config.scene()?;
    let pose = config.render_pose();
    let hard = scene.render_hard(&pose)?;
    save_png(&out.join("hard.png"), &hard.rgb)?;
    save_npy(&out.join("hard.npy"), &hard.rgb)?;
    save_png(&out.join("hard_silhouette.png"), &hard.silhouette)?;
    let mut rows = vec![RenderRow {
        name: "hard".into(),
        sigma: 0.0,
        gamma: 0.0,
        edge_pixels: edge_pixels(&hard.silhouette),
    }];
    let options = config.render_options();
    for (k, [sigma, gamma]) in config.render.sweep.iter().enumerate() {
        let params = pertrender_core::SmoothingParams {
            sigma: *sigma,
            gamma: *gamma,
            ..config.smoothing_params()
        };
        let soft = scene.render_soft(&pose, &params, config.seed, &options)?;
        let name = format!("soft_{k:02}");
        save_png(&out.join(format!("{name}.png")), &soft.rgb)?;
        save_npy(&out.join(format!("{name}.npy")), &soft.rgb)?;
        save_npy(&out.join(format!("{name}_silhouette.npy")), &soft.silhouette)?;
        rows.push(RenderRow {
            name,
            sigma: *sigma,
            gamma: *gamma,
            edge_pixels: edge_pixels(&soft.silhouette),
        });
    }
    write_csv(&out.join("render.csv"), &rows)?;
    Ok(rows)
}
