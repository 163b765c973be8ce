//! Hard Z-buffer rendering, the perturbed soft renderer and its backward pass.
//!
//! A pixel `p` sees face `j` through its occupancy `I_j = E[H(d_j(p) + sigma Z)]`
//! where `d_j` is the signed distance to the projected triangle, and faces
//! are blended with weights `w = E[onehot(argmax(s + gamma Z))]` over the
//! barrier scores `s_j = z_j + ln(I_j) / alpha` plus a background slot.
//! Monte-Carlo stages store only the seed; the backward pass regenerates
//! the same noise from its counter-based streams.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::image::Image;
use crate::math::{hash2, mix64, Vec2, Vec3};
use crate::priors::{NoisePrior, NoiseStream, Stage};
use crate::scene::{
    project, rotation_derivatives, shade, signed_distance, signed_distance_grad, Camera,
    DirectionalLight, Mesh, Pose, ProjectedScene,
};
use crate::smooth::{barrier_score, hard_heaviside, SmoothingParams, OCCUPANCY_FLOOR};
use crate::{Error, Result};

/// Occupancy samples are skipped for pixels farther than this many `sigma`
/// from a face edge; the closed form is used there instead.
pub const CULL_RADIUS: f64 = 6.0;

/// Gaussian aggregation noise ignores scores more than this many `gamma`
/// below the best one.
pub const PRUNE_RADIUS: f64 = 8.0;

/// How the two smoothed stages are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Closed forms where the prior has one (every prior for occupancy,
    /// Gumbel for aggregation), Monte-Carlo otherwise.
    Auto,
    /// Monte-Carlo for both stages.
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub mode: Mode,
    /// Subtract the unperturbed solution inside score-function estimators.
    pub variance_reduction: bool,
    /// Use closed forms for pixel/face pairs far from an edge and drop
    /// hopeless aggregation candidates. Disable for exact estimator tests.
    pub cull: bool,
    /// Feed `sign(d) d^2 / sigma` instead of `d / sigma` to closed-form
    /// occupancy (SoftRas compatibility).
    pub squared_distance: bool,
    /// Upper bound in bytes on `samples * (faces + 1) * pixels * 8`.
    pub memory_budget: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Auto,
            variance_reduction: true,
            cull: true,
            squared_distance: false,
            memory_budget: 2 << 30,
        }
    }
}

impl RenderOptions {
    pub fn monte_carlo() -> Self {
        Self {
            mode: Mode::MonteCarlo,
            ..Self::default()
        }
    }
}

/// A mesh seen through a camera, with flat-shaded face colors.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    mesh: Mesh,
    camera: Camera,
    light: DirectionalLight,
    background: [f64; 3],
    colors: Vec<[f64; 3]>,
}

impl Scene {
    pub fn new(mesh: Mesh, camera: Camera) -> Result<Self> {
        Self::with_lighting(mesh, camera, DirectionalLight::default(), [0.5; 3])
    }

    pub fn with_lighting(
        mesh: Mesh,
        camera: Camera,
        light: DirectionalLight,
        background: [f64; 3],
    ) -> Result<Self> {
        camera.validate()?;
        if background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidConfig("background color must lie in [0, 1]"));
        }
        let colors = shade(&mesh, &light);
        Ok(Self {
            mesh,
            camera,
            light,
            background,
            colors,
        })
    }

    /// Builtin cube seen by the default camera at `size x size`.
    pub fn cube(size: usize) -> Self {
        let camera = Camera {
            width: size,
            height: size,
            ..Camera::default()
        };
        Self::new(Mesh::cube(), camera).expect("default camera is valid")
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn light(&self) -> &DirectionalLight {
        &self.light
    }

    pub fn background(&self) -> [f64; 3] {
        self.background
    }

    /// Shaded face colors. They do not depend on the pose.
    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    /// Same scene with a different mesh (colors are reshaded).
    pub fn with_mesh(&self, mesh: Mesh) -> Result<Self> {
        Self::with_lighting(mesh, self.camera, self.light, self.background)
    }

    pub fn with_camera(&self, camera: Camera) -> Result<Self> {
        Self::with_lighting(self.mesh.clone(), camera, self.light, self.background)
    }

    pub fn project(&self, pose: &Pose) -> Result<ProjectedScene> {
        project(&self.mesh, &self.camera, pose)
    }

    fn fingerprint(&self) -> u64 {
        let mut h = 0x5EED_u64;
        let mut feed = |x: f64| h = hash2(h, x.to_bits());
        for v in self.mesh.vertices() {
            v.iter().for_each(|&c| feed(c));
        }
        for c in &self.colors {
            c.iter().for_each(|&x| feed(x));
        }
        let cam = &self.camera;
        for x in [cam.fov, cam.near, cam.far, cam.width as f64, cam.height as f64] {
            feed(x);
        }
        for v in [cam.eye, cam.at, cam.up] {
            v.iter().for_each(|&c| feed(c));
        }
        self.background.iter().for_each(|&x| feed(x));
        for f in self.mesh.faces() {
            h = hash2(h, mix64(f[0] as u64 ^ ((f[1] as u64) << 21) ^ ((f[2] as u64) << 42)));
        }
        h
    }

    /// Z-buffer render: each pixel takes the color of the nearest covering
    /// visible face, or the background.
    pub fn render_hard(&self, pose: &Pose) -> Result<HardRender> {
        let proj = self.project(pose)?;
        let cam = &self.camera;
        let (w, h) = (cam.width, cam.height);
        let mut rgb = Image::zeros(w, h, 3);
        let mut silhouette = Image::zeros(w, h, 1);
        let mut winner = vec![None; w * h];
        for row in 0..h {
            for col in 0..w {
                let p = cam.pixel_center(row, col);
                let mut best: Option<(usize, f64)> = None;
                for (j, face) in proj.faces.iter().enumerate() {
                    if !face.visible || hard_heaviside(signed_distance(&p, &face.ndc)) == 0.0 {
                        continue;
                    }
                    if best.is_none_or(|(_, z)| face.inv_depth > z) {
                        best = Some((j, face.inv_depth));
                    }
                }
                let i = row * w + col;
                let color = match best {
                    Some((j, _)) => {
                        silhouette.data[i] = 1.0;
                        winner[i] = Some(j);
                        self.colors[j]
                    }
                    None => self.background,
                };
                rgb.data[3 * i..3 * i + 3].copy_from_slice(&color);
            }
        }
        Ok(HardRender {
            rgb,
            silhouette,
            winner,
        })
    }

    /// Perturbed render at `pose`. Noise for Monte-Carlo stages is drawn from
    /// streams keyed by `seed`.
    pub fn render_soft(
        &self,
        pose: &Pose,
        params: &SmoothingParams,
        seed: u64,
        options: &RenderOptions,
    ) -> Result<SoftRender> {
        params.validate()?;
        let plan = Plan::new(params, options);
        let m = self.mesh.face_count();
        let cam = &self.camera;
        let (w, h) = (cam.width, cam.height);
        if plan.uses_samples() {
            let required = (params.samples as u64)
                .saturating_mul(m as u64 + 1)
                .saturating_mul((w * h) as u64)
                .saturating_mul(8);
            if required > options.memory_budget {
                return Err(Error::MemoryBudget {
                    required,
                    budget: options.memory_budget,
                });
            }
        }
        let proj = self.project(pose)?;
        let ctx = Context::new(self, &proj, params, options, plan, seed);
        let rows = map_rows(h, |row| ctx.forward_row(row));
        let mut rgb = Vec::with_capacity(w * h * 3);
        let mut silhouette = Vec::with_capacity(w * h);
        let mut occupancy = Vec::with_capacity(w * h * m);
        let mut weights = Vec::with_capacity(w * h * (m + 1));
        for r in rows {
            let r = r?;
            rgb.extend_from_slice(&r.rgb);
            silhouette.extend_from_slice(&r.silhouette);
            occupancy.extend_from_slice(&r.occupancy);
            weights.extend_from_slice(&r.weights);
        }
        Ok(SoftRender {
            rgb: Image::from_data(w, h, 3, rgb)?,
            silhouette: Image::from_data(w, h, 1, silhouette)?,
            occupancy,
            weights,
            faces: m,
            pose: *pose,
            params: *params,
            seed,
            options: *options,
            fingerprint: self.fingerprint(),
        })
    }

    /// Gradients of `<adjoint, render>` with respect to pose, vertices and
    /// the smoothing scales.
    pub fn backward(&self, render: &SoftRender, adjoint: &Adjoint) -> Result<GradReport> {
        if render.fingerprint != self.fingerprint() || render.faces != self.mesh.face_count() {
            return Err(Error::ForwardMismatch);
        }
        render.rgb.check_shape(&adjoint.rgb)?;
        if let Some(sil) = &adjoint.silhouette {
            render.silhouette.check_shape(sil)?;
        }
        let params = &render.params;
        let plan = Plan::new(params, &render.options);
        if plan.agg == AggEval::MonteCarlo
            && params.gamma > 0.0
            && !params.agg_prior.supports_score_function()
            && params.agg_prior != NoisePrior::Gumbel
        {
            return Err(Error::UnsupportedPrior(params.agg_prior));
        }
        let proj = self.project(&render.pose)?;
        let ctx = Context::new(self, &proj, params, &render.options, plan, render.seed);
        let m = self.mesh.face_count();
        let rows = map_rows(self.camera.height, |row| ctx.backward_row(row, adjoint));

        let mut d_ndc = vec![[0.0; 6]; m];
        let mut d_z = vec![0.0; m];
        let (mut d_sigma, mut d_gamma) = (0.0, 0.0);
        for r in rows {
            let r = r?;
            for (acc, g) in d_ndc.iter_mut().zip(&r.d_ndc) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            for (acc, g) in d_z.iter_mut().zip(&r.d_z) {
                *acc += g;
            }
            d_sigma += r.d_sigma;
            d_gamma += r.d_gamma;
        }
        let (d_pose, d_vertices) = self.chain_to_pose(&render.pose, &proj, &d_ndc, &d_z);
        Ok(GradReport {
            d_pose,
            d_vertices,
            d_sigma,
            d_gamma,
        })
    }

    /// Pull per-face NDC and inverse-depth gradients back to the pose and
    /// the object-frame vertices.
    fn chain_to_pose(
        &self,
        pose: &Pose,
        proj: &ProjectedScene,
        d_ndc: &[[f64; 6]],
        d_z: &[f64],
    ) -> ([f64; 6], Vec<Vec3>) {
        let cam = &self.camera;
        let (fx, fy) = (cam.focal() / cam.aspect(), cam.focal());
        let cv = &proj.camera_vertices;
        let mut d_cam = vec![Vec3::zeros(); cv.len()];
        for (f, face) in self.mesh.faces().iter().enumerate() {
            let g = &d_ndc[f];
            if g.iter().all(|&x| x == 0.0) && d_z[f] == 0.0 {
                continue;
            }
            let depth_sum: f64 = face.iter().map(|&i| cv[i].z).sum();
            let dz_dc = -3.0 / (depth_sum * depth_sum);
            for (k, &i) in face.iter().enumerate() {
                let c = cv[i];
                let (du, dv) = (g[2 * k], g[2 * k + 1]);
                let iz = 1.0 / c.z;
                d_cam[i] += Vec3::new(
                    du * fx * iz,
                    dv * fy * iz,
                    -(du * fx * c.x + dv * fy * c.y) * iz * iz + d_z[f] * dz_dc,
                );
            }
        }
        let basis_t = cam.basis().transpose();
        let rot = pose.rotation_matrix();
        let rot_t = rot.transpose();
        let d_rot = rotation_derivatives(&pose.rotation);
        let mut d_pose = [0.0; 6];
        let mut d_vertices = Vec::with_capacity(cv.len());
        for (v, dc) in self.mesh.vertices().iter().zip(&d_cam) {
            let dw = basis_t * dc;
            for i in 0..3 {
                d_pose[i] += dw.dot(&(d_rot[i] * v));
                d_pose[3 + i] += dw[i];
            }
            d_vertices.push(rot_t * dw);
        }
        (d_pose, d_vertices)
    }
}

/// Output of [`Scene::render_hard`].
#[derive(Debug, Clone, PartialEq)]
pub struct HardRender {
    pub rgb: Image,
    pub silhouette: Image,
    /// Winning face per pixel, `None` for background.
    pub winner: Vec<Option<usize>>,
}

/// Output of [`Scene::render_soft`].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftRender {
    pub rgb: Image,
    /// Foreground probability, `1 - background weight`.
    pub silhouette: Image,
    /// Per pixel, per face occupancy, row-major `pixels x faces`.
    pub occupancy: Vec<f64>,
    /// Per pixel aggregation weights, `pixels x (faces + 1)`; the last slot
    /// of each pixel is the background.
    pub weights: Vec<f64>,
    pub faces: usize,
    pub pose: Pose,
    pub params: SmoothingParams,
    pub seed: u64,
    pub options: RenderOptions,
    fingerprint: u64,
}

impl SoftRender {
    pub fn occupancy_at(&self, row: usize, col: usize) -> &[f64] {
        let i = row * self.rgb.width + col;
        &self.occupancy[i * self.faces..(i + 1) * self.faces]
    }

    pub fn weights_at(&self, row: usize, col: usize) -> &[f64] {
        let n = self.faces + 1;
        let i = row * self.rgb.width + col;
        &self.weights[i * n..(i + 1) * n]
    }
}

/// Loss gradient with respect to the rendered images.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjoint {
    pub rgb: Image,
    pub silhouette: Option<Image>,
}

impl Adjoint {
    pub fn rgb(rgb: Image) -> Self {
        Self {
            rgb,
            silhouette: None,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::rgb(Image::zeros(width, height, 3))
    }
}

/// Gradients produced by [`Scene::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    /// Axis-angle rotation components followed by translation.
    pub d_pose: [f64; 6],
    /// Object-frame vertex gradients.
    pub d_vertices: Vec<Vec3>,
    pub d_sigma: f64,
    pub d_gamma: f64,
}

impl GradReport {
    pub fn is_finite(&self) -> bool {
        self.d_pose.iter().all(|x| x.is_finite())
            && self.d_vertices.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_sigma.is_finite()
            && self.d_gamma.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RasterEval {
    Hard,
    Closed,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AggEval {
    Hard,
    Softmax,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy)]
struct Plan {
    raster: RasterEval,
    agg: AggEval,
}

impl Plan {
    fn new(params: &SmoothingParams, options: &RenderOptions) -> Self {
        let raster = if params.sigma == 0.0 {
            RasterEval::Hard
        } else if options.mode == Mode::Auto {
            RasterEval::Closed
        } else {
            RasterEval::MonteCarlo
        };
        let agg = if params.gamma == 0.0 {
            AggEval::Hard
        } else if options.mode == Mode::Auto && params.agg_prior == NoisePrior::Gumbel {
            AggEval::Softmax
        } else {
            AggEval::MonteCarlo
        };
        Self { raster, agg }
    }

    fn uses_samples(&self) -> bool {
        self.raster == RasterEval::MonteCarlo || self.agg == AggEval::MonteCarlo
    }
}

struct Context<'a> {
    scene: &'a Scene,
    proj: &'a ProjectedScene,
    params: SmoothingParams,
    options: RenderOptions,
    plan: Plan,
    raster_stream: NoiseStream,
    agg_stream: NoiseStream,
}

struct RowForward {
    rgb: Vec<f64>,
    silhouette: Vec<f64>,
    occupancy: Vec<f64>,
    weights: Vec<f64>,
}

struct RowGrad {
    d_ndc: Vec<[f64; 6]>,
    d_z: Vec<f64>,
    d_sigma: f64,
    d_gamma: f64,
}

/// Per-row scratch space.
struct Workspace {
    dist: Vec<f64>,
    occ: Vec<f64>,
    scores: Vec<f64>,
    weights: Vec<f64>,
    live: Vec<usize>,
    perturbed: Vec<f64>,
    nu: Vec<f64>,
    d_occ_d_dist: Vec<f64>,
    d_occ_d_sigma: Vec<f64>,
    d_scores: Vec<f64>,
}

impl Workspace {
    fn new(m: usize) -> Self {
        Self {
            dist: vec![0.0; m],
            occ: vec![0.0; m],
            scores: vec![0.0; m + 1],
            weights: vec![0.0; m + 1],
            live: Vec::with_capacity(m + 1),
            perturbed: vec![0.0; m + 1],
            nu: vec![0.0; m + 1],
            d_occ_d_dist: vec![0.0; m],
            d_occ_d_sigma: vec![0.0; m],
            d_scores: vec![0.0; m + 1],
        }
    }
}

impl<'a> Context<'a> {
    fn new(
        scene: &'a Scene,
        proj: &'a ProjectedScene,
        params: &SmoothingParams,
        options: &RenderOptions,
        plan: Plan,
        seed: u64,
    ) -> Self {
        Self {
            scene,
            proj,
            params: *params,
            options: *options,
            plan,
            raster_stream: NoiseStream::new(seed, Stage::Raster),
            agg_stream: NoiseStream::new(seed, Stage::Aggregate),
        }
    }

    fn faces(&self) -> usize {
        self.proj.faces.len()
    }

    /// Closed-form occupancy argument and its derivative in `d`.
    #[inline]
    fn closed_argument(&self, d: f64) -> (f64, f64) {
        let sigma = self.params.sigma;
        if self.options.squared_distance {
            (d.signum() * d * d / sigma, 2.0 * d.abs() / sigma)
        } else {
            (d / sigma, 1.0 / sigma)
        }
    }

    #[inline]
    fn culled(&self, d: f64) -> bool {
        self.options.cull && d.abs() > CULL_RADIUS * self.params.sigma
    }

    /// Occupancy of every face at one pixel, optionally with its derivatives
    /// in the signed distance and in `sigma`.
    fn rasterize(&self, pixel: u32, p: &Vec2, ws: &mut Workspace, grads: Option<&mut [[Vec2; 3]]>) {
        let prior = self.params.raster_prior;
        let sigma = self.params.sigma;
        let samples = self.params.samples;
        let mut grads = grads;
        for (j, face) in self.proj.faces.iter().enumerate() {
            ws.d_occ_d_dist[j] = 0.0;
            ws.d_occ_d_sigma[j] = 0.0;
            if !face.visible {
                ws.dist[j] = f64::NEG_INFINITY;
                ws.occ[j] = 0.0;
                continue;
            }
            let d = match grads.as_deref_mut() {
                Some(g) => {
                    let sd = signed_distance_grad(p, &face.ndc);
                    g[j] = sd.grad;
                    sd.value
                }
                None => signed_distance(p, &face.ndc),
            };
            ws.dist[j] = d;
            let closed = match self.plan.raster {
                RasterEval::Hard => {
                    ws.occ[j] = hard_heaviside(d);
                    continue;
                }
                RasterEval::Closed => true,
                RasterEval::MonteCarlo => self.culled(d),
            };
            if closed {
                let (a, da) = if self.plan.raster == RasterEval::Closed {
                    self.closed_argument(d)
                } else {
                    (d / sigma, 1.0 / sigma)
                };
                ws.occ[j] = prior.step(a);
                if grads.is_some() {
                    let density = prior.step_density(a);
                    ws.d_occ_d_dist[j] = density * da;
                    ws.d_occ_d_sigma[j] = -density * a / sigma;
                }
                continue;
            }
            let stream = self.raster_stream;
            let with_grad = grads.is_some() && prior.supports_score_function();
            let base = if self.options.variance_reduction { hard_heaviside(d) } else { 0.0 };
            let (mut hits, mut gd, mut gs) = (0.0, 0.0, 0.0);
            for k in 0..samples as u32 {
                let z = prior.sample(&stream.at(k, pixel, j as u32));
                let hit = hard_heaviside(d + sigma * z);
                hits += hit;
                if with_grad {
                    let diff = hit - base;
                    if diff != 0.0 {
                        let nu = prior.nu_grad(z).unwrap_or(0.0);
                        gd += diff * nu;
                        gs += diff * (nu * z - 1.0);
                    }
                }
            }
            let inv = 1.0 / samples as f64;
            ws.occ[j] = hits * inv;
            if grads.is_some() {
                if with_grad {
                    ws.d_occ_d_dist[j] = gd * inv / sigma;
                    ws.d_occ_d_sigma[j] = gs * inv / sigma;
                } else {
                    // No score function: differentiate the exact expectation.
                    let a = d / sigma;
                    let density = prior.step_density(a);
                    ws.d_occ_d_dist[j] = density / sigma;
                    ws.d_occ_d_sigma[j] = -density * a / sigma;
                }
            }
        }
        let m = self.faces();
        let alpha = self.params.alpha;
        for j in 0..m {
            ws.scores[j] = if self.proj.faces[j].visible {
                barrier_score(self.proj.faces[j].inv_depth, ws.occ[j], alpha)
            } else {
                f64::NEG_INFINITY
            };
        }
        ws.scores[m] = self.proj.z_min;
    }

    /// Index of the hard argmax; the background slot is always finite.
    #[inline]
    fn argmax(values: &[f64], candidates: impl Iterator<Item = usize>) -> usize {
        let mut best = usize::MAX;
        let mut best_value = f64::NEG_INFINITY;
        for j in candidates {
            let v = values[j];
            if v > best_value || best == usize::MAX {
                best = j;
                best_value = v;
            }
        }
        best
    }

    /// Fill `ws.live` with the aggregation candidates worth perturbing.
    fn collect_live(&self, ws: &mut Workspace) {
        ws.live.clear();
        let max = ws.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let prune = self.options.cull && self.params.agg_prior == NoisePrior::Gaussian;
        let cutoff = max - PRUNE_RADIUS * self.params.gamma;
        for (j, &s) in ws.scores.iter().enumerate() {
            if s == f64::NEG_INFINITY || (prune && s < cutoff) {
                continue;
            }
            ws.live.push(j);
        }
    }

    fn softmax_weights(&self, ws: &mut Workspace) {
        let gamma = self.params.gamma;
        let max = ws.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (w, &s) in ws.weights.iter_mut().zip(&ws.scores) {
            *w = if s == f64::NEG_INFINITY {
                0.0
            } else {
                crate::math::exp((s - max) / gamma)
            };
            total += *w;
        }
        for w in &mut ws.weights {
            *w /= total;
        }
    }

    fn aggregate(&self, pixel: u32, ws: &mut Workspace) {
        ws.weights.iter_mut().for_each(|w| *w = 0.0);
        match self.plan.agg {
            AggEval::Hard => {
                let n = ws.scores.len();
                ws.weights[Self::argmax(&ws.scores, 0..n)] = 1.0;
            }
            AggEval::Softmax => self.softmax_weights(ws),
            AggEval::MonteCarlo => {
                self.collect_live(ws);
                if ws.live.len() == 1 {
                    ws.weights[ws.live[0]] = 1.0;
                    return;
                }
                let prior = self.params.agg_prior;
                let gamma = self.params.gamma;
                let samples = self.params.samples;
                for k in 0..samples as u32 {
                    for &j in &ws.live {
                        let z = prior.sample(&self.agg_stream.at(k, pixel, j as u32));
                        ws.perturbed[j] = ws.scores[j] + gamma * z;
                    }
                    let y = Self::argmax(&ws.perturbed, ws.live.iter().copied());
                    ws.weights[y] += 1.0;
                }
                let inv = 1.0 / samples as f64;
                ws.weights.iter_mut().for_each(|w| *w *= inv);
            }
        }
    }

    fn shade_pixel(&self, ws: &Workspace, out: &mut [f64]) {
        let m = self.faces();
        let mut rgb = [0.0; 3];
        for (w, c) in ws.weights[..m].iter().zip(self.scene.colors()) {
            for ch in 0..3 {
                rgb[ch] += w * c[ch];
            }
        }
        let bg = self.scene.background;
        for ch in 0..3 {
            out[ch] = (rgb[ch] + ws.weights[m] * bg[ch]).clamp(0.0, 1.0);
        }
    }

    fn forward_row(&self, row: usize) -> Result<RowForward> {
        let cam = self.scene.camera();
        let (w, m) = (cam.width, self.faces());
        let mut ws = Workspace::new(m);
        let mut out = RowForward {
            rgb: vec![0.0; 3 * w],
            silhouette: vec![0.0; w],
            occupancy: Vec::with_capacity(w * m),
            weights: Vec::with_capacity(w * (m + 1)),
        };
        for col in 0..w {
            let pixel = (row * w + col) as u32;
            let p = cam.pixel_center(row, col);
            self.rasterize(pixel, &p, &mut ws, None);
            self.aggregate(pixel, &mut ws);
            self.shade_pixel(&ws, &mut out.rgb[3 * col..3 * col + 3]);
            out.silhouette[col] = 1.0 - ws.weights[m];
            out.occupancy.extend_from_slice(&ws.occ);
            out.weights.extend_from_slice(&ws.weights);
        }
        Ok(out)
    }

    /// Fills `ws.d_scores` with `dL/ds` given per-slot weight adjoints in
    /// `ws.nu`, and returns `dL/dgamma`.
    fn aggregate_backward(&self, pixel: u32, ws: &mut Workspace, g_w: &[f64]) -> f64 {
        ws.d_scores.iter_mut().for_each(|x| *x = 0.0);
        let gamma = self.params.gamma;
        let prior = self.params.agg_prior;
        let analytic = match self.plan.agg {
            AggEval::Hard => return 0.0,
            AggEval::Softmax => true,
            AggEval::MonteCarlo => prior == NoisePrior::Gumbel,
        };
        if analytic {
            // Softmax of s / gamma; shifting s leaves both outputs unchanged.
            self.softmax_weights(ws);
            let max = ws.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean: f64 = ws.weights.iter().zip(g_w).map(|(w, g)| w * g).sum();
            let mut d_gamma = 0.0;
            for j in 0..ws.scores.len() {
                let w = ws.weights[j];
                if w == 0.0 {
                    continue;
                }
                let du = w * (g_w[j] - mean);
                ws.d_scores[j] = du / gamma;
                d_gamma -= du * (ws.scores[j] - max) / (gamma * gamma);
            }
            return d_gamma;
        }
        self.collect_live(ws);
        let n = ws.live.len();
        if n == 1 {
            return 0.0;
        }
        let all = ws.scores.len();
        let base = if self.options.variance_reduction {
            g_w[Self::argmax(&ws.scores, 0..all)]
        } else {
            0.0
        };
        let samples = self.params.samples;
        let mut d_gamma = 0.0;
        for k in 0..samples as u32 {
            let mut sens = -(n as f64);
            for &j in &ws.live {
                let z = prior.sample(&self.agg_stream.at(k, pixel, j as u32));
                ws.perturbed[j] = ws.scores[j] + gamma * z;
                let nu = prior.nu_grad(z).unwrap_or(0.0);
                ws.nu[j] = nu;
                sens += nu * z;
            }
            let y = Self::argmax(&ws.perturbed, ws.live.iter().copied());
            let diff = g_w[y] - base;
            if diff == 0.0 {
                continue;
            }
            for &j in &ws.live {
                ws.d_scores[j] += diff * ws.nu[j];
            }
            d_gamma += diff * sens;
        }
        let scale = 1.0 / (samples as f64 * gamma);
        for &j in &ws.live {
            ws.d_scores[j] *= scale;
        }
        d_gamma * scale
    }

    fn backward_row(&self, row: usize, adjoint: &Adjoint) -> Result<RowGrad> {
        let cam = self.scene.camera();
        let (w, m) = (cam.width, self.faces());
        let mut ws = Workspace::new(m);
        let mut dist_grads = vec![[Vec2::zeros(); 3]; m];
        let mut g_w = vec![0.0; m + 1];
        let mut out = RowGrad {
            d_ndc: vec![[0.0; 6]; m],
            d_z: vec![0.0; m],
            d_sigma: 0.0,
            d_gamma: 0.0,
        };
        let alpha = self.params.alpha;
        let bg = self.scene.background;
        for col in 0..w {
            let i = row * w + col;
            let g = &adjoint.rgb.data[3 * i..3 * i + 3];
            let g_sil = adjoint.silhouette.as_ref().map_or(0.0, |s| s.data[i]);
            if g.iter().all(|&x| x == 0.0) && g_sil == 0.0 {
                continue;
            }
            let pixel = i as u32;
            let p = cam.pixel_center(row, col);
            self.rasterize(pixel, &p, &mut ws, Some(&mut dist_grads));
            for (gw, c) in g_w.iter_mut().zip(self.scene.colors()) {
                *gw = g[0] * c[0] + g[1] * c[1] + g[2] * c[2];
            }
            g_w[m] = g[0] * bg[0] + g[1] * bg[1] + g[2] * bg[2] - g_sil;
            out.d_gamma += self.aggregate_backward(pixel, &mut ws, &g_w);
            for j in 0..m {
                let gs = ws.d_scores[j];
                if gs == 0.0 || !self.proj.faces[j].visible {
                    continue;
                }
                out.d_z[j] += gs;
                let occ = ws.occ[j];
                if occ < OCCUPANCY_FLOOR {
                    continue;
                }
                let g_occ = gs / (alpha * occ);
                let g_dist = g_occ * ws.d_occ_d_dist[j];
                out.d_sigma += g_occ * ws.d_occ_d_sigma[j];
                if g_dist != 0.0 {
                    let acc = &mut out.d_ndc[j];
                    for k in 0..3 {
                        acc[2 * k] += g_dist * dist_grads[j][k].x;
                        acc[2 * k + 1] += g_dist * dist_grads[j][k].y;
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(feature = "parallel")]
fn map_rows<T: Send, F: Fn(usize) -> T + Sync + Send>(rows: usize, f: F) -> Vec<T> {
    (0..rows).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_rows<T, F: Fn(usize) -> T>(rows: usize, f: F) -> Vec<T> {
    (0..rows).map(f).collect()
}
