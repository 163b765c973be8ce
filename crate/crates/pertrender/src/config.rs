//! Experiment configuration: a TOML file, every key optional, unknown keys
//! rejected, with `section.key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pertrender_core::math::Vec3;
use pertrender_core::optim::PoseTaskConfig;
use pertrender_core::{
    AdamConfig, Camera, ControllerConfig, DecayMode, DirectionalLight, Mesh, Mode, NoisePrior, Pose,
    RenderOptions, Scene, SmoothingParams, TruePose,
};

use crate::error::{Error, Result};
use crate::obj::{load_obj, ObjOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub out: PathBuf,
    pub scene: SceneConfig,
    pub camera: CameraConfig,
    pub light: LightConfig,
    pub smoothing: SmoothingConfig,
    pub adaptive: AdaptiveConfig,
    pub optimizer: OptimizerConfig,
    pub task: TaskConfig,
    pub render: RenderConfig,
    pub bench: BenchConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            scene: SceneConfig::default(),
            camera: CameraConfig::default(),
            light: LightConfig::default(),
            smoothing: SmoothingConfig::default(),
            adaptive: AdaptiveConfig::default(),
            optimizer: OptimizerConfig::default(),
            task: TaskConfig::default(),
            render: RenderConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// `"cube"` for the builtin colored cube, otherwise an OBJ path.
    pub mesh: String,
    pub fan_triangulate: bool,
    pub default_color: [f64; 3],
    pub background: [f64; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            mesh: "cube".into(),
            fan_triangulate: false,
            default_color: ObjOptions::default().default_color,
            background: [0.5; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub eye: [f64; 3],
    pub at: [f64; 3],
    pub up: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        let c = Camera::default();
        Self {
            width: c.width,
            height: c.height,
            fov_deg: 60.0,
            eye: c.eye.into(),
            at: c.at.into(),
            up: c.up.into(),
            near: c.near,
            far: c.far,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LightConfig {
    pub direction: [f64; 3],
    pub ambient: f64,
    pub diffuse: f64,
}

impl Default for LightConfig {
    fn default() -> Self {
        let l = DirectionalLight::default();
        Self {
            direction: l.direction.into(),
            ambient: l.ambient,
            diffuse: l.diffuse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Gaussian,
    Logistic,
    Cauchy,
    Uniform,
    Gumbel,
}

impl From<PriorKind> for NoisePrior {
    fn from(p: PriorKind) -> Self {
        match p {
            PriorKind::Gaussian => NoisePrior::Gaussian,
            PriorKind::Logistic => NoisePrior::Logistic,
            PriorKind::Cauchy => NoisePrior::Cauchy,
            PriorKind::Uniform => NoisePrior::Uniform,
            PriorKind::Gumbel => NoisePrior::Gumbel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    /// Closed forms wherever the prior admits one, sampling elsewhere.
    Closed,
    /// Sampling for both stages.
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmoothingConfig {
    pub raster_prior: PriorKind,
    pub agg_prior: PriorKind,
    pub sigma: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub samples: usize,
    pub mode: ModeKind,
    pub variance_reduction: bool,
    pub cull: bool,
    pub squared_distance: bool,
    pub memory_budget_mb: u64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        let task = PoseTaskConfig::default();
        Self {
            raster_prior: PriorKind::Gaussian,
            agg_prior: PriorKind::Gaussian,
            sigma: task.params.sigma,
            gamma: task.params.gamma,
            alpha: task.params.alpha,
            samples: task.params.samples,
            mode: ModeKind::Mc,
            variance_reduction: true,
            cull: true,
            squared_distance: false,
            memory_budget_mb: 2048,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayKind {
    Multiplicative,
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveConfig {
    pub enabled: bool,
    pub beta_gamma: f64,
    pub decay: f64,
    pub floor_sigma: f64,
    pub floor_gamma: f64,
    pub mode: DecayKind,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        let c = PoseTaskConfig::default().controller.unwrap_or_default();
        Self {
            enabled: true,
            beta_gamma: c.beta_gamma,
            decay: c.decay,
            floor_sigma: c.floor_sigma,
            floor_gamma: c.floor_gamma,
            mode: DecayKind::Multiplicative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub iterations: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
            iterations: PoseTaskConfig::default().iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub trials: usize,
    pub perturbations_deg: Vec<f64>,
    pub threshold_deg: f64,
    /// Extra thresholds for the solved-fraction sweep table; empty skips it.
    pub sweep_thresholds_deg: Vec<f64>,
    pub optimize_translation: bool,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            perturbations_deg: vec![20.0, 50.0, 80.0],
            threshold_deg: 10.0,
            sweep_thresholds_deg: Vec::new(),
            optimize_translation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Axis-angle rotation of the rendered pose, radians.
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
    /// `(sigma, gamma)` pairs.
    pub sweep: Vec<[f64; 2]>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            rotation: [0.5, 0.6, 0.1],
            translation: [0.0; 3],
            sweep: vec![[0.0, 0.0], [0.02, 0.02], [0.05, 0.05], [0.1, 0.1], [0.2, 0.2]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub samples: Vec<usize>,
    pub warmup: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            samples: vec![1, 2, 8, 32, 64],
            warmup: 2,
            repeats: 10,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&src).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn from_toml(src: &str) -> Result<Self> {
        let config: Config = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `section.key=value`. The value is read as a TOML literal, or as
    /// a bare string when it does not parse as one.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut tree = toml::Table::try_from(&*self).expect("config serializes");
        let mut parts = key.split('.').peekable();
        let mut node = &mut tree;
        while let Some(part) = parts.next() {
            let unknown = || Error::Config(format!("unknown key '{key}'"));
            if parts.peek().is_none() {
                if !node.contains_key(part) {
                    return Err(unknown());
                }
                node.insert(part.to_string(), value.clone());
                break;
            }
            node = node
                .get_mut(part)
                .and_then(|v| v.as_table_mut())
                .ok_or_else(unknown)?;
        }
        let updated: Config = tree
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {}", e.message())))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        self.camera()?.validate()?;
        self.smoothing_params().validate()?;
        self.adam().validate()?;
        self.controller().validate()?;
        for c in self.scene.background.iter().chain(&self.scene.default_color) {
            if !(0.0..=1.0).contains(c) {
                return fail("colors must lie in [0, 1]");
            }
        }
        if !(self.light.ambient >= 0.0 && self.light.diffuse >= 0.0) {
            return fail("light coefficients must be >= 0");
        }
        if self.task.perturbations_deg.iter().any(|m| !(0.0..180.0).contains(m)) {
            return fail("perturbations must lie in [0, 180) degrees");
        }
        let mut thresholds = std::iter::once(&self.task.threshold_deg).chain(&self.task.sweep_thresholds_deg);
        if thresholds.any(|t| t.is_nan() || *t <= 0.0) {
            return fail("thresholds must be > 0");
        }
        if self.render.sweep.iter().flatten().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return fail("render sweep values must be finite and >= 0");
        }
        if self.bench.samples.contains(&0) || self.bench.repeats == 0 {
            return fail("bench samples and repeats must be >= 1");
        }
        Ok(())
    }

    pub fn camera(&self) -> Result<Camera> {
        let c = &self.camera;
        if !(c.fov_deg > 0.0 && c.fov_deg < 180.0) {
            return Err(Error::Config("fov_deg must lie in (0, 180)".into()));
        }
        Ok(Camera {
            fov: c.fov_deg.to_radians(),
            width: c.width,
            height: c.height,
            eye: Vec3::from(c.eye),
            at: Vec3::from(c.at),
            up: Vec3::from(c.up),
            near: c.near,
            far: c.far,
        })
    }

    pub fn light(&self) -> DirectionalLight {
        DirectionalLight {
            direction: Vec3::from(self.light.direction),
            ambient: self.light.ambient,
            diffuse: self.light.diffuse,
        }
    }

    pub fn mesh(&self) -> Result<Mesh> {
        if self.scene.mesh == "cube" {
            return Ok(Mesh::cube());
        }
        let options = ObjOptions {
            fan_triangulate: self.scene.fan_triangulate,
            default_color: self.scene.default_color,
        };
        load_obj(Path::new(&self.scene.mesh), &options)
    }

    pub fn scene(&self) -> Result<Scene> {
        Ok(Scene::with_lighting(
            self.mesh()?,
            self.camera()?,
            self.light(),
            self.scene.background,
        )?)
    }

    pub fn smoothing_params(&self) -> SmoothingParams {
        let s = &self.smoothing;
        SmoothingParams {
            sigma: s.sigma,
            gamma: s.gamma,
            alpha: s.alpha,
            samples: s.samples,
            raster_prior: s.raster_prior.into(),
            agg_prior: s.agg_prior.into(),
        }
    }

    pub fn render_options(&self) -> RenderOptions {
        let s = &self.smoothing;
        RenderOptions {
            mode: match s.mode {
                ModeKind::Closed => Mode::Auto,
                ModeKind::Mc => Mode::MonteCarlo,
            },
            variance_reduction: s.variance_reduction,
            cull: s.cull,
            squared_distance: s.squared_distance,
            memory_budget: s.memory_budget_mb.saturating_mul(1 << 20),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        let o = &self.optimizer;
        AdamConfig {
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            epsilon: o.epsilon,
        }
    }

    pub fn controller(&self) -> ControllerConfig {
        let a = &self.adaptive;
        ControllerConfig {
            beta_gamma: a.beta_gamma,
            decay: a.decay,
            floor_sigma: a.floor_sigma,
            floor_gamma: a.floor_gamma,
            mode: match a.mode {
                DecayKind::Multiplicative => DecayMode::Multiplicative,
                DecayKind::Additive => DecayMode::Additive,
            },
        }
    }

    pub fn pose_task(&self, magnitude_deg: f64) -> PoseTaskConfig {
        PoseTaskConfig {
            params: self.smoothing_params(),
            options: self.render_options(),
            adam: self.adam(),
            controller: self.adaptive.enabled.then(|| self.controller()),
            iterations: self.optimizer.iterations,
            trials: self.task.trials,
            magnitude_deg,
            threshold_deg: self.task.threshold_deg,
            seed: self.seed,
            true_pose: TruePose::Random,
            optimize_translation: self.task.optimize_translation,
        }
    }

    pub fn render_pose(&self) -> Pose {
        Pose {
            rotation: Vec3::from(self.render.rotation),
            translation: Vec3::from(self.render.translation),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_match_the_library() {
        let c = Config::default();
        c.validate().unwrap();
        assert_eq!(c.pose_task(20.0), PoseTaskConfig::default());
        let scene = c.scene().unwrap();
        let cube = Scene::cube(64);
        assert_eq!(scene.colors(), cube.colors());
        assert_eq!(scene.background(), cube.background());
        assert!((scene.camera().fov - cube.camera().fov).abs() < 1e-15);
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml("sed = 3").is_err());
        assert!(Config::from_toml("[camera]\nwidht = 3").is_err());
        let mut c = Config::default();
        assert!(c.set("camera.widht=3").is_err());
        assert!(c.set("nosection.x=3").is_err());
    }

    #[test]
    fn overrides() {
        let mut c = Config::default();
        c.set("camera.width=32").unwrap();
        c.set("smoothing.raster_prior=logistic").unwrap();
        c.set("smoothing.mode = \"closed\"").unwrap();
        c.set("task.perturbations_deg=[20]").unwrap();
        c.set("seed=7").unwrap();
        assert_eq!(c.camera.width, 32);
        assert_eq!(c.smoothing.raster_prior, PriorKind::Logistic);
        assert_eq!(c.smoothing.mode, ModeKind::Closed);
        assert_eq!(c.task.perturbations_deg, vec![20.0]);
        assert_eq!(c.seed, 7);
        assert!(c.set("camera.width=wide").is_err());
        assert!(c.set("smoothing.sigma=-1").is_err());
        assert!(c.set("camera").is_err());
        assert_eq!(c.camera.width, 32);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(Config::from_toml("[camera]\nnear = 20.0").is_err());
        assert!(Config::from_toml("[smoothing]\nraster_prior = \"laplace\"").is_err());
        assert!(Config::from_toml("[task]\nperturbations_deg = [200.0]").is_err());
        assert!(Config::from_toml("[bench]\nsamples = [0]").is_err());
    }

    proptest! {
        #[test]
        fn toml_round_trip(
            seed in any::<u64>(),
            width in 1..512usize,
            sigma in 0.0..1.0f64,
            gamma in 0.0..1.0f64,
            lr in 1e-4..1.0f64,
            mags in prop::collection::vec(0.0..179.9f64, 0..4),
            sweep in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 0..4),
            closed in any::<bool>(),
        ) {
            let mut c = Config::default();
            c.seed = seed;
            c.camera.width = width;
            c.smoothing.sigma = sigma;
            c.smoothing.gamma = gamma;
            c.smoothing.mode = if closed { ModeKind::Closed } else { ModeKind::Mc };
            c.optimizer.lr = lr;
            c.task.perturbations_deg = mags;
            c.render.sweep = sweep.into_iter().map(|(a, b)| [a, b]).collect();
            let text = c.to_toml();
            prop_assert_eq!(Config::from_toml(&text).unwrap(), c);
        }
    }
}
