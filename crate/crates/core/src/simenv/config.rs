use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::robot::{CapsuleSpec, Plane};
use super::SimError;
use crate::kinematics::IkParams;
use crate::trajectory::TargetMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Push,
    Pivot,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Push => "push",
            Task::Pivot => "pivot",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "push" => Ok(Task::Push),
            "pivot" => Ok(Task::Pivot),
            _ => Err(format!("unknown task `{s}` (push|pivot)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Premanip,
    DefaultRest,
    Overhead,
    PremanipFar,
}

impl InitMode {
    pub const ALL: [InitMode; 4] = [
        InitMode::Premanip,
        InitMode::DefaultRest,
        InitMode::Overhead,
        InitMode::PremanipFar,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            InitMode::Premanip => "premanip",
            InitMode::DefaultRest => "default_rest",
            InitMode::Overhead => "overhead",
            InitMode::PremanipFar => "premanip_far",
        }
    }
}

impl std::str::FromStr for InitMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .iter()
            .find(|m| m.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown init mode `{s}`"))
    }
}

/// Initial-state distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Yaw noise half-range, degrees. Ignored in the vertical plane.
    pub theta_max: f64,
    /// Translation noise half-range per in-plane axis, meters. The vertical
    /// plane only perturbs the horizontal axis.
    pub t_max: f64,
    /// Gaussian joint noise after placement, radians.
    pub joint_noise: f64,
    pub mode: InitMode,
    pub far_offset: f64,
    pub overhead_height: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            theta_max: 20.0,
            t_max: 0.1,
            joint_noise: 0.0,
            mode: InitMode::Premanip,
            far_offset: 0.20,
            overhead_height: 0.05,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=180.0).contains(&self.theta_max) {
            return Err(SimError::Config(
                "init.theta_max must lie in [0, 180] degrees".into(),
            ));
        }
        if !(self.t_max >= 0.0) || !(self.joint_noise >= 0.0) {
            return Err(SimError::Config(
                "init.t_max and init.joint_noise must be non-negative".into(),
            ));
        }
        if !(self.far_offset >= 0.0) || !(self.overhead_height >= 0.0) {
            return Err(SimError::Config("init offsets must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationConfig {
    pub scale_range: [f64; 2],
    pub mass_range: [f64; 2],
    pub friction_range: [f64; 2],
    pub pd_range: [f64; 2],
    pub gravity_sigma: f64,
    pub obs_noise_sigma: f64,
    pub action_noise_sigma: f64,
    pub force_prob: f64,
    /// Perturbation force per kilogram of object mass, N/kg.
    pub force_scale: f64,
    /// Control steps between dynamics resamples (checked at reset).
    pub randomize_every: u64,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self {
            scale_range: [0.7, 1.3],
            mass_range: [0.7, 1.3],
            friction_range: [0.7, 1.3],
            pd_range: [0.7, 1.3],
            gravity_sigma: 0.3,
            obs_noise_sigma: 0.01,
            action_noise_sigma: 0.01,
            force_prob: 0.05,
            force_scale: 50.0,
            randomize_every: 720,
        }
    }
}

impl RandomizationConfig {
    /// No randomization, noise or perturbation.
    pub fn none() -> Self {
        Self {
            scale_range: [1.0, 1.0],
            mass_range: [1.0, 1.0],
            friction_range: [1.0, 1.0],
            pd_range: [1.0, 1.0],
            gravity_sigma: 0.0,
            obs_noise_sigma: 0.0,
            action_noise_sigma: 0.0,
            force_prob: 0.0,
            force_scale: 0.0,
            randomize_every: 720,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (r, n) in [
            (self.scale_range, "scale_range"),
            (self.mass_range, "mass_range"),
            (self.friction_range, "friction_range"),
            (self.pd_range, "pd_range"),
        ] {
            if !(r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                return Err(SimError::Config(format!(
                    "randomization.{n} must be ordered positive [lo, hi]"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.force_prob) {
            return Err(SimError::Config(
                "randomization.force_prob must lie in [0, 1]".into(),
            ));
        }
        for (v, n) in [
            (self.gravity_sigma, "gravity_sigma"),
            (self.obs_noise_sigma, "obs_noise_sigma"),
            (self.action_noise_sigma, "action_noise_sigma"),
            (self.force_scale, "force_scale"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!(
                    "randomization.{n} must be non-negative"
                )));
            }
        }
        if self.randomize_every == 0 {
            return Err(SimError::Config(
                "randomization.randomize_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub kp: f64,
    pub kd: f64,
    pub iterations: usize,
    pub baumgarte: f64,
    pub slop: f64,
    pub margin: f64,
    pub robot_friction: f64,
    pub static_friction: f64,
    /// Table friction coefficient in the horizontal plane.
    pub support_friction: f64,
    pub gravity: f64,
    /// Rotational inertia of each arm joint. Contacts push back on the joints through it.
    pub arm_inertia: f64,
    pub finger_inertia: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            kp: 400.0,
            kd: 40.0,
            iterations: 10,
            baumgarte: 0.2,
            slop: 5e-4,
            margin: 0.005,
            robot_friction: 0.8,
            static_friction: 0.5,
            support_friction: 0.3,
            gravity: 9.81,
            arm_inertia: 1.0,
            finger_inertia: 0.002,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Palm delta + synergy.
    Full,
    /// Joint-space deltas around the retargeted trajectory.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionConfig {
    /// Palm target offsets for a unit action: x, y (meters) and rotation (radians).
    pub palm_scale: [f64; 3],
    pub mode: PolicyMode,
    /// Residual delta bound, radians.
    pub residual_clip: f64,
}

impl Default for ActionConfig {
    fn default() -> Self {
        Self {
            palm_scale: [0.02, 0.02, 0.1],
            mode: PolicyMode::Full,
            residual_clip: 0.1,
        }
    }
}

/// Optional replacement assets, by path. Missing entries use the built-in task assets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssetPaths {
    pub object: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub chain: Option<PathBuf>,
    pub geometry: Option<PathBuf>,
    pub demo: Option<PathBuf>,
    pub hand: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub mode: TargetMode,
    /// Downsampling stride in demo frames at the demo rate.
    pub downsample_factor: usize,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            mode: TargetMode::Dense,
            downsample_factor: crate::trajectory::DEFAULT_DOWNSAMPLE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PremanipConfig {
    pub v_min: f64,
    pub t_offset: usize,
}

impl Default for PremanipConfig {
    fn default() -> Self {
        Self {
            v_min: crate::trajectory::DEFAULT_V_MIN,
            t_offset: crate::trajectory::DEFAULT_T_OFFSET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Obj,
    ObjPlusHand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub alpha: f64,
    pub mode: RewardMode,
    pub hand_alpha: f64,
    pub hand_weight: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: crate::geometry::DEFAULT_ALPHA,
            mode: RewardMode::Obj,
            hand_alpha: crate::geometry::DEFAULT_ALPHA,
            hand_weight: 1.0,
        }
    }
}

/// Environment configuration. Every field has a task-specific default, so a
/// TOML file only needs `task`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub task: Task,
    #[serde(default)]
    pub plane: Option<Plane>,
    #[serde(default = "default_control_hz")]
    pub control_hz: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_d_max")]
    pub d_max: f64,
    /// Push success: anchor distance to the final target at episode end, meters.
    #[serde(default = "default_d_success")]
    pub d_success: f64,
    /// Pivot success: orientation error to the final target at episode end, degrees.
    #[serde(default = "default_success_deg")]
    pub success_deg: f64,
    /// Anchor points in the object frame; task default when absent.
    #[serde(default)]
    pub anchors: Option<Vec<[f64; 3]>>,
    /// Object symmetry axis used to reduce anchors; task default when absent.
    #[serde(default)]
    pub symmetry_axis: Option<[f64; 3]>,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default)]
    pub action: ActionConfig,
    #[serde(default)]
    pub randomization: RandomizationConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub premanip: PremanipConfig,
    #[serde(default = "default_retarget_ik")]
    pub retarget_ik: IkParams,
    #[serde(default)]
    pub assets: AssetPaths,
}

fn default_control_hz() -> f64 {
    15.0
}
fn default_substeps() -> usize {
    8
}
fn default_d_max() -> f64 {
    0.25
}
fn default_d_success() -> f64 {
    0.05
}
fn default_success_deg() -> f64 {
    10.0
}
/// Retargeting the small planar chain needs far fewer restarts than a full arm.
fn default_retarget_ik() -> IkParams {
    IkParams {
        n_solutions: 8,
        n_seeds_per: 8,
        ..IkParams::default()
    }
}

impl EnvConfig {
    pub fn new(task: Task) -> Self {
        let mut cfg: EnvConfig =
            toml::from_str(&format!("task = \"{}\"", task.name())).expect("defaults parse");
        if task == Task::Pivot {
            cfg.init.theta_max = 0.0;
            cfg.init.t_max = 0.02;
            // the plate starts flush against the wall; scaling it would start in contact
            cfg.randomization.scale_range = [1.0, 1.0];
        }
        cfg
    }

    pub fn plane(&self) -> Plane {
        self.plane.unwrap_or(match self.task {
            Task::Push => Plane::Horizontal,
            Task::Pivot => Plane::Vertical,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        Self::from_toml_with(text, None)
    }

    /// [`EnvConfig::from_toml`] with the file's task replaced by `task`.
    pub fn from_toml_with(text: &str, task: Option<Task>) -> Result<Self, SimError> {
        let mut over: toml::Value =
            toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        if let (Some(t), Some(table)) = (task, over.as_table_mut()) {
            table.insert("task".into(), toml::Value::String(t.name().into()));
        }
        let task = match over.get("task") {
            Some(v) => v
                .clone()
                .try_into::<Task>()
                .map_err(|e| SimError::Config(format!("task: {e}")))?,
            None => return Err(SimError::Config("missing field `task`".into())),
        };
        // task defaults first, then the file's explicit values
        let mut base = toml::Value::try_from(EnvConfig::new(task)).expect("config serializes");
        merge(&mut base, over);
        let cfg: EnvConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::load_with(path, None)
    }

    /// [`EnvConfig::load`] with the file's task replaced by `task`.
    pub fn load_with(path: &Path, task: Option<Task>) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let mut cfg = Self::from_toml_with(&text, task).map_err(|e| match e {
            SimError::Config(m) => SimError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        // asset paths are relative to the config file
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.assets.object,
            &mut cfg.assets.scene,
            &mut cfg.assets.chain,
            &mut cfg.assets.geometry,
            &mut cfg.assets.demo,
            &mut cfg.assets.hand,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.into()));
        if !(self.control_hz > 0.0) || self.substeps == 0 {
            return bad("control_hz and substeps must be positive");
        }
        if !(self.d_max > 0.0) || !(self.d_success > 0.0) || !(self.success_deg > 0.0) {
            return bad("d_max, d_success and success_deg must be positive");
        }
        if self.target.downsample_factor == 0 {
            return bad("target.downsample_factor must be at least 1");
        }
        if !(self.reward.alpha > 0.0) || !(self.reward.hand_alpha > 0.0) {
            return bad("reward alphas must be positive");
        }
        let p = &self.physics;
        if !(p.kp > 0.0
            && p.kd >= 0.0
            && p.iterations > 0
            && p.margin >= 0.0
            && p.gravity >= 0.0
            && p.arm_inertia > 0.0
            && p.finger_inertia > 0.0)
        {
            return bad("physics parameters out of range");
        }
        if !(self.action.residual_clip > 0.0) || self.action.palm_scale.iter().any(|v| !(*v > 0.0))
        {
            return bad("action scales must be positive");
        }
        self.init.validate()?;
        self.randomization.validate()?;
        self.retarget_ik
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_hz
    }

    pub fn sub_dt(&self) -> f64 {
        self.control_dt() / self.substeps as f64
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Robot collision geometry file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub capsules: Vec<CapsuleSpec>,
}

/// Object file: polygon in the object frame (counter-clockwise, convex).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub vertices: Vec<[f64; 2]>,
    pub mass: f64,
    #[serde(default)]
    pub friction: Option<f64>,
    #[serde(default)]
    pub inertia: Option<f64>,
}

/// Scene file: static one-sided segments, bodies on the left of `a -> b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub segments: Vec<SegmentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub a: [f64; 2],
    pub b: [f64; 2],
}
