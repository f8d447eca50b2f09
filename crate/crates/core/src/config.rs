//! Run configuration: a plain-text `key = value` file with `[section]`
//! headers, overridable from the command line. Every key is validated
//! against the schema; unknown keys are errors. Precedence is
//! command-line flag > config file > built-in default.

use std::path::Path;
use std::str::FromStr;

use crate::data::{FractionMode, SceneParams};
use crate::error::{Error, Result};
use crate::models::{
    build_io_model, build_pcm_model, build_pn_model, BackboneSpec, BackboneVariant, FusionSpec,
    Model, ModelKind, PipelineSpec, PointNetSpec,
};
use crate::pointcloud::ProjectionConfig;
use crate::training::TrainConfig;

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "io" => Ok(ModelKind::Io),
            "pcm" => Ok(ModelKind::Pcm),
            "pn" => Ok(ModelKind::Pn),
            other => Err(Error::Usage(format!(
                "unknown model kind '{other}' (expected io|pcm|pn)"
            ))),
        }
    }
}

impl FromStr for BackboneVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nvidia" => Ok(BackboneVariant::Nvidia),
            "tinyconv" => Ok(BackboneVariant::TinyConv),
            other => Err(Error::Config(format!(
                "unknown backbone '{other}' (expected nvidia|tinyconv)"
            ))),
        }
    }
}

/// Model-construction settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub backbone: BackboneVariant,
    pub input_height: usize,
    pub input_width: usize,
    pub conv_widths: Vec<usize>,
    pub fc_widths: Vec<usize>,
    pub depth_conv_widths: Vec<usize>,
    pub depth_fc_widths: Vec<usize>,
    pub pn_widths: Vec<usize>,
    pub fusion_hidden: usize,
    pub num_points: usize,
    pub cloud_scale_m: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Io,
            backbone: BackboneVariant::TinyConv,
            input_height: 64,
            input_width: 64,
            conv_widths: vec![8, 16, 32, 64],
            fc_widths: vec![64],
            depth_conv_widths: vec![8, 16, 32, 64],
            depth_fc_widths: vec![64],
            pn_widths: vec![64, 64, 128, 1024],
            fusion_hidden: 256,
            num_points: 16384,
            cloud_scale_m: 120.0,
        }
    }
}

/// Dataset-side settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub max_speed_kmh: f64,
    pub fraction: f64,
    pub fraction_mode: FractionMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            max_speed_kmh: 60.0,
            fraction: 1.0,
            fraction_mode: FractionMode::Head,
        }
    }
}

/// Metric-reporting settings. Curve thresholds mirror the reporting units:
/// degrees for angle, km/h for speed.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub report_threshold: f64,
    pub sigma_angle: f64,
    pub sigma_speed: f64,
    pub angle_thresholds_deg: Vec<f64>,
    pub speed_thresholds_kmh: Vec<f64>,
    pub angle_cut_rad: f64,
    pub stop_cut: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            report_threshold: 5.0,
            sigma_angle: 0.1,
            sigma_speed: 0.1,
            angle_thresholds_deg: vec![
                0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 7.5, 10.0, 12.5, 15.0, 20.0, 25.0,
            ],
            speed_thresholds_kmh: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0],
            angle_cut_rad: 5.0f64.to_radians(),
            stop_cut: 0.1,
        }
    }
}

/// Merged view of everything a command needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneParams,
    pub projection: ProjectionConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            scene: SceneParams::default(),
            projection: ProjectionConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

trait ConfigValue: Sized {
    fn parse_cfg(raw: &str, key: &str) -> Result<Self>;
    fn format_cfg(&self) -> String;
}

macro_rules! impl_config_value_fromstr {
    ($($ty:ty),+) => {$(
        impl ConfigValue for $ty {
            fn parse_cfg(raw: &str, key: &str) -> Result<Self> {
                raw.trim().parse::<$ty>().map_err(|_| {
                    Error::Config(format!("bad value '{raw}' for key '{key}'"))
                })
            }
            fn format_cfg(&self) -> String {
                format!("{self}")
            }
        }
    )+};
}

impl_config_value_fromstr!(u64, usize, f64);

impl ConfigValue for Vec<usize> {
    fn parse_cfg(raw: &str, key: &str) -> Result<Self> {
        raw.split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad value '{raw}' for key '{key}'")))
            })
            .collect()
    }

    fn format_cfg(&self) -> String {
        self.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl ConfigValue for Vec<f64> {
    fn parse_cfg(raw: &str, key: &str) -> Result<Self> {
        raw.split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad value '{raw}' for key '{key}'")))
            })
            .collect()
    }

    fn format_cfg(&self) -> String {
        self.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl ConfigValue for ModelKind {
    fn parse_cfg(raw: &str, _key: &str) -> Result<Self> {
        raw.trim().parse()
    }

    fn format_cfg(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for BackboneVariant {
    fn parse_cfg(raw: &str, _key: &str) -> Result<Self> {
        raw.trim().parse()
    }

    fn format_cfg(&self) -> String {
        match self {
            BackboneVariant::Nvidia => "nvidia".into(),
            BackboneVariant::TinyConv => "tinyconv".into(),
        }
    }
}

impl ConfigValue for FractionMode {
    fn parse_cfg(raw: &str, _key: &str) -> Result<Self> {
        raw.trim().parse()
    }

    fn format_cfg(&self) -> String {
        match self {
            FractionMode::Head => "head".into(),
            FractionMode::Random => "random".into(),
        }
    }
}

macro_rules! config_schema {
    ($(($key:literal, $($path:tt)+)),+ $(,)?) => {
        /// Every recognized `section.key` name.
        pub const SCHEMA: &[&str] = &[$($key),+];

        impl RunConfig {
            /// Assigns one key from its textual value.
            pub fn set_key(&mut self, key: &str, raw: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$($path)+ = ConfigValue::parse_cfg(raw, key)?;
                        Ok(())
                    })+
                    _ => Err(Error::Config(format!("unknown config key '{key}'"))),
                }
            }

            /// Canonical textual value of one key.
            pub fn get_key(&self, key: &str) -> Result<String> {
                match key {
                    $($key => Ok(self.$($path)+.format_cfg()),)+
                    _ => Err(Error::Config(format!("unknown config key '{key}'"))),
                }
            }
        }
    };
}

config_schema!(
    ("run.seed", seed),
    ("scene.curvature_min", scene.curvature_range.0),
    ("scene.curvature_max", scene.curvature_range.1),
    ("scene.obstacle_min_m", scene.obstacle_range_m.0),
    ("scene.obstacle_max_m", scene.obstacle_range_m.1),
    ("scene.image_noise", scene.image_noise),
    ("scene.cloud_noise", scene.cloud_noise),
    ("scene.train_count", scene.counts.train),
    ("scene.val_count", scene.counts.val),
    ("scene.test_count", scene.counts.test),
    ("scene.image_height", scene.image_height),
    ("scene.image_width", scene.image_width),
    ("scene.ground_points", scene.ground_points),
    ("scene.obstacle_points", scene.obstacle_points),
    ("scene.v_max_kmh", scene.v_max_kmh),
    ("scene.wheelbase_m", scene.wheelbase_m),
    ("projection.h_fov_deg", projection.h_fov_deg),
    ("projection.v_fov_deg", projection.v_fov_deg),
    ("projection.height", projection.height),
    ("projection.width", projection.width),
    ("projection.max_range_m", projection.max_range_m),
    ("model.kind", model.kind),
    ("model.backbone", model.backbone),
    ("model.input_height", model.input_height),
    ("model.input_width", model.input_width),
    ("model.conv_widths", model.conv_widths),
    ("model.fc_widths", model.fc_widths),
    ("model.depth_conv_widths", model.depth_conv_widths),
    ("model.depth_fc_widths", model.depth_fc_widths),
    ("model.pn_widths", model.pn_widths),
    ("model.fusion_hidden", model.fusion_hidden),
    ("model.num_points", model.num_points),
    ("model.cloud_scale_m", model.cloud_scale_m),
    ("train.epochs", train.epochs),
    ("train.batch_size", train.batch_size),
    ("train.learning_rate", train.learning_rate),
    ("train.beta1", train.beta1),
    ("train.beta2", train.beta2),
    ("train.eps", train.eps),
    ("train.angle_tolerance_rad", train.angle_tolerance_rad),
    ("train.speed_tolerance", train.speed_tolerance),
    ("train.angle_normalizer", train.angle_normalizer),
    ("train.split_train", train.split.0),
    ("train.split_val", train.split.1),
    ("train.split_test", train.split.2),
    ("data.max_speed_kmh", data.max_speed_kmh),
    ("data.fraction", data.fraction),
    ("data.fraction_mode", data.fraction_mode),
    ("eval.report_threshold", eval.report_threshold),
    ("eval.sigma_angle", eval.sigma_angle),
    ("eval.sigma_speed", eval.sigma_speed),
    ("eval.angle_thresholds_deg", eval.angle_thresholds_deg),
    ("eval.speed_thresholds_kmh", eval.speed_thresholds_kmh),
    ("eval.angle_cut_rad", eval.angle_cut_rad),
    ("eval.stop_cut", eval.stop_cut),
);

impl RunConfig {
    /// Parses a `[section]` / `key = value` file on top of the current
    /// values.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pstr = path.display().to_string();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: pstr.clone(),
                line: lineno,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            let full = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{}.{}", section, key.trim())
            };
            self.set_key(&full, value.trim()).map_err(|e| Error::Parse {
                path: pstr.clone(),
                line: lineno,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// The image backbone implied by the model section.
    pub fn image_backbone(&self) -> BackboneSpec {
        match self.model.backbone {
            BackboneVariant::Nvidia => BackboneSpec::nvidia(),
            BackboneVariant::TinyConv => BackboneSpec::tiny(
                [3, self.model.input_height, self.model.input_width],
                self.model.conv_widths.clone(),
                self.model.fc_widths.clone(),
            ),
        }
    }

    /// Depth branch over the projected 2×H×W range image (PCM).
    pub fn depth_backbone(&self) -> BackboneSpec {
        BackboneSpec::tiny(
            [2, self.projection.height, self.projection.width],
            self.model.depth_conv_widths.clone(),
            self.model.depth_fc_widths.clone(),
        )
    }

    fn pipeline(&self) -> PipelineSpec {
        PipelineSpec {
            max_speed_kmh: self.data.max_speed_kmh,
            projection: (self.model.kind == ModelKind::Pcm).then_some(self.projection),
            num_points: self.model.num_points,
            cloud_scale_m: self.model.cloud_scale_m,
        }
    }

    /// Builds the configured model with seeded initialization.
    pub fn build_model(&self) -> Result<Model> {
        let mut model = match self.model.kind {
            ModelKind::Io => build_io_model(self.image_backbone(), self.seed)?,
            ModelKind::Pcm => build_pcm_model(
                self.image_backbone(),
                self.depth_backbone(),
                FusionSpec {
                    hidden_width: self.model.fusion_hidden,
                },
                self.seed,
            )?,
            ModelKind::Pn => build_pn_model(
                self.image_backbone(),
                PointNetSpec {
                    mlp_widths: self.model.pn_widths.clone(),
                },
                FusionSpec {
                    hidden_width: self.model.fusion_hidden,
                },
                self.seed,
            )?,
        };
        model.spec.pipeline = self.pipeline();
        model.spec.validate()?;
        Ok(model)
    }

    /// Training config with the run seed folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}
