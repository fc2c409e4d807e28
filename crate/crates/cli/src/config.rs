//! Pipeline configuration: one versioned TOML file, overridable from the
//! command line with `--set section.key=value`.
//!
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use dynregion::density::{Normalization, DEFAULT_SIGMA_FACTOR};
use dynregion::detections::HeightAnchor;
use dynregion::division::DivisionMode;
use dynregion::fusion::{CountAnchor, DEFAULT_CONFIDENCE_THRESHOLD};
use dynregion::idcnn::{NetworkConfig, DEFAULT_LEARNING_RATE};
use dynregion::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    #[serde(default = "default_scene_id")]
    pub scene_id: String,
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    /// Frame size; read from the first frame image when absent.
    #[serde(default)]
    pub geometry: Option<Geometry>,
    #[serde(default)]
    pub division: DivisionConfig,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub synth: SynthConfig,
}

fn default_scene_id() -> String {
    "scene".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub frames: PathBuf,
    pub detections: PathBuf,
    pub heads: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivisionConfig {
    pub alpha: f64,
    pub confidence_threshold: f64,
    pub mode: DivisionMode,
    pub height_anchor: HeightAnchor,
}

impl Default for DivisionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            mode: DivisionMode::Envelope,
            height_anchor: HeightAnchor::Center,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub sigma_factor: f64,
    pub normalization: Normalization,
    /// Also write false-color previews of every map.
    pub previews: bool,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            sigma_factor: DEFAULT_SIGMA_FACTOR,
            normalization: Normalization::PerKernel,
            previews: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub steps: u64,
    /// 0 trains on the full set every step.
    pub batch_size: usize,
    /// Add a mirrored copy of every training frame.
    pub flip: bool,
    /// Leading share of frames, by id, used for training; the rest are held out.
    pub train_fraction: f64,
    pub precision: Precision,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            steps: 200,
            batch_size: 0,
            flip: true,
            train_fraction: 0.6,
            precision: Precision::F32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Point of a detection that decides whether it is nearby.
    pub nearby_anchor: CountAnchor,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            nearby_anchor: CountAnchor::Head,
        }
    }
}

/// Parses `key=value` where `value` is a TOML literal; bare words are taken as strings.
fn parse_override(item: &str) -> Result<(Vec<String>, toml::Value), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{item}` is not key=value")))?;
    let key: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if key.iter().any(String::is_empty) {
        return Err(CliError::Config(format!("override `{item}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_owned()),
    };
    Ok((key, value))
}

fn apply_override(table: &mut toml::Table, key: &[String], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = key.split_last().expect("nonempty key");
    let mut cur = table;
    for seg in parents {
        let entry = cur
            .entry(seg.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{}` is not a table", key.join("."))))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl PipelineConfig {
    /// Reads `path`, applies overrides in order and validates the result.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, overrides)
    }

    pub fn from_toml(text: &str, base: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        for item in overrides {
            let (key, value) = parse_override(item)?;
            apply_override(&mut table, &key, value)?;
        }
        let mut cfg: PipelineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("invalid config: {e}")))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.paths.frames,
            &mut self.paths.detections,
            &mut self.paths.heads,
            &mut self.paths.output,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.scene_id.is_empty() {
            return bad("scene_id must not be empty".into());
        }
        let d = &self.division;
        if !(d.alpha > 0.0 && d.alpha < 1.0) {
            return bad(format!("division.alpha must lie in (0, 1), got {}", d.alpha));
        }
        if !d.confidence_threshold.is_finite() {
            return bad("division.confidence_threshold must be finite".into());
        }
        if !(self.density.sigma_factor > 0.0 && self.density.sigma_factor.is_finite()) {
            return bad(format!("density.sigma_factor must be positive, got {}", self.density.sigma_factor));
        }
        let t = &self.training;
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return bad(format!("training.learning_rate must be finite and nonnegative, got {}", t.learning_rate));
        }
        if !(t.train_fraction > 0.0 && t.train_fraction <= 1.0) {
            return bad(format!("training.train_fraction must lie in (0, 1], got {}", t.train_fraction));
        }
        if let Some(g) = self.geometry {
            if g.width == 0 || g.height == 0 {
                return bad("geometry must be nonzero".into());
            }
        }
        self.network.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Fails unless every listed input path exists.
    pub fn require(&self, inputs: &[Input]) -> Result<(), CliError> {
        for input in inputs {
            let path = match input {
                Input::Frames => &self.paths.frames,
                Input::Detections => &self.paths.detections,
                Input::Heads => &self.paths.heads,
            };
            if !path.exists() {
                return Err(CliError::Config(format!("{input:?} path {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Input {
    Frames,
    Detections,
    Heads,
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1
[paths]
frames = "frames"
detections = "det.txt"
heads = "heads.txt"
output = "out"
"#;

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = PipelineConfig::from_toml(MINIMAL, Path::new("/data/s1"), &[]).unwrap();
        assert_eq!(cfg.paths.detections, PathBuf::from("/data/s1/det.txt"));
        assert_eq!(cfg.division.alpha, 0.3);
        assert_eq!(cfg.density.sigma_factor, 0.15);
        assert_eq!(cfg.training.learning_rate, 1e-5);
        assert_eq!(cfg.network, NetworkConfig::tiny());
        assert_eq!(cfg.division.mode, DivisionMode::Envelope);
    }

    #[test]
    fn overrides_take_precedence() {
        let cfg = PipelineConfig::from_toml(
            MINIMAL,
            Path::new("/"),
            &[
                "division.mode=strict".into(),
                "training.steps = 7".into(),
                "network.branch_widths=[1,2,3]".into(),
                "scene_id=lobby".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.division.mode, DivisionMode::Strict);
        assert_eq!(cfg.training.steps, 7);
        assert_eq!(cfg.network.branch_widths, [1, 2, 3]);
        assert_eq!(cfg.scene_id, "lobby");
    }

    #[test]
    fn rejects_invalid_values() {
        let root = Path::new("/");
        for o in ["division.alpha=1.0", "version=2", "training.learning_rate=-1", "division.mode=diagonal", "nope"] {
            let err = PipelineConfig::from_toml(MINIMAL, root, &[o.into()]).unwrap_err();
            assert!(matches!(err, CliError::Config(_)), "{o}: {err}");
        }
        assert!(PipelineConfig::from_toml("version = 1", root, &[]).is_err());
        assert!(PipelineConfig::from_toml(&format!("{MINIMAL}\n[extra]\nx = 1"), root, &[]).is_err());
    }

    #[test]
    fn echo_roundtrips() {
        let cfg = PipelineConfig::from_toml(MINIMAL, Path::new("/x"), &[]).unwrap();
        let again = PipelineConfig::from_toml(&cfg.to_toml(), Path::new("/elsewhere"), &[]).unwrap();
        assert_eq!(cfg, again);
    }
}
