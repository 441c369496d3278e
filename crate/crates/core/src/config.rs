//! Layered experiment configuration.
//!
//! Resolution order: built-in profile (`desk` or `paper`), then the TOML
//! file, then `ADAPCSI_<SECTION>__<KEY>` environment variables, then
//! `--set section.key=value` flags. Unknown keys and type errors report the
//! offending key path; cross-field checks run before any compute starts.
//!
//! ```toml
//! profile = "desk"
//! output_dir = "runs/desk"
//!
//! [preprocess]
//! nc = 16
//! crs = ["1/8", "1/16"]
//!
//! [training]
//! epochs_step1 = 200
//! ```

use crate::channel::{DatasetConfig, OfdmConfig, TraceConfig, UlaConfig};
use crate::model::{ModelDims, TrainConfig};
use crate::preprocess::CompressionRatio;
use crate::scene::SceneParams;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const ENV_PREFIX: &str = "ADAPCSI_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config key `{path}`: {message}")]
    Key { path: String, message: String },
    #[error("override `{0}` must look like section.key=value")]
    BadOverride(String),
    #[error("inconsistent config: `{a}` and `{b}`: {detail}")]
    Inconsistent { a: &'static str, b: &'static str, detail: String },
    #[error("invalid config value `{key}`: {detail}")]
    Invalid { key: &'static str, detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(format!("unknown profile `{other}` (expected desk or paper)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    /// Room geometry and wall sampling, under `[scene.room]`.
    pub room: SceneParams,
    /// Scene-graph raster size `G`.
    pub grid: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub subcarriers: usize,
    pub center_freq: f64,
    pub bandwidth: f64,
    pub antennas: usize,
    pub antenna_spacing: f64,
    pub max_reflections: usize,
    pub diffraction: bool,
    pub cutoff_db: f64,
    pub wall_margin: f64,
    pub bs_clearance: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    pub nc: usize,
    pub crs: Vec<CompressionRatio>,
    pub projection_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub epochs_step1: usize,
    pub epochs_step2: usize,
    pub lr: f64,
    pub lr_step2: f64,
    pub patience: usize,
    /// Stop Step 2 after this many epochs without validation improvement;
    /// 0 runs every epoch.
    pub step2_early_stop: usize,
    /// Training seeds; headline numbers are medians over them.
    pub seeds: Vec<u64>,
    pub online_lr: f64,
    pub online_epochs: usize,
    pub online_early_stop: usize,
    pub online_budgets: Vec<usize>,
    /// Extra samples drawn in the designated online environment; the first
    /// `online_val` of them drive early stopping.
    pub online_pool: usize,
    pub online_val: usize,
    /// CR used for the online and switch experiments.
    pub focus_cr: CompressionRatio,
    pub switch_min_samples: usize,
    pub switch_nlos: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train_envs: usize,
    pub val_envs: usize,
    pub test_envs: usize,
    pub samples_per_env: usize,
    /// Index into the test environments used for online fine-tuning.
    pub online_env: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub output_dir: PathBuf,
    /// Write wall-clock training times into result files (breaks
    /// byte-for-byte reproducibility of those files).
    pub report_timing: bool,
    pub scene: SceneSection,
    pub channel: ChannelSection,
    pub preprocess: PreprocessSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub split: SplitSection,
}

fn cr(s: &str) -> CompressionRatio {
    s.parse().expect("built-in ratio")
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            output_dir: PathBuf::from("runs/desk"),
            report_timing: false,
            scene: SceneSection { room: SceneParams::default(), grid: 32, seed: 1 },
            channel: ChannelSection {
                subcarriers: 64,
                center_freq: 5.8e9,
                bandwidth: 20e6,
                antennas: 8,
                antenna_spacing: 0.5,
                max_reflections: 2,
                diffraction: true,
                cutoff_db: 60.0,
                wall_margin: 0.1,
                bs_clearance: 0.5,
                seed: 2,
            },
            preprocess: PreprocessSection {
                nc: 16,
                crs: vec![cr("1/8"), cr("1/16"), cr("1/24"), cr("1/32")],
                projection_seed: 3,
            },
            model: ModelSection { alpha: 0.6 },
            training: TrainingSection {
                batch_size: 200,
                epochs_step1: 200,
                epochs_step2: 100,
                lr: 1e-3,
                lr_step2: 3e-5,
                patience: 30,
                step2_early_stop: 10,
                seeds: vec![0, 1, 2],
                online_lr: 1e-4,
                online_epochs: 200,
                online_early_stop: 20,
                online_budgets: vec![0, 50, 100, 200, 400, 800],
                online_pool: 900,
                online_val: 100,
                focus_cr: cr("1/16"),
                switch_min_samples: 200,
                switch_nlos: false,
            },
            split: SplitSection { train_envs: 40, val_envs: 8, test_envs: 8, samples_per_env: 200, online_env: 0 },
        }
    }

    /// Reference-scale values: 256 subcarriers truncated to 32 delay rows,
    /// a 100×100 scene graph, 160/20/20 environments of 1,000 samples,
    /// 1,000 epochs.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.profile = Profile::Paper;
        c.output_dir = PathBuf::from("runs/paper");
        c.scene.grid = 100;
        c.channel.subcarriers = 256;
        c.preprocess.nc = 32;
        c.training.epochs_step1 = 1000;
        c.training.epochs_step2 = 1000;
        c.training.lr_step2 = 1e-3;
        c.training.step2_early_stop = 0;
        c.training.online_budgets = vec![0, 500, 1000, 2000, 3000, 4000];
        c.training.online_pool = 5000;
        c.training.online_val = 500;
        c.training.switch_min_samples = 1000;
        c.split = SplitSection { train_envs: 160, val_envs: 20, test_envs: 20, samples_per_env: 1000, online_env: 0 };
        c
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// `N = 2·Nc·Nt`.
    pub fn n(&self) -> usize {
        2 * self.preprocess.nc * self.channel.antennas
    }

    pub fn dims(&self, cr: CompressionRatio) -> ModelDims {
        ModelDims { nc: self.preprocess.nc, nt: self.channel.antennas, m: cr.codeword_len(self.n()), g: self.scene.grid }
    }

    pub fn total_envs(&self) -> usize {
        self.split.train_envs + self.split.val_envs + self.split.test_envs
    }

    pub fn trace(&self) -> TraceConfig {
        TraceConfig {
            max_reflections: self.channel.max_reflections,
            diffraction: self.channel.diffraction,
            cutoff_db: self.channel.cutoff_db,
            center_freq: self.channel.center_freq,
            outer_walls: true,
        }
    }

    pub fn dataset(&self) -> DatasetConfig {
        DatasetConfig {
            samples_per_scene: self.split.samples_per_env,
            seed: self.channel.seed,
            trace: self.trace(),
            ula: UlaConfig { n_antennas: self.channel.antennas, spacing: self.channel.antenna_spacing },
            ofdm: OfdmConfig {
                n_subcarriers: self.channel.subcarriers,
                center_freq: self.channel.center_freq,
                bandwidth: self.channel.bandwidth,
            },
            wall_margin: self.channel.wall_margin,
            bs_clearance: self.channel.bs_clearance,
        }
    }

    pub fn step1(&self, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig { epochs: t.epochs_step1, batch_size: t.batch_size, lr: t.lr, patience: t.patience, early_stop: None, seed }
    }

    pub fn step2(&self, seed: u64) -> TrainConfig {
        let t = &self.training;
        let early_stop = (t.step2_early_stop > 0).then_some(t.step2_early_stop);
        TrainConfig { epochs: t.epochs_step2, lr: t.lr_step2, early_stop, ..self.step1(seed) }
    }

    pub fn online(&self, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.online_epochs,
            batch_size: t.batch_size,
            lr: t.online_lr,
            patience: t.patience,
            early_stop: Some(t.online_early_stop),
            seed,
        }
    }

    /// Cross-field checks; errors name the keys involved.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |key, detail: String| Err(ConfigError::Invalid { key, detail });
        self.scene.room.validate().map_err(|e| ConfigError::Invalid { key: "scene", detail: e.to_string() })?;
        if self.scene.grid < 4 || self.scene.grid % 4 != 0 {
            return inv("scene.grid", format!("{} is not a positive multiple of 4", self.scene.grid));
        }
        if self.preprocess.nc == 0 {
            return inv("preprocess.nc", "must be at least 1".into());
        }
        if self.preprocess.nc > self.channel.subcarriers {
            return Err(ConfigError::Inconsistent {
                a: "preprocess.nc",
                b: "channel.subcarriers",
                detail: format!("cannot keep {} delay rows out of {} subcarriers", self.preprocess.nc, self.channel.subcarriers),
            });
        }
        if self.channel.antennas == 0 || self.channel.subcarriers == 0 {
            return inv("channel.antennas", "antennas and subcarriers must be positive".into());
        }
        if !(self.channel.bandwidth > 0.0 && self.channel.center_freq > self.channel.bandwidth / 2.0) {
            return Err(ConfigError::Inconsistent {
                a: "channel.bandwidth",
                b: "channel.center_freq",
                detail: "bandwidth must be positive and below twice the centre frequency".into(),
            });
        }
        if self.preprocess.crs.is_empty() {
            return inv("preprocess.crs", "at least one compression ratio is required".into());
        }
        for c in self.preprocess.crs.iter().chain(std::iter::once(&self.training.focus_cr)) {
            let m = c.codeword_len(self.n());
            if m == 0 || m > self.n() {
                return Err(ConfigError::Inconsistent {
                    a: "preprocess.crs",
                    b: "preprocess.nc",
                    detail: format!("ratio {c} gives codeword length {m} for N = {}", self.n()),
                });
            }
        }
        if !(0.0..1.0).contains(&self.model.alpha) {
            return inv("model.alpha", format!("{} outside [0, 1)", self.model.alpha));
        }
        let t = &self.training;
        if t.batch_size == 0 {
            return inv("training.batch_size", "must be at least 1".into());
        }
        if !(t.lr > 0.0) || !(t.lr_step2 > 0.0) || !(t.online_lr > 0.0) {
            return inv("training.lr", "learning rates must be positive".into());
        }
        if t.seeds.is_empty() {
            return inv("training.seeds", "at least one seed is required".into());
        }
        let s = &self.split;
        if s.train_envs < 2 {
            return inv("split.train_envs", "step 1 needs at least two training environments".into());
        }
        if s.val_envs == 0 || s.test_envs == 0 || s.samples_per_env == 0 {
            return inv("split", "validation/test environments and samples per environment must be positive".into());
        }
        if s.online_env >= s.test_envs {
            return Err(ConfigError::Inconsistent {
                a: "split.online_env",
                b: "split.test_envs",
                detail: format!("index {} but only {} test environments", s.online_env, s.test_envs),
            });
        }
        if let Some(&k) = t.online_budgets.iter().max() {
            if k + t.online_val > t.online_pool {
                return Err(ConfigError::Inconsistent {
                    a: "training.online_budgets",
                    b: "training.online_pool",
                    detail: format!("budget {k} plus {} early-stop samples exceeds the pool of {}", t.online_val, t.online_pool),
                });
            }
        }
        if t.online_val == 0 {
            return inv("training.online_val", "early stopping needs at least one sample".into());
        }
        Ok(())
    }

    /// Resolves profile defaults, an optional file, environment variables
    /// and `key=value` overrides, then validates.
    pub fn resolve(
        file: Option<&Path>,
        profile: Option<Profile>,
        env: impl IntoIterator<Item = (String, String)>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let text = match file {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::Io { path: p.display().to_string(), source: e })?,
            None => String::new(),
        };
        let mut layer: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let mut env_pairs: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_ascii_lowercase().replace("__", "."), v)))
            .collect();
        env_pairs.sort();
        for (k, v) in env_pairs {
            set_path(&mut layer, &k, &v)?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            set_path(&mut layer, k.trim(), v.trim())?;
        }
        let profile = match (profile, layer.get("profile")) {
            (Some(p), _) => p,
            (None, Some(toml::Value::String(s))) => s.parse().map_err(|m| ConfigError::Key { path: "profile".into(), message: m })?,
            (None, Some(_)) => return Err(ConfigError::Key { path: "profile".into(), message: "expected a string".into() }),
            (None, None) => Profile::Desk,
        };
        layer.insert("profile".into(), toml::Value::String(format!("{profile:?}").to_lowercase()));
        let base = toml::Table::try_from(Self::for_profile(profile)).expect("defaults serialize");
        let merged = merge(base, layer);
        let cfg: Self = serde_path_to_error::deserialize(merged).map_err(|e| ConfigError::Key {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

/// Sets `a.b.c = value`, parsing `value` as a TOML literal and falling back
/// to a plain string.
fn set_path(table: &mut toml::Table, path: &str, value: &str) -> Result<(), ConfigError> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::BadOverride(format!("{path}={value}")));
    }
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(ConfigError::Key { path: path.into(), message: format!("`{p}` is not a section") }),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str, over: &[&str]) -> Result<ExperimentConfig, ConfigError> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, text).unwrap();
        let over: Vec<String> = over.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::resolve(Some(&p), None, Vec::new(), &over)
    }

    #[test]
    fn empty_file_gives_desk_defaults() {
        let c = resolve("", &[]).unwrap();
        assert_eq!(c, ExperimentConfig::desk());
        assert_eq!(c.n(), 256);
        assert_eq!(c.dims(cr("1/24")).m, 11);
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = resolve("[training]\nepochs = 3\n", &[]).unwrap_err();
        match err {
            ConfigError::Key { path, message } => {
                assert_eq!(path, "training.epochs");
                assert!(message.contains("epochs"), "{message}");
            }
            other => panic!("{other}"),
        }
        let err = resolve("[channel]\nsubcarriers = \"many\"\n", &[]).unwrap_err();
        assert!(matches!(err, ConfigError::Key { ref path, .. } if path == "channel.subcarriers"), "{err}");
    }

    #[test]
    fn nc_above_subcarriers_names_both_keys() {
        let err = resolve("[channel]\nsubcarriers = 32\n", &["preprocess.nc=64"]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("preprocess.nc") && msg.contains("channel.subcarriers"), "{msg}");
    }

    #[test]
    fn paper_profile_matches_reference_table() {
        let c = resolve("profile = \"paper\"\n", &[]).unwrap();
        assert_eq!(c.channel.antennas, 8);
        assert_eq!(c.channel.subcarriers, 256);
        assert_eq!(c.channel.center_freq, 5.8e9);
        assert_eq!(c.channel.bandwidth, 20e6);
        assert_eq!((c.scene.room.width, c.scene.room.depth, c.scene.room.height), (10.0, 10.0, 3.0));
        assert_eq!(c.scene.room.bs_position.z, 2.9);
        assert_eq!(c.scene.room.ue_height, 0.8);
        assert_eq!(c.channel.max_reflections, 2);
        assert!(c.channel.diffraction);
        assert_eq!(c.n(), 512);
        assert_eq!(c.scene.grid, 100);
        assert_eq!(c.training.batch_size, 200);
    }

    #[test]
    fn env_and_flag_layers() {
        let env = vec![("ADAPCSI_TRAINING__EPOCHS_STEP1".to_string(), "7".to_string()), ("OTHER".into(), "x".into())];
        let c = ExperimentConfig::resolve(None, None, env.clone(), &["training.epochs_step1=9".into()]).unwrap();
        assert_eq!(c.training.epochs_step1, 9);
        let c = ExperimentConfig::resolve(None, None, env, &[]).unwrap();
        assert_eq!(c.training.epochs_step1, 7);
        let c = ExperimentConfig::resolve(None, None, Vec::new(), &["preprocess.crs=[\"1/4\"]".into()]).unwrap();
        assert_eq!(c.preprocess.crs, vec![cr("1/4")]);
        assert!(ExperimentConfig::resolve(None, None, Vec::new(), &["nonsense".into()]).is_err());
    }

    #[test]
    fn round_trips_through_text() {
        let c = ExperimentConfig::paper();
        let back: ExperimentConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
