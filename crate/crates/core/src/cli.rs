//! Command-line front end. Each subcommand maps onto one pipeline stage and
//! writes a `<stage>.manifest.json` beside its outputs.
//!
//! Exit codes: 0 success, 2 validation error, 3 data error, 4 training
//! divergence.

use crate::autodiff::{Checkpoint, CheckpointError};
use crate::channel::{generate_scene_samples, read_dataset, write_dataset, ChannelError};
use crate::config::{ConfigError, ExperimentConfig, Profile};
use crate::harness::{self, HarnessError, Runner};
use crate::manifest::ManifestBuilder;
use crate::model::{
    forward_adaptive, train_step1, train_step2, HyperNet, ModelDims, ModelError, ModelHeader, ReconNet, Samples, SceneInputs,
};
use crate::preprocess::{CompressionRatio, PreprocessError, PreprocessedDataset, PreprocessedRecord};
use crate::scene::{generate_scenes, load_scene_dir, save_scene_dir, scene_graph_to_model_input, Scene, SceneError};
use clap::{Parser, Subcommand, ValueEnum};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "adapcsi", version, about = "Environment-adaptive CSI feedback testbed")]
pub struct Cli {
    /// TOML config file; unset keys take the profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in profile (desk or paper); overrides `profile` in the file.
    #[arg(long, global = true)]
    pub profile: Option<Profile>,
    /// Override a config key, e.g. `--set training.epochs_step1=50`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SubsetArg {
    All,
    Los,
    Nlos,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate random scenes and their scene graphs.
    GenScenes {
        #[arg(long)]
        out: PathBuf,
        /// Defaults to train + val + test environments.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Ray-trace CSI samples for a scene directory.
    GenCsi {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Samples per scene.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        diffraction: Option<bool>,
        /// Only this scene.
        #[arg(long)]
        scene: Option<u32>,
        /// First per-scene sample index (extra draws for online fine-tuning
        /// start past the regular ones).
        #[arg(long, default_value_t = 0)]
        start: usize,
    },
    /// Angular-delay transform, truncation, normalization and compression.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        nc: Option<usize>,
        #[arg(long)]
        cr: Option<CompressionRatio>,
        /// Projection seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Reuse normalization and projection of an existing preprocessed file.
        #[arg(long)]
        norm_from: Option<PathBuf>,
    },
    /// Train the reconstruction network on the training environments.
    TrainStep1 {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the hypernetwork with the reconstruction network frozen.
    TrainStep2 {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fine-tune a general network on samples of one environment.
    TrainOnline {
        #[arg(long)]
        recon: PathBuf,
        /// Preprocessed extra samples of the target environment; the first
        /// `training.online_val` drive early stopping.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a LOS-only (or NLOS-only) network for the switch baseline.
    TrainSwitch {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        nlos: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint (optionally with a hypernetwork) on a split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        hyper: Option<PathBuf>,
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, value_enum, default_value_t = SubsetArg::All)]
        subset: SubsetArg,
        /// Append-free CSV output; printed to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every experiment and write results and figure CSVs.
    Report {
        /// Defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Validation(String),
    #[error("missing {path}: run `adapcsi {stage}` first")]
    MissingArtifact { path: String, stage: &'static str },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => 2,
            CliError::MissingArtifact { .. } | CliError::Data(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Diverged { .. } => CliError::Diverged(e.to_string()),
            ModelError::DimMismatch { .. } | ModelError::Invalid(_) => CliError::Validation(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Model(m) => m.into(),
            HarnessError::Overlap(..) | HarnessError::EmptySplit(_) => CliError::Validation(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_error!(SceneError, ChannelError, PreprocessError, CheckpointError, std::io::Error);

type Result<T> = std::result::Result<T, CliError>;

fn require(path: &Path, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact { path: path.display().to_string(), stage })
    }
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn create_parent(p: &Path) -> Result<()> {
    std::fs::create_dir_all(parent_dir(p))?;
    Ok(())
}

fn load_scenes(dir: &Path) -> Result<(Vec<Scene>, SceneInputs, usize)> {
    require(&dir.join("manifest.json"), "gen-scenes")?;
    let (manifest, scenes, graphs) = load_scene_dir(dir)?;
    let inputs = graphs.iter().map(|g| (g.scene_id, scene_graph_to_model_input(g).iter().copied().collect())).collect();
    Ok((scenes, inputs, manifest.g))
}

fn load_pp(path: &Path) -> Result<PreprocessedDataset> {
    require(path, "preprocess")?;
    Ok(PreprocessedDataset::read(std::fs::File::open(path).map(std::io::BufReader::new)?)?)
}

fn load_ckpt(path: &Path, stage: &'static str) -> Result<Checkpoint> {
    require(path, stage)?;
    Ok(Checkpoint::load(path)?)
}

fn split_samples(ds: &PreprocessedDataset, ids: &[u32]) -> Samples {
    Samples::from_dataset(ds, |id| ids.contains(&id))
}

fn dataset_dims(ds: &PreprocessedDataset, g: usize) -> ModelDims {
    ModelDims { nc: ds.nc, nt: ds.nt, m: ds.m(), g }
}

/// Rejects a checkpoint trained for another dataset geometry or encoder.
fn check_header(h: &ModelHeader, ds: &PreprocessedDataset) -> Result<()> {
    h.check_dims(&dataset_dims(ds, h.dims.g))?;
    if h.cr != ds.cr || h.projection_seed != ds.projection_seed {
        return Err(CliError::Validation(format!(
            "checkpoint encoder (cr {}, projection seed {}) does not match the dataset (cr {}, projection seed {})",
            h.cr, h.projection_seed, ds.cr, ds.projection_seed
        )));
    }
    Ok(())
}

fn header(kind: &str, ds: &PreprocessedDataset, cfg: &ExperimentConfig, g: usize, seed: u64) -> ModelHeader {
    ModelHeader {
        kind: kind.into(),
        dims: dataset_dims(ds, g),
        alpha: cfg.model.alpha,
        cr: ds.cr,
        seed,
        projection_seed: ds.projection_seed,
    }
}

fn write_report(out: &Path, report: &crate::model::TrainReport) -> Result<PathBuf> {
    let p = out.with_extension("report.json");
    std::fs::write(&p, serde_json::to_string_pretty(report).expect("report serializes"))?;
    Ok(p)
}

fn los_mask(recs: &[&PreprocessedRecord], scenes: &[Scene]) -> Result<Vec<bool>> {
    recs.iter()
        .map(|r| {
            scenes
                .iter()
                .find(|s| s.scene_id == r.scene_id)
                .map(|s| crate::channel::is_los(s, r.ue_position))
                .ok_or_else(|| CliError::Data(format!("scene {} is not in the scene directory", r.scene_id)))
        })
        .collect()
}

pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut set = cli.set.clone();
    if let Command::Preprocess { nc: Some(nc), .. } = &cli.command {
        set.push(format!("preprocess.nc={nc}"));
    }
    Ok(ExperimentConfig::resolve(cli.config.as_deref(), cli.profile, std::env::vars(), &set)?)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    let cfg_text = cfg.to_toml();
    let seed_or = |s: Option<u64>| s.unwrap_or(cfg.training.seeds[0]);
    match cli.command {
        Command::GenScenes { out, count, seed } => {
            let seed = seed.unwrap_or(cfg.scene.seed);
            let m = ManifestBuilder::new("gen-scenes", &cfg_text, Some(seed));
            let scenes = generate_scenes(count.unwrap_or(cfg.total_envs()), seed, &cfg.scene.room)?;
            save_scene_dir(&out, &scenes, &cfg.scene.room, cfg.scene.grid)?;
            let mut outputs = vec![out.join("manifest.json")];
            outputs.extend(scenes.iter().map(|s| out.join(crate::scene::scene_file_name(s.scene_id))));
            m.finish(&out, &outputs)?;
            log::info!("wrote {} scenes to {}", scenes.len(), out.display());
        }
        Command::GenCsi { scenes, out, samples, seed, diffraction, scene, start } => {
            let mut ds = cfg.dataset();
            if let Some(s) = seed {
                ds.seed = s;
            }
            if let Some(d) = diffraction {
                ds.trace.diffraction = d;
            }
            let n = samples.unwrap_or(ds.samples_per_scene);
            if n == 0 {
                return Err(CliError::Validation("--samples must be at least 1".into()));
            }
            let mut m = ManifestBuilder::new("gen-csi", &cfg_text, Some(ds.seed));
            let (all, _, _) = load_scenes(&scenes)?;
            m.input(&scenes.join("manifest.json"))?;
            let selected: Vec<&Scene> = all.iter().filter(|s| scene.is_none_or(|id| s.scene_id == id)).collect();
            if selected.is_empty() {
                return Err(CliError::Validation(format!("scene {scene:?} is not in {}", scenes.display())));
            }
            let mut records = Vec::new();
            for s in selected {
                records.extend(generate_scene_samples(s, start..start + n, &ds)?);
            }
            create_parent(&out)?;
            let f = std::io::BufWriter::new(std::fs::File::create(&out)?);
            write_dataset(f, &records, &ds.ofdm, ds.ula.n_antennas)?;
            m.finish(&parent_dir(&out), &[out.clone()])?;
            log::info!("wrote {} samples to {}", records.len(), out.display());
        }
        Command::Preprocess { input, out, nc: _, cr, seed, norm_from } => {
            require(&input, "gen-csi")?;
            let mut m = ManifestBuilder::new("preprocess", &cfg_text, None);
            m.input(&input)?;
            let (h, channels) = read_dataset(std::io::BufReader::new(std::fs::File::open(&input)?))?;
            let nc = cfg.preprocess.nc;
            if nc > h.subcarriers as usize {
                return Err(CliError::Validation(format!(
                    "`preprocess.nc` = {nc} exceeds the {} subcarriers of {} (`channel.subcarriers`)",
                    h.subcarriers,
                    input.display()
                )));
            }
            let ds = match norm_from {
                Some(p) => {
                    let base = load_pp(&p)?;
                    m.input(&p)?;
                    if cr.is_some_and(|c| c != base.cr) || seed.is_some_and(|s| s != base.projection_seed) || base.nc != nc {
                        return Err(CliError::Validation(format!("--cr/--seed/--nc disagree with {}", p.display())));
                    }
                    PreprocessedDataset::with_norm(&channels, nc, base.cr, base.projection_seed, base.norm)?
                }
                None => {
                    let cr = cr.unwrap_or(cfg.training.focus_cr);
                    let train = harness::SplitSpec::from_config(&cfg).train_env_ids;
                    PreprocessedDataset::build(&channels, nc, cr, seed.unwrap_or(cfg.preprocess.projection_seed), &train)?
                }
            };
            create_parent(&out)?;
            ds.write(std::io::BufWriter::new(std::fs::File::create(&out)?))?;
            m.finish(&parent_dir(&out), &[out.clone()])?;
        }
        Command::TrainStep1 { data, out, seed } => {
            let seed = seed_or(seed);
            let mut m = ManifestBuilder::new("train-step1", &cfg_text, Some(seed));
            let ds = load_pp(&data)?;
            m.input(&data)?;
            let split = harness::SplitSpec::from_config(&cfg);
            let (train, val) = (split_samples(&ds, &split.train_env_ids), split_samples(&ds, &split.val_env_ids));
            let mut net = ReconNet::new(dataset_dims(&ds, cfg.scene.grid), cfg.model.alpha, seed)?;
            let report = train_step1(&mut net, &train, &val, &cfg.step1(seed), &split.test_set())?;
            create_parent(&out)?;
            net.to_checkpoint(&header("reconnet", &ds, &cfg, cfg.scene.grid, seed), None).save(&out)?;
            let r = write_report(&out, &report)?;
            m.finish(&parent_dir(&out), &[out.clone(), r])?;
        }
        Command::TrainStep2 { data, scenes, recon, out, seed } => {
            let seed = seed_or(seed);
            let mut m = ManifestBuilder::new("train-step2", &cfg_text, Some(seed));
            let ds = load_pp(&data)?;
            let (_, inputs, g) = load_scenes(&scenes)?;
            let (net, h) = ReconNet::from_checkpoint(&load_ckpt(&recon, "train-step1")?)?;
            for p in [&data, &scenes.join("manifest.json"), &recon] {
                m.input(p)?;
            }
            check_header(&h, &ds)?;
            let dims = ModelDims { g, ..h.dims };
            let split = harness::SplitSpec::from_config(&cfg);
            let (train, val) = (split_samples(&ds, &split.train_env_ids), split_samples(&ds, &split.val_env_ids));
            let mut hn = HyperNet::new(dims, seed)?;
            let report = train_step2(&net, &mut hn, &train, &val, &inputs, &cfg.step2(seed), &split.test_set())?;
            create_parent(&out)?;
            let hdr = ModelHeader { kind: "hypernet".into(), dims, seed, ..h };
            hn.to_checkpoint(&hdr, None).save(&out)?;
            let r = write_report(&out, &report)?;
            m.finish(&parent_dir(&out), &[out.clone(), r])?;
        }
        Command::TrainOnline { recon, pool, budget, out, seed } => {
            let seed = seed_or(seed);
            let mut m = ManifestBuilder::new("train-online", &cfg_text, Some(seed));
            let ds = load_pp(&pool)?;
            let (mut net, h) = ReconNet::from_checkpoint(&load_ckpt(&recon, "train-step1")?)?;
            m.input(&pool)?;
            m.input(&recon)?;
            check_header(&h, &ds)?;
            let all = Samples::from_dataset(&ds, |_| true);
            let envs = all.scenes();
            if envs.len() != 1 {
                return Err(CliError::Data(format!("the fine-tuning pool must hold one environment, found {envs:?}")));
            }
            let n_val = cfg.training.online_val;
            let available = all.len().saturating_sub(n_val);
            if budget == 0 || budget > available {
                return Err(HarnessError::Budget { budget, available }.into());
            }
            let stop: Vec<usize> = (0..n_val).collect();
            let fit: Vec<usize> = (n_val..n_val + budget).collect();
            let forbidden: BTreeSet<u32> = harness::SplitSpec::from_config(&cfg).test_set().difference(&envs).copied().collect();
            let report = train_step1(&mut net, &all.select(&fit), &all.select(&stop), &cfg.online(seed), &forbidden)?;
            create_parent(&out)?;
            net.to_checkpoint(&ModelHeader { seed, ..h }, None).save(&out)?;
            let r = write_report(&out, &report)?;
            m.finish(&parent_dir(&out), &[out.clone(), r])?;
        }
        Command::TrainSwitch { data, scenes, out, nlos, seed } => {
            let seed = seed_or(seed);
            let mut m = ManifestBuilder::new("train-switch", &cfg_text, Some(seed));
            let ds = load_pp(&data)?;
            let (scene_list, _, g) = load_scenes(&scenes)?;
            m.input(&data)?;
            m.input(&scenes.join("manifest.json"))?;
            let split = harness::SplitSpec::from_config(&cfg);
            let pick = |ids: &[u32]| -> Result<Samples> {
                let recs: Vec<&PreprocessedRecord> = ds.records.iter().filter(|r| ids.contains(&r.scene_id)).collect();
                let mask = los_mask(&recs, &scene_list)?;
                let keep: Vec<&PreprocessedRecord> = recs.into_iter().zip(mask).filter(|(_, l)| *l != nlos).map(|(r, _)| r).collect();
                Ok(Samples::from_records(&keep, ds.n(), ds.m()))
            };
            let (train, val) = (pick(&split.train_env_ids)?, pick(&split.val_env_ids)?);
            let kind = if nlos { "NLOS" } else { "LOS" };
            let min = cfg.training.switch_min_samples;
            if train.len() < min || val.is_empty() {
                let (split, found, required) = if train.len() < min { ("train", train.len(), min) } else { ("val", 0, 1) };
                return Err(HarnessError::Insufficient { kind, split, found, required }.into());
            }
            let mut net = ReconNet::new(dataset_dims(&ds, g), cfg.model.alpha, seed)?;
            let report = train_step1(&mut net, &train, &val, &cfg.step1(seed), &split.test_set())?;
            create_parent(&out)?;
            net.to_checkpoint(&header("reconnet", &ds, &cfg, g, seed), None).save(&out)?;
            let r = write_report(&out, &report)?;
            m.finish(&parent_dir(&out), &[out.clone(), r])?;
        }
        Command::Eval { data, recon, hyper, scenes, split, subset, out } => {
            let ds = load_pp(&data)?;
            let (net, h) = ReconNet::from_checkpoint(&load_ckpt(&recon, "train-step1")?)?;
            check_header(&h, &ds)?;
            let sp = harness::SplitSpec::from_config(&cfg);
            let ids = match split {
                SplitArg::Train => &sp.train_env_ids,
                SplitArg::Val => &sp.val_env_ids,
                SplitArg::Test => &sp.test_env_ids,
            };
            let mut recs: Vec<&PreprocessedRecord> = ds.records.iter().filter(|r| ids.contains(&r.scene_id)).collect();
            let loaded = match &scenes {
                Some(dir) => Some(load_scenes(dir)?),
                None => None,
            };
            if subset != SubsetArg::All {
                let (scene_list, _, _) = loaded.as_ref().ok_or_else(|| CliError::Validation("--subset los/nlos needs --scenes".into()))?;
                let mask = los_mask(&recs, scene_list)?;
                recs = recs.into_iter().zip(mask).filter(|(_, l)| *l == (subset == SubsetArg::Los)).map(|(r, _)| r).collect();
            }
            let samples = Samples::from_records(&recs, ds.n(), ds.m());
            let (method, pred) = match &hyper {
                Some(p) => {
                    let (hn, hh) = HyperNet::from_checkpoint(&load_ckpt(p, "train-step2")?)?;
                    check_header(&hh, &ds)?;
                    let (_, inputs, g) = loaded.as_ref().ok_or_else(|| CliError::Validation("--hyper needs --scenes".into()))?;
                    hh.check_dims(&ModelDims { g: *g, ..h.dims })?;
                    (harness::Method::AdapCsiNet, forward_adaptive(&net, &hn, &samples.s, &samples.scene_ids, inputs)?)
                }
                None => (harness::Method::General, net.forward_baseline(&samples.s)?),
            };
            let (lin, db) = harness::score(&pred, &samples, &ds.norm)?;
            let rec = harness::MetricsRecord {
                method,
                cr: ds.cr,
                cr_effective: ds.m() as f64 / ds.n() as f64,
                seed: h.seed,
                split: if split == SplitArg::Test { harness::EnvSplit::Test } else { harness::EnvSplit::Val },
                subset: match subset {
                    SubsetArg::All => harness::Subset::All,
                    SubsetArg::Los => harness::Subset::Los,
                    SubsetArg::Nlos => harness::Subset::Nlos,
                },
                nmse_linear: lin,
                nmse_db: db,
                train_time_s: 0.0,
            };
            let csv = harness::results_csv(&[rec]);
            match out {
                Some(p) => {
                    create_parent(&p)?;
                    std::fs::write(&p, &csv)?;
                }
                None => print!("{csv}"),
            }
        }
        Command::Report { out } => {
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let seed = cfg.training.seeds.first().copied();
            let m = ManifestBuilder::new("report", &cfg_text, seed);
            let mut runner = Runner::new(cfg.clone())?;
            let report = harness::run_report(&mut runner)?;
            let mut outputs = report.write(&dir)?;
            let c = dir.join("config.toml");
            std::fs::write(&c, &cfg_text)?;
            outputs.push(c);
            m.finish(&dir, &outputs)?;
            print!("{}", harness::fig5_csv(&report.cr_sweep));
        }
    }
    Ok(())
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
