//! Experiment runner: CR sweep against the general feedback network, the
//! online fine-tuning budget sweep, and the LOS/NLOS switch comparison.
//!
//! All scores are NMSE on denormalized CSI. Trained models are cached per
//! `(cr, seed)` so the three experiments share one Step 1 / Step 2 run.

use crate::channel::{generate_dataset, generate_scene_samples, is_los, ChannelError, ChannelMatrix};
use crate::config::ExperimentConfig;
use crate::model::{
    forward_adaptive, train_step1, train_step2, HyperNet, ModelDims, ModelError, ReconNet, Samples, SceneInputs, TrainReport,
};
use crate::preprocess::{CompressionRatio, MinMax, PreprocessError, PreprocessedDataset, PreprocessedRecord};
use crate::scene::{generate_scenes, rasterize, scene_graph_to_model_input, Scene, SceneError};
use crate::seed;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("nmse: shapes {0:?} and {1:?} differ")]
    Shape(Vec<usize>, Vec<usize>),
    #[error("nmse: empty batch")]
    Empty,
    #[error("nmse: truth sample {0} has zero norm")]
    ZeroNorm(usize),
    #[error("split: environment {0} is in both {1} and {2}")]
    Overlap(u32, &'static str, &'static str),
    #[error("split: {0} has no environments")]
    EmptySplit(&'static str),
    #[error("online budget {budget} exceeds the {available} fine-tuning samples available")]
    Budget { budget: usize, available: usize },
    #[error("too few {kind} samples in the {split} split for the switch baseline: {found} < {required}")]
    Insufficient { kind: &'static str, split: &'static str, found: usize, required: usize },
    #[error("split hygiene: {method} took gradient steps on environment {scene}")]
    Hygiene { method: String, scene: u32 },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

type Result<T> = std::result::Result<T, HarnessError>;

/// `10·log10`, with exact zero mapped to `-inf`.
pub fn to_db(linear: f64) -> f64 {
    if linear == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * linear.log10()
    }
}

/// Mean over samples (rows) of `‖ĥ − h‖² / ‖h‖²`, as `(linear, dB)`.
pub fn nmse(recon: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<(f64, f64)> {
    if recon.shape() != truth.shape() {
        return Err(HarnessError::Shape(recon.shape().to_vec(), truth.shape().to_vec()));
    }
    if truth.nrows() == 0 {
        return Err(HarnessError::Empty);
    }
    let mut total = 0.0;
    for (i, (r, t)) in recon.rows().into_iter().zip(truth.rows()).enumerate() {
        let power: f64 = t.iter().map(|v| v * v).sum();
        if power == 0.0 {
            return Err(HarnessError::ZeroNorm(i));
        }
        let err: f64 = r.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        total += err / power;
    }
    let lin = total / truth.nrows() as f64;
    Ok((lin, to_db(lin)))
}

/// Undoes min-max normalization and the per-sample power scaling.
pub fn denormalize_rows(h: &Array2<f64>, scales: &[f64], norm: &MinMax) -> Array2<f64> {
    let mut out = h.mapv(|v| norm.inverse(v));
    for (mut row, &s) in out.rows_mut().into_iter().zip(scales) {
        row *= s;
    }
    out
}

/// NMSE of normalized predictions against `truth`, in physical units.
pub fn score(pred: &Array2<f64>, truth: &Samples, norm: &MinMax) -> Result<(f64, f64)> {
    let p = denormalize_rows(pred, &truth.scales, norm);
    let t = denormalize_rows(&truth.h, &truth.scales, norm);
    nmse(p.view(), t.view())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    AdapCsiNet,
    General,
    Online(usize),
    SwitchLos,
    SwitchNlos,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::AdapCsiNet => write!(f, "adapcsinet"),
            Method::General => write!(f, "general"),
            Method::Online(k) => write!(f, "online({k})"),
            Method::SwitchLos => write!(f, "switch-los"),
            Method::SwitchNlos => write!(f, "switch-nlos"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EnvSplit {
    Val,
    Test,
}

impl fmt::Display for EnvSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvSplit::Val => "val",
            EnvSplit::Test => "test",
        })
    }
}

/// Which samples of the split were scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    All,
    /// The held-out samples of one environment.
    Env(u32),
    Los,
    Nlos,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subset::All => write!(f, "all"),
            Subset::Env(e) => write!(f, "env{e}"),
            Subset::Los => write!(f, "los"),
            Subset::Nlos => write!(f, "nlos"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: Method,
    pub cr: CompressionRatio,
    pub cr_effective: f64,
    pub seed: u64,
    pub split: EnvSplit,
    pub subset: Subset,
    pub nmse_linear: f64,
    pub nmse_db: f64,
    pub train_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_env_ids: Vec<u32>,
    pub val_env_ids: Vec<u32>,
    pub test_env_ids: Vec<u32>,
    pub samples_per_env: usize,
    pub seed: u64,
}

impl SplitSpec {
    /// Consecutive scene ids: training first, then validation, then test.
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let s = &cfg.split;
        let (a, b) = (s.train_envs as u32, (s.train_envs + s.val_envs) as u32);
        Self {
            train_env_ids: (0..a).collect(),
            val_env_ids: (a..b).collect(),
            test_env_ids: (b..b + s.test_envs as u32).collect(),
            samples_per_env: s.samples_per_env,
            seed: cfg.scene.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let groups = [("train", &self.train_env_ids), ("val", &self.val_env_ids), ("test", &self.test_env_ids)];
        let mut owner: BTreeMap<u32, &'static str> = BTreeMap::new();
        for (name, ids) in groups {
            if ids.is_empty() {
                return Err(HarnessError::EmptySplit(name));
            }
            for &id in ids.iter() {
                if let Some(prev) = owner.insert(id, name) {
                    return Err(HarnessError::Overlap(id, prev, name));
                }
            }
        }
        Ok(())
    }

    pub fn test_set(&self) -> BTreeSet<u32> {
        self.test_env_ids.iter().copied().collect()
    }

    pub fn all_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.train_env_ids.iter().chain(&self.val_env_ids).chain(&self.test_env_ids).copied()
    }
}

/// Raw artifacts shared by every CR: scenes, scene-graph inputs, channels,
/// and the extra fine-tuning pool of the designated online environment.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub split: SplitSpec,
    pub scenes: Vec<Scene>,
    pub inputs: SceneInputs,
    pub channels: Vec<ChannelMatrix>,
    pub online_env: u32,
    pub pool: Vec<ChannelMatrix>,
}

impl ExperimentData {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let split = SplitSpec::from_config(cfg);
        split.validate()?;
        let scenes = generate_scenes(cfg.total_envs(), cfg.scene.seed, &cfg.scene.room)?;
        let inputs = scene_inputs(&scenes, cfg.scene.grid);
        let ds = cfg.dataset();
        let channels = generate_dataset(&scenes, &ds)?;
        let online_env = split.test_env_ids[cfg.split.online_env];
        let scene = &scenes[online_env as usize];
        let start = cfg.split.samples_per_env;
        let pool = generate_scene_samples(scene, start..start + cfg.training.online_pool, &ds)?;
        Ok(Self { split, scenes, inputs, channels, online_env, pool })
    }

    pub fn los_label(&self, rec: &PreprocessedRecord) -> bool {
        is_los(&self.scenes[rec.scene_id as usize], rec.ue_position)
    }
}

pub fn scene_inputs(scenes: &[Scene], grid: usize) -> SceneInputs {
    scenes.iter().map(|s| (s.scene_id, scene_graph_to_model_input(&rasterize(s, grid)).iter().copied().collect())).collect()
}

/// Preprocessed splits for one compression ratio.
#[derive(Clone, Debug)]
pub struct CrData {
    pub cr: CompressionRatio,
    pub dims: ModelDims,
    pub norm: MinMax,
    pub train: Samples,
    pub val: Samples,
    pub test: Samples,
    pub train_los: Vec<bool>,
    pub val_los: Vec<bool>,
    pub test_los: Vec<bool>,
    /// Fine-tuning pool of the online environment, in draw order.
    pub pool: Samples,
}

impl CrData {
    pub fn build(cfg: &ExperimentConfig, data: &ExperimentData, cr: CompressionRatio) -> Result<Self> {
        let main = data.channels.len();
        let all: Vec<ChannelMatrix> = data.channels.iter().chain(&data.pool).cloned().collect();
        let ds = PreprocessedDataset::build(&all, cfg.preprocess.nc, cr, cfg.preprocess.projection_seed, &data.split.train_env_ids)?;
        let (n, m) = (ds.n(), ds.m());
        let (records, pool) = ds.records.split_at(main);
        let part = |ids: &[u32]| {
            let recs: Vec<&PreprocessedRecord> = records.iter().filter(|r| ids.contains(&r.scene_id)).collect();
            let los = recs.iter().map(|r| data.los_label(r)).collect::<Vec<_>>();
            (Samples::from_records(&recs, n, m), los)
        };
        let (train, train_los) = part(&data.split.train_env_ids);
        let (val, val_los) = part(&data.split.val_env_ids);
        let (test, test_los) = part(&data.split.test_env_ids);
        let pool = Samples::from_records(&pool.iter().collect::<Vec<_>>(), n, m);
        Ok(Self { cr, dims: cfg.dims(cr), norm: ds.norm, train, val, test, train_los, val_los, test_los, pool })
    }
}

fn indices(mask: &[bool], want: bool) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &b)| b == want).map(|(i, _)| i).collect()
}

/// Both steps of one `(cr, seed)` cell.
#[derive(Clone, Debug)]
pub struct TrainedPair {
    pub net: ReconNet,
    pub hn: HyperNet,
    pub step1: TrainReport,
    pub step2: TrainReport,
    pub step1_time: f64,
    pub step2_time: f64,
}

/// Scenes that contributed to gradient steps of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub method: Method,
    pub cr: CompressionRatio,
    pub seed: u64,
    pub gradient_steps: u64,
    pub scenes: BTreeSet<u32>,
}

/// Lazily prepares data and trains models, caching both.
pub struct Runner {
    pub cfg: ExperimentConfig,
    pub data: ExperimentData,
    crs: BTreeMap<CompressionRatio, CrData>,
    models: BTreeMap<(CompressionRatio, u64), TrainedPair>,
    pub audit_log: Vec<AuditEntry>,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let data = ExperimentData::generate(&cfg)?;
        Ok(Self::with_data(cfg, data))
    }

    pub fn with_data(cfg: ExperimentConfig, data: ExperimentData) -> Self {
        Self { cfg, data, crs: BTreeMap::new(), models: BTreeMap::new(), audit_log: Vec::new() }
    }

    pub fn cr_data(&mut self, cr: CompressionRatio) -> Result<&CrData> {
        if !self.crs.contains_key(&cr) {
            let d = CrData::build(&self.cfg, &self.data, cr)?;
            self.crs.insert(cr, d);
        }
        Ok(&self.crs[&cr])
    }

    fn time(&self, t: Instant) -> f64 {
        if self.cfg.report_timing {
            t.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }

    fn log_audit(&mut self, method: Method, cr: CompressionRatio, seed: u64, r: &TrainReport) {
        self.audit_log.push(AuditEntry { method, cr, seed, gradient_steps: r.gradient_steps, scenes: r.gradient_scenes.clone() });
    }

    /// Step 1 then Step 2 for a cell, trained once and cached.
    pub fn trained(&mut self, cr: CompressionRatio, seed: u64) -> Result<&TrainedPair> {
        if !self.models.contains_key(&(cr, seed)) {
            self.cr_data(cr)?;
            let d = &self.crs[&cr];
            let forbidden = self.data.split.test_set();
            let mut net = ReconNet::new(d.dims, self.cfg.model.alpha, seed)?;
            let t = Instant::now();
            let step1 = train_step1(&mut net, &d.train, &d.val, &self.cfg.step1(seed), &forbidden)?;
            let step1_time = self.time(t);
            log::info!("cr {cr} seed {seed}: step 1 best val {:.6} at {:?}", step1.best_val_loss, step1.best_epoch);
            let mut hn = HyperNet::new(d.dims, seed)?;
            let t = Instant::now();
            let step2 = train_step2(&net, &mut hn, &d.train, &d.val, &self.data.inputs, &self.cfg.step2(seed), &forbidden)?;
            let step2_time = self.time(t);
            log::info!("cr {cr} seed {seed}: step 2 val {:.6} -> {:.6}", step2.initial_val_loss, step2.best_val_loss);
            self.log_audit(Method::General, cr, seed, &step1);
            self.log_audit(Method::AdapCsiNet, cr, seed, &step2);
            self.models.insert((cr, seed), TrainedPair { net, hn, step1, step2, step1_time, step2_time });
        }
        Ok(&self.models[&(cr, seed)])
    }

    fn record(&self, method: Method, cr: CompressionRatio, seed: u64, subset: Subset, score: (f64, f64), time: f64) -> MetricsRecord {
        MetricsRecord {
            method,
            cr,
            cr_effective: cr.effective(self.cfg.n()),
            seed,
            split: EnvSplit::Test,
            subset,
            nmse_linear: score.0,
            nmse_db: score.1,
            train_time_s: time,
        }
    }

    /// Scores the general network and AdapCsiNet of a cell on `rows` of
    /// the test split.
    fn score_pair(&mut self, cr: CompressionRatio, seed: u64, rows: Option<&[usize]>) -> Result<((f64, f64), (f64, f64))> {
        self.trained(cr, seed)?;
        let d = &self.crs[&cr];
        let m = &self.models[&(cr, seed)];
        let test = match rows {
            Some(r) => d.test.select(r),
            None => d.test.clone(),
        };
        let g = score(&m.net.forward_baseline(&test.s)?, &test, &d.norm)?;
        let a = score(&forward_adaptive(&m.net, &m.hn, &test.s, &test.scene_ids, &self.data.inputs)?, &test, &d.norm)?;
        Ok((g, a))
    }

    /// General network (Step 1 only) vs AdapCsiNet on the unseen test
    /// environments, for every CR and seed.
    pub fn run_cr_sweep(&mut self, crs: &[CompressionRatio]) -> Result<Vec<MetricsRecord>> {
        let seeds = self.cfg.training.seeds.clone();
        let mut out = Vec::new();
        for &cr in crs {
            for &seed in &seeds {
                let (g, a) = self.score_pair(cr, seed, None)?;
                let m = &self.models[&(cr, seed)];
                let (t1, t2) = (m.step1_time, m.step1_time + m.step2_time);
                out.push(self.record(Method::General, cr, seed, Subset::All, g, t1));
                out.push(self.record(Method::AdapCsiNet, cr, seed, Subset::All, a, t2));
            }
        }
        Ok(out)
    }

    /// Fine-tunes copies of the general network on growing budgets of
    /// samples from the online environment and scores them on that
    /// environment's held-out samples, next to the general network and
    /// AdapCsiNet.
    pub fn run_online_sweep(&mut self) -> Result<Vec<MetricsRecord>> {
        let cr = self.cfg.training.focus_cr;
        let env = self.data.online_env;
        let t = &self.cfg.training;
        let (budgets, n_val) = (t.online_budgets.clone(), t.online_val);
        let available = t.online_pool.saturating_sub(n_val);
        if let Some(&k) = budgets.iter().find(|&&k| k > available) {
            return Err(HarnessError::Budget { budget: k, available });
        }
        let seeds = t.seeds.clone();
        let mut out = Vec::new();
        for &seed in &seeds {
            self.cr_data(cr)?;
            let rows: Vec<usize> = {
                let d = &self.crs[&cr];
                (0..d.test.len()).filter(|&i| d.test.scene_ids[i] == env).collect()
            };
            let (g, a) = self.score_pair(cr, seed, Some(&rows))?;
            out.push(self.record(Method::General, cr, seed, Subset::Env(env), g, 0.0));
            out.push(self.record(Method::AdapCsiNet, cr, seed, Subset::Env(env), a, 0.0));
            let d = &self.crs[&cr];
            let eval = d.test.select(&rows);
            let stop_set = d.pool.select(&(0..n_val).collect::<Vec<_>>());
            // Test environments other than the online one stay off limits.
            let forbidden: BTreeSet<u32> = self.data.split.test_set().into_iter().filter(|&e| e != env).collect();
            let mut cells = Vec::new();
            for &k in &budgets {
                if k == 0 {
                    cells.push((k, g, 0.0, None));
                    continue;
                }
                let mut net = self.models[&(cr, seed)].net.clone();
                let fit = d.pool.select(&(n_val..n_val + k).collect::<Vec<_>>());
                let started = Instant::now();
                let report = train_step1(&mut net, &fit, &stop_set, &self.cfg.online(seed), &forbidden)?;
                let time = self.time(started);
                let s = score(&net.forward_baseline(&eval.s)?, &eval, &d.norm)?;
                cells.push((k, s, time, Some(report)));
            }
            for (k, s, time, report) in cells {
                if let Some(r) = report {
                    self.log_audit(Method::Online(k), cr, seed, &r);
                }
                out.push(self.record(Method::Online(k), cr, seed, Subset::Env(env), s, time));
            }
        }
        Ok(out)
    }

    /// Trains a LOS-specific network (and optionally an NLOS one) with the
    /// general architecture, and scores it against AdapCsiNet on the
    /// matching test samples.
    pub fn run_switch_comparison(&mut self) -> Result<Vec<MetricsRecord>> {
        let cr = self.cfg.training.focus_cr;
        let mut kinds = vec![(true, Method::SwitchLos, Subset::Los)];
        if self.cfg.training.switch_nlos {
            kinds.push((false, Method::SwitchNlos, Subset::Nlos));
        }
        let seeds = self.cfg.training.seeds.clone();
        let min = self.cfg.training.switch_min_samples;
        self.cr_data(cr)?;
        let mut out = Vec::new();
        for (los, method, subset) in kinds {
            let kind = if los { "LOS" } else { "NLOS" };
            let d = &self.crs[&cr];
            let (tr, va, te) = (indices(&d.train_los, los), indices(&d.val_los, los), indices(&d.test_los, los));
            for (split, found, required) in [("train", tr.len(), min), ("val", va.len(), 1), ("test", te.len(), 1)] {
                if found < required {
                    return Err(HarnessError::Insufficient { kind, split, found, required });
                }
            }
            let (train, val) = (d.train.select(&tr), d.val.select(&va));
            for &seed in &seeds {
                let (_, a) = self.score_pair(cr, seed, Some(&te))?;
                let d = &self.crs[&cr];
                let test = d.test.select(&te);
                let mut net = ReconNet::new(d.dims, self.cfg.model.alpha, seed::derive(&[seed, 0x5717C4, los as u64]))?;
                let started = Instant::now();
                let report = train_step1(&mut net, &train, &val, &self.cfg.step1(seed), &self.data.split.test_set())?;
                let time = self.time(started);
                let s = score(&net.forward_baseline(&test.s)?, &test, &d.norm)?;
                let m = &self.models[&(cr, seed)];
                let at = m.step1_time + m.step2_time;
                out.push(self.record(Method::AdapCsiNet, cr, seed, subset, a, at));
                out.push(self.record(method, cr, seed, subset, s, time));
                self.log_audit(method, cr, seed, &report);
            }
        }
        Ok(out)
    }

    /// Checks every logged training run against the split: no test
    /// environment may contribute to a gradient step, except the online
    /// environment during online fine-tuning (and then nothing else).
    pub fn audit(&self) -> Result<()> {
        audit(&self.audit_log, &self.data.split, self.data.online_env)
    }
}

pub fn audit(log: &[AuditEntry], split: &SplitSpec, online_env: u32) -> Result<()> {
    let test = split.test_set();
    for e in log {
        for &scene in &e.scenes {
            let allowed = match e.method {
                Method::Online(_) => scene == online_env,
                _ => !test.contains(&scene),
            };
            if !allowed {
                return Err(HarnessError::Hygiene { method: e.method.to_string(), scene });
            }
        }
    }
    Ok(())
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// Median dB over seeds of the records matching `method`, `cr`, `subset`.
pub fn median_db(records: &[MetricsRecord], method: Method, cr: CompressionRatio, subset: Subset) -> Option<f64> {
    let mut v: Vec<f64> =
        records.iter().filter(|r| r.method == method && r.cr == cr && r.subset == subset).map(|r| r.nmse_db).collect();
    median(&mut v)
}

pub const RESULTS_HEADER: &str = "method,cr_nominal,cr_effective,seed,split,subset,nmse_linear,nmse_db,train_time_s";

pub fn results_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method, r.cr, r.cr_effective, r.seed, r.split, r.subset, r.nmse_linear, r.nmse_db, r.train_time_s
        ));
    }
    s
}

fn distinct<T: Ord + Copy>(it: impl Iterator<Item = T>) -> Vec<T> {
    it.collect::<BTreeSet<_>>().into_iter().collect()
}

pub fn fig5_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from("cr_nominal,cr_effective,general_nmse_db,adapcsinet_nmse_db,gain_db\n");
    let mut crs = distinct(records.iter().filter(|r| r.subset == Subset::All).map(|r| r.cr));
    crs.sort_by(|a, b| a.value().total_cmp(&b.value()));
    for cr in crs {
        let eff = records.iter().find(|r| r.cr == cr).map(|r| r.cr_effective).unwrap_or(f64::NAN);
        let g = median_db(records, Method::General, cr, Subset::All).unwrap_or(f64::NAN);
        let a = median_db(records, Method::AdapCsiNet, cr, Subset::All).unwrap_or(f64::NAN);
        s.push_str(&format!("{cr},{eff},{g},{a},{}\n", g - a));
    }
    s
}

pub fn fig6_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from("budget,online_nmse_db,general_nmse_db,adapcsinet_nmse_db\n");
    for r in records.iter().filter(|r| matches!(r.method, Method::Online(_))).take(1) {
        let (cr, subset) = (r.cr, r.subset);
        let g = median_db(records, Method::General, cr, subset).unwrap_or(f64::NAN);
        let a = median_db(records, Method::AdapCsiNet, cr, subset).unwrap_or(f64::NAN);
        for m in distinct(records.iter().map(|r| r.method).filter(|m| matches!(m, Method::Online(_)))) {
            let Method::Online(k) = m else { unreachable!() };
            let o = median_db(records, m, cr, subset).unwrap_or(f64::NAN);
            s.push_str(&format!("{k},{o},{g},{a}\n"));
        }
    }
    s
}

pub fn fig7_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from("subset,method,nmse_db\n");
    let cells = distinct(
        records
            .iter()
            .filter(|r| matches!(r.subset, Subset::Los | Subset::Nlos))
            .map(|r| (r.subset, r.method, r.cr)),
    );
    for (subset, method, cr) in cells {
        let v = median_db(records, method, cr, subset).unwrap_or(f64::NAN);
        s.push_str(&format!("{subset},{method},{v}\n"));
    }
    s
}

/// Everything `report` produces.
#[derive(Clone, Debug)]
pub struct Report {
    pub cr_sweep: Vec<MetricsRecord>,
    pub online: Vec<MetricsRecord>,
    pub switch: Vec<MetricsRecord>,
    pub audit_log: Vec<AuditEntry>,
}

impl Report {
    pub fn all(&self) -> Vec<MetricsRecord> {
        self.cr_sweep.iter().chain(&self.online).chain(&self.switch).cloned().collect()
    }

    /// Writes `results.csv`, `fig5.csv`, `fig6.csv`, `fig7.csv` and
    /// `audit.json` into `dir`; returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io { path: dir.display().to_string(), source: e })?;
        let audit = serde_json::to_string_pretty(&self.audit_log).expect("audit log serializes");
        let files = [
            ("results.csv", results_csv(&self.all())),
            ("fig5.csv", fig5_csv(&self.cr_sweep)),
            ("fig6.csv", fig6_csv(&self.online)),
            ("fig7.csv", fig7_csv(&self.switch)),
            ("audit.json", audit),
        ];
        let mut out = Vec::new();
        for (name, text) in files {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| HarnessError::Io { path: p.display().to_string(), source: e })?;
            out.push(p);
        }
        Ok(out)
    }
}

/// Runs all three experiments and the split audit.
pub fn run_report(runner: &mut Runner) -> Result<Report> {
    let crs = runner.cfg.preprocess.crs.clone();
    let cr_sweep = runner.run_cr_sweep(&crs)?;
    let online = runner.run_online_sweep()?;
    let switch = runner.run_switch_comparison()?;
    runner.audit()?;
    Ok(Report { cr_sweep, online, switch, audit_log: runner.audit_log.clone() })
}
