//! Reconstruction network, scene-graph hypernetwork and their two-step
//! training.
//!
//! `ReconNet` maps a codeword `s` (length `M`) to normalized angular-delay
//! CSI: a linear dense layer produces `h1`, which is reshaped to
//! `2 × Nc × Nt`, refined by a residual block of three 3×3 convolutions and
//! a final 3×3 output convolution. `HyperNet` turns a scene graph into
//! `W_H` (`N × M`) and `b_H` (`N`); the adaptive path feeds
//! `h1 + α·tanh(W_H s + b_H)` into the same refinement tail.

use crate::autodiff::{AdamConfig, AdamState, Checkpoint, CheckpointError, Graph, GraphError, LayerParams, Tensor, Var};
use crate::preprocess::{CompressionRatio, PreprocessedDataset, PreprocessedRecord};
use crate::seed;
use ndarray::{s, Array2, ArrayD, Axis, IxDyn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("dimension mismatch for {field}: checkpoint has {found}, expected {expected}")]
    DimMismatch { field: &'static str, found: String, expected: String },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("no scene graph for scene {0}")]
    MissingSceneGraph(u32),
    #[error("scene {0} is excluded from training but reached a gradient step")]
    SplitViolation(u32),
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("training diverged at epoch {epoch}: {source}")]
    Diverged { epoch: usize, source: GraphError },
}

/// Sizes shared by both networks. `N = 2·Nc·Nt`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub nc: usize,
    pub nt: usize,
    pub m: usize,
    pub g: usize,
}

impl ModelDims {
    pub fn n(&self) -> usize {
        2 * self.nc * self.nt
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.nc == 0 || self.nt == 0 || self.m == 0 {
            return Err(ModelError::Invalid(format!("zero dimension in {self:?}")));
        }
        if self.g < 4 || self.g % 4 != 0 {
            return Err(ModelError::Invalid(format!("grid size {} must be a positive multiple of 4", self.g)));
        }
        Ok(())
    }
}

/// Training batch source: normalized CSI vectors, codewords and scene ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub h: Array2<f64>,
    pub s: Array2<f64>,
    pub scene_ids: Vec<u32>,
    /// Per-sample power scale removed during preprocessing.
    pub scales: Vec<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.scene_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scene_ids.is_empty()
    }

    /// Records of `ds` whose scene id satisfies `keep`, in file order.
    pub fn from_dataset(ds: &PreprocessedDataset, keep: impl Fn(u32) -> bool) -> Self {
        let recs: Vec<&PreprocessedRecord> = ds.records.iter().filter(|r| keep(r.scene_id)).collect();
        Self::from_records(&recs, ds.n(), ds.m())
    }

    pub fn from_records(recs: &[&PreprocessedRecord], n: usize, m: usize) -> Self {
        let mut h = Array2::zeros((recs.len(), n));
        let mut s = Array2::zeros((recs.len(), m));
        for (row, r) in recs.iter().enumerate() {
            h.row_mut(row).assign(&ndarray::ArrayView1::from(&r.h[..]));
            s.row_mut(row).assign(&ndarray::ArrayView1::from(&r.s[..]));
        }
        Self {
            h,
            s,
            scene_ids: recs.iter().map(|r| r.scene_id).collect(),
            scales: recs.iter().map(|r| r.scale).collect(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            h: self.h.select(Axis(0), idx),
            s: self.s.select(Axis(0), idx),
            scene_ids: idx.iter().map(|&i| self.scene_ids[i]).collect(),
            scales: idx.iter().map(|&i| self.scales[i]).collect(),
        }
    }

    pub fn scenes(&self) -> BTreeSet<u32> {
        self.scene_ids.iter().copied().collect()
    }
}

/// Flattened scene-graph model inputs (`G²` values each) by scene id.
pub type SceneInputs = BTreeMap<u32, Vec<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedParams {
    pub w_h: Array2<f64>,
    pub b_h: ndarray::Array1<f64>,
}

impl GeneratedParams {
    /// Splits `theta` (length `N·(M+1)`): the first `N·M` entries are
    /// `W_H` row-major, the last `N` are `b_H`.
    pub fn from_flat(theta: &[f64], n: usize, m: usize) -> Result<Self, ModelError> {
        if theta.len() != n * (m + 1) {
            return Err(ModelError::Invalid(format!("generated vector has {} entries, expected {}", theta.len(), n * (m + 1))));
        }
        Ok(Self {
            w_h: Array2::from_shape_vec((n, m), theta[..n * m].to_vec()).expect("sized"),
            b_h: ndarray::Array1::from(theta[n * m..].to_vec()),
        })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.w_h.iter().chain(self.b_h.iter()).copied().collect()
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self { w_h: Array2::zeros((n, m)), b_h: ndarray::Array1::zeros(n) }
    }
}

/// Fixed per-feature codeword standardization `(s − mean)·inv_std`,
/// fitted on training codewords. Codewords carry a large common offset
/// (the projection of the normalized mean), which this removes.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm {
    pub mean: ndarray::Array1<f64>,
    pub inv_std: ndarray::Array1<f64>,
}

impl InputNorm {
    pub fn fit(s: &Array2<f64>) -> Self {
        let mean = s.mean_axis(Axis(0)).unwrap_or_else(|| ndarray::Array1::zeros(s.ncols()));
        let inv_std = s.std_axis(Axis(0), 0.0).mapv(|v| if v > 1e-12 { 1.0 / v } else { 1.0 });
        Self { mean, inv_std }
    }

    pub fn apply(&self, s: ndarray::ArrayView2<f64>) -> Array2<f64> {
        (&s - &self.mean) * &self.inv_std
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconNet {
    pub dims: ModelDims,
    pub alpha: f64,
    /// Applied to codewords before they enter the graph; identity if unset.
    pub input_norm: Option<InputNorm>,
    pub dense_init: LayerParams,
    pub conv_block: [LayerParams; 3],
    pub output_conv: LayerParams,
}

const RECON_NAMES: [&str; 5] = ["dense_init", "conv1", "conv2", "conv3", "output_conv"];

impl ReconNet {
    pub fn new(dims: ModelDims, alpha: f64, seed: u64) -> Result<Self, ModelError> {
        dims.validate()?;
        if !(0.0..1.0).contains(&alpha) {
            return Err(ModelError::Invalid(format!("alpha {alpha} outside [0, 1)")));
        }
        let sd = |k: u64| seed::derive(&[seed, 0x5EC0, k]);
        Ok(Self {
            dims,
            alpha,
            input_norm: None,
            dense_init: LayerParams::dense(dims.m, dims.n(), sd(0)),
            conv_block: [
                LayerParams::conv2d(2, 8, 3, sd(1)),
                LayerParams::conv2d(8, 16, 3, sd(2)),
                LayerParams::conv2d(16, 2, 3, sd(3)),
            ],
            output_conv: LayerParams::conv2d(2, 2, 3, sd(4)),
        })
    }

    fn layers(&self) -> [&LayerParams; 5] {
        let [a, b, c] = &self.conv_block;
        [&self.dense_init, a, b, c, &self.output_conv]
    }

    fn layers_mut(&mut self) -> [&mut LayerParams; 5] {
        let [a, b, c] = &mut self.conv_block;
        [&mut self.dense_init, a, b, c, &mut self.output_conv]
    }

    /// Parameters in graph-binding order (weights then bias per layer).
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers().into_iter().flat_map(|l| [&l.weights, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers_mut().into_iter().flat_map(|l| [&mut l.weights, &mut l.bias]).collect()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        named(&RECON_NAMES, &self.layers())
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn set_trainable(&mut self, on: bool) {
        for l in self.layers_mut() {
            l.set_trainable(on);
        }
    }

    /// Codewords as the graph sees them.
    pub fn prepare(&self, s: ndarray::ArrayView2<f64>) -> Array2<f64> {
        match &self.input_norm {
            Some(n) => n.apply(s),
            None => s.to_owned(),
        }
    }

    /// `s: [B, M]` (prepared) → `h1: [B, N]`.
    pub fn build_h1(&self, g: &mut Graph, s: Var, bound: &mut Vec<Var>) -> Result<Var, ModelError> {
        Ok(self.dense_init.forward(g, s, bound)?)
    }

    /// `h_input: [B, N]` → reconstruction `[B, N]` via the residual
    /// convolutional refinement.
    pub fn build_tail(&self, g: &mut Graph, h_input: Var, bound: &mut Vec<Var>) -> Result<Var, ModelError> {
        let b = g.value(h_input).shape()[0];
        let d = self.dims;
        let x = g.reshape(h_input, &[b, 2, d.nc, d.nt])?;
        let c1 = self.conv_block[0].forward(g, x, bound)?;
        let c1 = g.tanh(c1)?;
        let c2 = self.conv_block[1].forward(g, c1, bound)?;
        let c2 = g.tanh(c2)?;
        let c3 = self.conv_block[2].forward(g, c2, bound)?;
        let r = g.add(x, c3)?;
        let out = self.output_conv.forward(g, r, bound)?;
        Ok(g.reshape(out, &[b, d.n()])?)
    }

    pub fn build_baseline(&self, g: &mut Graph, s: Var, bound: &mut Vec<Var>) -> Result<Var, ModelError> {
        let h1 = self.build_h1(g, s, bound)?;
        self.build_tail(g, h1, bound)
    }

    fn check_codewords(&self, s: &Array2<f64>) -> Result<(), ModelError> {
        if s.ncols() != self.dims.m {
            return Err(ModelError::DimMismatch {
                field: "m",
                found: s.ncols().to_string(),
                expected: self.dims.m.to_string(),
            });
        }
        Ok(())
    }

    /// Baseline reconstruction of `s: [B, M]`; rows are vectorized
    /// `2 × Nc × Nt` CSI.
    pub fn forward_baseline(&self, s: &Array2<f64>) -> Result<Array2<f64>, ModelError> {
        self.check_codewords(s)?;
        let mut out = Array2::zeros((s.nrows(), self.dims.n()));
        for start in (0..s.nrows()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(s.nrows());
            let mut g = Graph::new();
            let sv = g.input(self.prepare(s.slice(s![start..end, ..])).into_dyn())?;
            let y = self.build_baseline(&mut g, sv, &mut Vec::new())?;
            out.slice_mut(s![start..end, ..]).assign(&as_2d(g.value(y)));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, header: &ModelHeader, optimizer: Option<AdamState>) -> Checkpoint {
        let mut params: Vec<(String, ArrayD<f64>)> = self.named_params().into_iter().map(|(n, t)| (n, t.data.clone())).collect();
        if let Some(n) = &self.input_norm {
            params.push(("input_norm.mean".into(), n.mean.clone().into_dyn()));
            params.push(("input_norm.inv_std".into(), n.inv_std.clone().into_dyn()));
        }
        Checkpoint { header: serde_json::to_string(header).expect("header serializes"), params, optimizer }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, ModelHeader), ModelError> {
        let header = ModelHeader::parse(&ck.header)?;
        header.expect_kind("reconnet")?;
        let mut net = ReconNet::new(header.dims, header.alpha, 0)?;
        load_named(&mut net.named_params_mut(), ck)?;
        let vec1 = |name: &str| -> Result<Option<ndarray::Array1<f64>>, ModelError> {
            match ck.param(name) {
                None => Ok(None),
                Some(a) if a.shape() == [header.dims.m] => Ok(Some(a.clone().into_dimensionality().expect("1-D"))),
                Some(a) => Err(ModelError::DimMismatch {
                    field: "input_norm",
                    found: format!("{:?}", a.shape()),
                    expected: format!("[{}]", header.dims.m),
                }),
            }
        };
        net.input_norm = match (vec1("input_norm.mean")?, vec1("input_norm.inv_std")?) {
            (Some(mean), Some(inv_std)) => Some(InputNorm { mean, inv_std }),
            _ => None,
        };
        Ok((net, header))
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let names = named_list(&RECON_NAMES);
        names.into_iter().zip(self.params_mut()).collect()
    }
}

const EVAL_CHUNK: usize = 500;

fn as_2d(a: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality().expect("2-D output")
}

fn named_list(layers: &[&str]) -> Vec<String> {
    layers.iter().flat_map(|l| [format!("{l}.weight"), format!("{l}.bias")]).collect()
}

fn named<'a>(names: &[&str], layers: &[&'a LayerParams]) -> Vec<(String, &'a Tensor)> {
    named_list(names).into_iter().zip(layers.iter().flat_map(|l| [&l.weights, &l.bias])).collect()
}

fn load_named(targets: &mut [(String, &mut Tensor)], ck: &Checkpoint) -> Result<(), ModelError> {
    for (name, t) in targets.iter_mut() {
        let a = ck.param(name).ok_or_else(|| ModelError::Invalid(format!("checkpoint lacks parameter {name}")))?;
        if a.shape() != t.data.shape() {
            return Err(ModelError::DimMismatch {
                field: "parameter shape",
                found: format!("{name} {:?}", a.shape()),
                expected: format!("{:?}", t.data.shape()),
            });
        }
        t.data = a.clone();
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperNet {
    pub dims: ModelDims,
    pub input_dense: LayerParams,
    pub conv_stack: [LayerParams; 5],
    pub output_dense: LayerParams,
}

const HYPER_NAMES: [&str; 7] = ["input_dense", "hconv1", "hconv2", "hconv3", "hconv4", "hconv5", "output_dense"];
const HYPER_CHANNELS: [usize; 6] = [16, 16, 16, 8, 8, 4];

impl HyperNet {
    /// Random hidden layers and a zero output layer, so a fresh HyperNet
    /// generates `W_H = 0`, `b_H = 0` for every scene.
    pub fn new(dims: ModelDims, seed: u64) -> Result<Self, ModelError> {
        dims.validate()?;
        let q = dims.g / 4;
        let sd = |k: u64| seed::derive(&[seed, 0x4E7, k]);
        let conv = |k: usize| LayerParams::conv2d(HYPER_CHANNELS[k], HYPER_CHANNELS[k + 1], 3, sd(k as u64 + 1));
        Ok(Self {
            dims,
            input_dense: LayerParams::dense(dims.g * dims.g, HYPER_CHANNELS[0] * q * q, sd(0)),
            conv_stack: [conv(0), conv(1), conv(2), conv(3), conv(4)],
            output_dense: LayerParams::dense_zeros(HYPER_CHANNELS[5] * q * q, dims.n() * (dims.m + 1)),
        })
    }

    fn layers(&self) -> Vec<&LayerParams> {
        std::iter::once(&self.input_dense).chain(self.conv_stack.iter()).chain(std::iter::once(&self.output_dense)).collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut LayerParams> {
        std::iter::once(&mut self.input_dense)
            .chain(self.conv_stack.iter_mut())
            .chain(std::iter::once(&mut self.output_dense))
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers().into_iter().flat_map(|l| [&l.weights, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers_mut().into_iter().flat_map(|l| [&mut l.weights, &mut l.bias]).collect()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        named(&HYPER_NAMES, &self.layers())
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// `graphs: [S, G²]` → generated parameter rows `[S, N·(M+1)]`.
    pub fn build(&self, g: &mut Graph, graphs: Var, bound: &mut Vec<Var>) -> Result<Var, ModelError> {
        let sc = g.value(graphs).shape()[0];
        let q = self.dims.g / 4;
        let x = self.input_dense.forward(g, graphs, bound)?;
        let x = g.tanh(x)?;
        let mut x = g.reshape(x, &[sc, HYPER_CHANNELS[0], q, q])?;
        for layer in &self.conv_stack {
            let y = layer.forward(g, x, bound)?;
            x = g.tanh(y)?;
        }
        let flat = g.reshape(x, &[sc, HYPER_CHANNELS[5] * q * q])?;
        Ok(self.output_dense.forward(g, flat, bound)?)
    }

    /// Generated `(W_H, b_H)` for one flattened scene-graph input.
    pub fn generate_params(&self, graph: &[f64]) -> Result<GeneratedParams, ModelError> {
        let gg = self.dims.g * self.dims.g;
        if graph.len() != gg {
            return Err(ModelError::DimMismatch { field: "g", found: graph.len().to_string(), expected: gg.to_string() });
        }
        let mut g = Graph::new();
        let x = g.input(ArrayD::from_shape_vec(IxDyn(&[1, gg]), graph.to_vec()).expect("sized"))?;
        let theta = self.build(&mut g, x, &mut Vec::new())?;
        let flat: Vec<f64> = g.value(theta).iter().copied().collect();
        GeneratedParams::from_flat(&flat, self.dims.n(), self.dims.m)
    }

    pub fn to_checkpoint(&self, header: &ModelHeader, optimizer: Option<AdamState>) -> Checkpoint {
        Checkpoint {
            header: serde_json::to_string(header).expect("header serializes"),
            params: self.named_params().into_iter().map(|(n, t)| (n, t.data.clone())).collect(),
            optimizer,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, ModelHeader), ModelError> {
        let header = ModelHeader::parse(&ck.header)?;
        header.expect_kind("hypernet")?;
        let mut hn = HyperNet::new(header.dims, 0)?;
        let names = named_list(&HYPER_NAMES);
        let mut targets: Vec<(String, &mut Tensor)> = names.into_iter().zip(hn.params_mut()).collect();
        load_named(&mut targets, ck)?;
        Ok((hn, header))
    }
}

/// Distinct scenes of a batch and, per sample, its row in the stacked
/// scene-graph input.
fn scene_rows(ids: &[u32], inputs: &SceneInputs, g: usize) -> Result<(Array2<f64>, Vec<usize>), ModelError> {
    let mut order: Vec<u32> = Vec::new();
    let mut pos: BTreeMap<u32, usize> = BTreeMap::new();
    let rows = ids
        .iter()
        .map(|id| {
            *pos.entry(*id).or_insert_with(|| {
                order.push(*id);
                order.len() - 1
            })
        })
        .collect();
    let mut stacked = Array2::zeros((order.len(), g * g));
    for (r, id) in order.iter().enumerate() {
        let v = inputs.get(id).ok_or(ModelError::MissingSceneGraph(*id))?;
        if v.len() != g * g {
            return Err(ModelError::DimMismatch { field: "g", found: v.len().to_string(), expected: (g * g).to_string() });
        }
        stacked.row_mut(r).assign(&ndarray::ArrayView1::from(&v[..]));
    }
    Ok((stacked, rows))
}

/// Adaptive graph: `tail(h1 + α·tanh(generated_affine(theta, s)))`.
fn build_adaptive(
    net: &ReconNet,
    hn: &HyperNet,
    g: &mut Graph,
    s: Var,
    graphs: Var,
    rows: &[usize],
    net_bound: &mut Vec<Var>,
    hn_bound: &mut Vec<Var>,
) -> Result<Var, ModelError> {
    let h1 = net.build_h1(g, s, net_bound)?;
    let theta = hn.build(g, graphs, hn_bound)?;
    let a = g.generated_affine(theta, s, rows)?;
    let h2 = g.tanh(a)?;
    let h2 = g.scale(h2, net.alpha)?;
    let h_input = g.add(h1, h2)?;
    net.build_tail(g, h_input, net_bound)
}

/// Adaptive reconstruction of `s: [B, M]`, each row conditioned on the
/// scene graph of `scene_ids[row]`.
pub fn forward_adaptive(net: &ReconNet, hn: &HyperNet, s: &Array2<f64>, scene_ids: &[u32], inputs: &SceneInputs) -> Result<Array2<f64>, ModelError> {
    net.check_codewords(s)?;
    if net.dims != hn.dims {
        return Err(ModelError::DimMismatch { field: "dims", found: format!("{:?}", hn.dims), expected: format!("{:?}", net.dims) });
    }
    if scene_ids.len() != s.nrows() {
        return Err(ModelError::Invalid(format!("{} scene ids for {} codewords", scene_ids.len(), s.nrows())));
    }
    let mut out = Array2::zeros((s.nrows(), net.dims.n()));
    for start in (0..s.nrows()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(s.nrows());
        let (stacked, rows) = scene_rows(&scene_ids[start..end], inputs, net.dims.g)?;
        let mut g = Graph::new();
        let sv = g.input(net.prepare(s.slice(s![start..end, ..])).into_dyn())?;
        let gv = g.input(stacked.into_dyn())?;
        let y = build_adaptive(net, hn, &mut g, sv, gv, &rows, &mut Vec::new(), &mut Vec::new())?;
        out.slice_mut(s![start..end, ..]).assign(&as_2d(g.value(y)));
    }
    Ok(out)
}

/// Adaptive reconstruction with explicitly supplied generated parameters
/// shared by every row.
pub fn forward_with_params(net: &ReconNet, gp: &GeneratedParams, s: &Array2<f64>) -> Result<Array2<f64>, ModelError> {
    net.check_codewords(s)?;
    let theta = Array2::from_shape_vec((1, gp.w_h.len() + gp.b_h.len()), gp.flatten())
        .map_err(|e| ModelError::Invalid(e.to_string()))?;
    let mut g = Graph::new();
    let sv = g.input(net.prepare(s.view()).into_dyn())?;
    let tv = g.input(theta.into_dyn())?;
    let mut bound = Vec::new();
    let h1 = net.build_h1(&mut g, sv, &mut bound)?;
    let a = g.generated_affine(tv, sv, &vec![0; s.nrows()])?;
    let h2 = g.tanh(a)?;
    let h2 = g.scale(h2, net.alpha)?;
    let h_input = g.add(h1, h2)?;
    let y = net.build_tail(&mut g, h_input, &mut bound)?;
    Ok(as_2d(g.value(y)).to_owned())
}

/// Model description embedded in every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub kind: String,
    pub dims: ModelDims,
    pub alpha: f64,
    pub cr: CompressionRatio,
    pub seed: u64,
    pub projection_seed: u64,
}

impl ModelHeader {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Invalid(format!("checkpoint header: {e}")))
    }

    fn expect_kind(&self, kind: &str) -> Result<(), ModelError> {
        if self.kind != kind {
            return Err(ModelError::Invalid(format!("checkpoint holds a {}, expected a {kind}", self.kind)));
        }
        Ok(())
    }

    /// Rejects a checkpoint whose sizes do not fit `dims`.
    pub fn check_dims(&self, dims: &ModelDims) -> Result<(), ModelError> {
        let pairs = [("nc", self.dims.nc, dims.nc), ("nt", self.dims.nt, dims.nt), ("m", self.dims.m, dims.m), ("g", self.dims.g, dims.g)];
        for (field, found, expected) in pairs {
            if found != expected {
                return Err(ModelError::DimMismatch { field, found: found.to_string(), expected: expected.to_string() });
            }
        }
        Ok(())
    }
}

/// Halves the learning rate after `patience` consecutive epochs without a
/// strict validation improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub lr: f64,
    best: f64,
    since_best: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize) -> Self {
        Self { patience, lr, best: f64::INFINITY, since_best: 0 }
    }

    /// Feeds one validation loss; returns the new rate when it was halved.
    pub fn observe(&mut self, val: f64) -> Option<f64> {
        if val < self.best {
            self.best = val;
            self.since_best = 0;
            return None;
        }
        self.since_best += 1;
        if self.patience > 0 && self.since_best >= self.patience {
            self.since_best = 0;
            self.lr *= 0.5;
            return Some(self.lr);
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Plateau length (epochs) before the learning rate is halved; 0 disables.
    pub patience: usize,
    /// Stop after this many epochs without validation improvement.
    pub early_stop: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 200, lr: 1e-3, patience: 30, early_stop: None, seed: 0 }
    }
}

/// Per-epoch losses and the scenes that contributed to gradient steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_val_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub lr: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub gradient_steps: u64,
    pub gradient_scenes: BTreeSet<u32>,
}

/// Batches in a per-epoch shuffled order, refusing any sample from a
/// forbidden scene.
struct Loader<'a> {
    data: &'a Samples,
    forbidden: &'a BTreeSet<u32>,
    batch: usize,
}

impl Loader<'_> {
    fn epoch(&self, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>, ModelError> {
        let mut idx: Vec<usize> = (0..self.data.len()).collect();
        idx.shuffle(&mut seed::rng(&[seed, 0xBA7C4, epoch as u64]));
        for &i in &idx {
            let id = self.data.scene_ids[i];
            if self.forbidden.contains(&id) {
                return Err(ModelError::SplitViolation(id));
            }
        }
        Ok(idx.chunks(self.batch.max(1)).map(|c| c.to_vec()).collect())
    }
}

fn batch_arrays(net: &ReconNet, data: &Samples, idx: &[usize]) -> (ArrayD<f64>, ArrayD<f64>) {
    (net.prepare(data.s.select(Axis(0), idx).view()).into_dyn(), data.h.select(Axis(0), idx).into_dyn())
}

/// Mean over samples of the per-sample squared error, the training loss.
pub fn sample_loss(pred: &Array2<f64>, truth: &Array2<f64>) -> f64 {
    let sum: f64 = pred.iter().zip(truth.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    sum / pred.nrows().max(1) as f64
}

fn collect_grads(grads: &crate::autodiff::Gradients, bound: &[Var]) -> Vec<Option<ArrayD<f64>>> {
    bound.iter().map(|v| grads.get(*v).cloned()).collect()
}

/// Shared epoch loop: `step` runs one batch and returns its loss, `eval`
/// gives the validation loss, `snapshot`/`restore` keep the best weights.
struct Loop<'a> {
    cfg: &'a TrainConfig,
    report: TrainReport,
    sched: PlateauScheduler,
    stale: usize,
}

impl<'a> Loop<'a> {
    fn new(cfg: &'a TrainConfig, initial_val: f64) -> Self {
        let mut sched = PlateauScheduler::new(cfg.lr, cfg.patience);
        sched.observe(initial_val);
        let report = TrainReport { initial_val_loss: initial_val, best_val_loss: initial_val, ..Default::default() };
        Self { cfg, report, sched, stale: 0 }
    }

    /// Records an epoch; returns (improved, stop).
    fn end_epoch(&mut self, epoch: usize, train: f64, val: f64) -> (bool, bool) {
        self.report.train_loss.push(train);
        self.report.val_loss.push(val);
        self.report.lr.push(self.sched.lr);
        let improved = val < self.report.best_val_loss;
        if improved {
            self.report.best_val_loss = val;
            self.report.best_epoch = Some(epoch);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        if let Some(lr) = self.sched.observe(val) {
            log::info!("epoch {epoch}: learning rate halved to {lr:e}");
        }
        let stop = self.cfg.early_stop.is_some_and(|p| self.stale >= p);
        (improved, stop)
    }
}

/// Step 1: trains every ReconNet parameter on the baseline path. The
/// returned network holds the best-validation weights (the initial weights
/// count as a candidate).
pub fn train_step1(
    net: &mut ReconNet,
    train: &Samples,
    val: &Samples,
    cfg: &TrainConfig,
    forbidden: &BTreeSet<u32>,
) -> Result<TrainReport, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset("step-1 training split"));
    }
    if val.is_empty() {
        return Err(ModelError::EmptyDataset("step-1 validation split"));
    }
    net.set_trainable(true);
    if net.input_norm.is_none() {
        net.input_norm = Some(InputNorm::fit(&train.s));
    }
    let loader = Loader { data: train, forbidden, batch: cfg.batch_size };
    let initial = sample_loss(&net.forward_baseline(&val.s)?, &val.h);
    let mut lp = Loop::new(cfg, initial);
    let mut adam = AdamState::new(&net.params(), AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut best = net.clone();
    for epoch in 0..cfg.epochs {
        adam.set_lr(lp.sched.lr);
        let mut total = 0.0;
        for idx in loader.epoch(cfg.seed, epoch)? {
            let (s, h) = batch_arrays(net, train, &idx);
            let mut g = Graph::new();
            let run = |g: &mut Graph, bound: &mut Vec<Var>| -> Result<(Var, f64), ModelError> {
                let sv = g.input(s)?;
                let hv = g.input(h)?;
                let y = net.build_baseline(g, sv, bound)?;
                let loss = g.mse_loss(y, hv)?;
                Ok((loss, g.value(loss)[[]]))
            };
            let mut bound = Vec::new();
            let (loss, value) = run(&mut g, &mut bound).map_err(|e| diverged(e, epoch))?;
            let grads = g.backward(loss).map_err(|e| ModelError::Diverged { epoch, source: e })?;
            let grads = collect_grads(&grads, &bound);
            adam.step(&mut net.params_mut(), &grads).map_err(|e| ModelError::Diverged { epoch, source: e })?;
            lp.report.gradient_steps += 1;
            lp.report.gradient_scenes.extend(idx.iter().map(|&i| train.scene_ids[i]));
            total += value * idx.len() as f64;
        }
        let v = sample_loss(&net.forward_baseline(&val.s).map_err(|e| diverged(e, epoch))?, &val.h);
        let (improved, stop) = lp.end_epoch(epoch, total / train.len() as f64, v);
        log::debug!("step1 epoch {epoch}: train {:.6} val {v:.6}", total / train.len() as f64);
        if improved {
            best = net.clone();
        }
        if stop {
            break;
        }
    }
    *net = best;
    Ok(lp.report)
}

fn diverged(e: ModelError, epoch: usize) -> ModelError {
    match e {
        ModelError::Graph(g @ GraphError::NonFinite { .. }) => ModelError::Diverged { epoch, source: g },
        other => other,
    }
}

/// Validation loss of the adaptive path.
pub fn adaptive_loss(net: &ReconNet, hn: &HyperNet, data: &Samples, inputs: &SceneInputs) -> Result<f64, ModelError> {
    Ok(sample_loss(&forward_adaptive(net, hn, &data.s, &data.scene_ids, inputs)?, &data.h))
}

/// Step 2: trains the HyperNet through the adaptive path while `net` stays
/// frozen. Returns the best-validation HyperNet (the starting one included).
pub fn train_step2(
    net: &ReconNet,
    hn: &mut HyperNet,
    train: &Samples,
    val: &Samples,
    inputs: &SceneInputs,
    cfg: &TrainConfig,
    forbidden: &BTreeSet<u32>,
) -> Result<TrainReport, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset("step-2 training split"));
    }
    if val.is_empty() {
        return Err(ModelError::EmptyDataset("step-2 validation split"));
    }
    for id in train.scenes().iter().chain(val.scenes().iter()) {
        if !inputs.contains_key(id) {
            return Err(ModelError::MissingSceneGraph(*id));
        }
    }
    let mut frozen = net.clone();
    frozen.set_trainable(false);
    let loader = Loader { data: train, forbidden, batch: cfg.batch_size };
    let initial = adaptive_loss(&frozen, hn, val, inputs)?;
    let mut lp = Loop::new(cfg, initial);
    let mut adam = AdamState::new(&hn.params(), AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut best = hn.clone();
    for epoch in 0..cfg.epochs {
        adam.set_lr(lp.sched.lr);
        let mut total = 0.0;
        for idx in loader.epoch(cfg.seed, epoch)? {
            let (s, h) = batch_arrays(&frozen, train, &idx);
            let ids: Vec<u32> = idx.iter().map(|&i| train.scene_ids[i]).collect();
            let (stacked, rows) = scene_rows(&ids, inputs, hn.dims.g)?;
            let mut g = Graph::new();
            let mut hn_bound = Vec::new();
            let run = |g: &mut Graph| -> Result<(Var, f64), ModelError> {
                let sv = g.input(s)?;
                let hv = g.input(h)?;
                let gv = g.input(stacked.into_dyn())?;
                let y = build_adaptive(&frozen, hn, g, sv, gv, &rows, &mut Vec::new(), &mut hn_bound)?;
                let loss = g.mse_loss(y, hv)?;
                Ok((loss, g.value(loss)[[]]))
            };
            let (loss, value) = run(&mut g).map_err(|e| diverged(e, epoch))?;
            let grads = g.backward(loss).map_err(|e| ModelError::Diverged { epoch, source: e })?;
            let grads = collect_grads(&grads, &hn_bound);
            adam.step(&mut hn.params_mut(), &grads).map_err(|e| ModelError::Diverged { epoch, source: e })?;
            lp.report.gradient_steps += 1;
            lp.report.gradient_scenes.extend(ids);
            total += value * idx.len() as f64;
        }
        let v = adaptive_loss(&frozen, hn, val, inputs).map_err(|e| diverged(e, epoch))?;
        let (improved, stop) = lp.end_epoch(epoch, total / train.len() as f64, v);
        log::debug!("step2 epoch {epoch}: train {:.6} val {v:.6}", total / train.len() as f64);
        if improved {
            best = hn.clone();
        }
        if stop {
            break;
        }
    }
    *hn = best;
    Ok(lp.report)
}
