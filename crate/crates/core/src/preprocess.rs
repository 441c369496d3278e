//! Angular-delay transform, min-max normalization and UE-side random
//! projection.
//!
//! Vectorization order is fixed everywhere: plane (re, im), then delay
//! row, then antenna column. [`compress`], the reconstruction network's
//! reshape and the preprocessed file all rely on it.

use crate::channel::ChannelMatrix;
use crate::geometry::Point3;
use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("truncation to {nc} delay rows exceeds {subcarriers} subcarriers")]
    TooManyRows { nc: usize, subcarriers: usize },
    #[error("degenerate normalization: batch min equals max ({value})")]
    Degenerate { value: f64 },
    #[error("cannot normalize an empty batch")]
    EmptyBatch,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid compression ratio `{0}`")]
    BadRatio(String),
    #[error("malformed preprocessed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plans(len: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(len), p.plan_fft_inverse(len))
    })
}

/// Unitary 2D DFT `F_d · X · F_aᴴ` on an `N'c × Nt` matrix.
pub fn dft2(x: &Array2<Complex64>) -> Array2<Complex64> {
    transform(x, false)
}

/// Inverse of [`dft2`]: `F_dᴴ · X · F_a`.
pub fn idft2(x: &Array2<Complex64>) -> Array2<Complex64> {
    transform(x, true)
}

fn transform(x: &Array2<Complex64>, inverse: bool) -> Array2<Complex64> {
    let (rows, cols) = x.dim();
    let (col_fwd, col_inv) = plans(rows);
    let (row_fwd, row_inv) = plans(cols);
    // delay axis: F_d (forward) or F_dᴴ (inverse)
    let col_plan = if inverse { col_inv } else { col_fwd };
    // angle axis: right-multiplying by F_aᴴ is an inverse DFT of each row
    let row_plan = if inverse { row_fwd } else { row_inv };
    let scale = 1.0 / ((rows * cols) as f64).sqrt();
    let mut out = x.clone();
    let mut buf = vec![Complex64::new(0.0, 0.0); rows];
    for mut col in out.axis_iter_mut(Axis(1)) {
        for (b, v) in buf.iter_mut().zip(col.iter()) {
            *b = *v;
        }
        col_plan.process(&mut buf);
        for (v, b) in col.iter_mut().zip(&buf) {
            *v = *b;
        }
    }
    let mut rbuf = vec![Complex64::new(0.0, 0.0); cols];
    for mut row in out.axis_iter_mut(Axis(0)) {
        for (b, v) in rbuf.iter_mut().zip(row.iter()) {
            *b = *v;
        }
        row_plan.process(&mut rbuf);
        for (v, b) in row.iter_mut().zip(&rbuf) {
            *v = *b * scale;
        }
    }
    out
}

/// Global min-max normalization parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(batch: &[AngularDelayCsi]) -> Result<Self, PreprocessError> {
        if batch.is_empty() {
            return Err(PreprocessError::EmptyBatch);
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for x in batch.iter().flat_map(|c| c.h.iter()) {
            lo = lo.min(*x);
            hi = hi.max(*x);
        }
        if hi <= lo {
            return Err(PreprocessError::Degenerate { value: lo });
        }
        Ok(Self { min: lo, max: hi })
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }

    pub fn apply(&self, c: &AngularDelayCsi) -> AngularDelayCsi {
        AngularDelayCsi {
            h: c.h.mapv(|v| self.forward(v)),
            scene_id: c.scene_id,
            norm_scale: c.norm_scale,
            normalization: Some(*self),
        }
    }

    pub fn invert(&self, c: &AngularDelayCsi) -> AngularDelayCsi {
        AngularDelayCsi {
            h: c.h.mapv(|v| self.inverse(v)),
            scene_id: c.scene_id,
            norm_scale: c.norm_scale,
            normalization: None,
        }
    }
}

/// Truncated angular-delay CSI as two real planes `2 × Nc × Nt`.
#[derive(Clone, Debug, PartialEq)]
pub struct AngularDelayCsi {
    pub h: Array3<f64>,
    pub scene_id: u32,
    /// Factor the sample has been divided by (1 when not power-normalized).
    pub norm_scale: f64,
    /// Set once the sample has been min-max normalized, for inversion.
    pub normalization: Option<MinMax>,
}

impl AngularDelayCsi {
    pub fn nc(&self) -> usize {
        self.h.dim().1
    }

    pub fn nt(&self) -> usize {
        self.h.dim().2
    }

    /// `N = 2·Nc·Nt`.
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Divides by the Frobenius norm, recording it in `norm_scale`.
    /// An all-zero sample is left unchanged.
    pub fn power_normalized(&self) -> Self {
        let norm = self.h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return self.clone();
        }
        Self {
            h: &self.h / norm,
            scene_id: self.scene_id,
            norm_scale: self.norm_scale * norm,
            normalization: self.normalization,
        }
    }

    /// Plane-major, row, column vectorization.
    pub fn vectorize(&self) -> Vec<f64> {
        self.h.iter().copied().collect()
    }

    pub fn from_vec(v: Vec<f64>, nc: usize, nt: usize, scene_id: u32) -> Result<Self, PreprocessError> {
        let h = Array3::from_shape_vec((2, nc, nt), v).map_err(|e| PreprocessError::Dimension(e.to_string()))?;
        Ok(Self {
            h,
            scene_id,
            norm_scale: 1.0,
            normalization: None,
        })
    }
}

/// Full (untruncated) angular-delay matrix of a channel.
pub fn angular_delay_full(ch: &ChannelMatrix) -> Array2<Complex64> {
    dft2(&ch.h_tilde)
}

/// Applies the unitary 2D DFT and keeps the first `nc` delay rows.
pub fn to_angular_delay(ch: &ChannelMatrix, nc: usize) -> Result<AngularDelayCsi, PreprocessError> {
    let sub = ch.subcarriers();
    if nc > sub || nc == 0 {
        return Err(PreprocessError::TooManyRows { nc, subcarriers: sub });
    }
    let full = dft2(&ch.h_tilde);
    let nt = ch.antennas();
    let mut h = Array3::<f64>::zeros((2, nc, nt));
    for r in 0..nc {
        for t in 0..nt {
            h[[0, r, t]] = full[[r, t]].re;
            h[[1, r, t]] = full[[r, t]].im;
        }
    }
    Ok(AngularDelayCsi {
        h,
        scene_id: ch.scene_id,
        norm_scale: 1.0,
        normalization: None,
    })
}

/// Share of `‖H‖²_F` kept by the first `nc` delay rows.
pub fn truncation_energy_fraction(ch: &ChannelMatrix, nc: usize) -> f64 {
    let full = dft2(&ch.h_tilde);
    let total: f64 = full.iter().map(|c| c.norm_sqr()).sum();
    let kept: f64 = full.rows().into_iter().take(nc).flat_map(|r| r.to_vec()).map(|c| c.norm_sqr()).sum();
    kept / total
}

/// Fits min-max parameters on `batch` and applies them to it.
pub fn normalize(batch: &[AngularDelayCsi]) -> Result<(Vec<AngularDelayCsi>, MinMax), PreprocessError> {
    let mm = MinMax::fit(batch)?;
    Ok((batch.iter().map(|c| mm.apply(c)).collect(), mm))
}

/// Nominal compression ratio `num/den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CompressionRatio {
    pub num: u32,
    pub den: u32,
}

impl CompressionRatio {
    pub const fn new(num: u32, den: u32) -> Self {
        Self { num, den }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Codeword length `M = round(N·γ)`.
    pub fn codeword_len(&self, n: usize) -> usize {
        ((n as f64) * self.value()).round() as usize
    }

    pub fn effective(&self, n: usize) -> f64 {
        self.codeword_len(n) as f64 / n as f64
    }
}

impl fmt::Display for CompressionRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for CompressionRatio {
    type Err = PreprocessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PreprocessError::BadRatio(s.to_string());
        let (a, b) = s.trim().split_once('/').ok_or_else(bad)?;
        let num: u32 = a.trim().parse().map_err(|_| bad())?;
        let den: u32 = b.trim().parse().map_err(|_| bad())?;
        if num == 0 || den == 0 || num >= den {
            return Err(bad());
        }
        Ok(Self { num, den })
    }
}

impl TryFrom<String> for CompressionRatio {
    type Error = PreprocessError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<CompressionRatio> for String {
    fn from(c: CompressionRatio) -> String {
        c.to_string()
    }
}

/// Fixed Gaussian projection `A ∈ R^{M×N}` with entries `N(0, 1/M)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionMatrix {
    pub a: Array2<f64>,
    pub seed: u64,
    pub cr: CompressionRatio,
}

impl ProjectionMatrix {
    pub fn generate(cr: CompressionRatio, n: usize, seed: u64) -> Result<Self, PreprocessError> {
        let m = cr.codeword_len(n);
        if m == 0 || m >= n {
            return Err(PreprocessError::Dimension(format!("codeword length {m} invalid for N = {n}")));
        }
        let dist = Normal::new(0.0, 1.0 / (m as f64).sqrt()).expect("positive std");
        let mut rng = crate::seed::rng(&[seed, 0xA11CE, m as u64, n as u64]);
        let data: Vec<f64> = (0..m * n).map(|_| dist.sample(&mut rng)).collect();
        Ok(Self {
            a: Array2::from_shape_vec((m, n), data).expect("m*n entries"),
            seed,
            cr,
        })
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    /// Row-wise `S = X·Aᵀ` for a `T × N` batch.
    pub fn compress_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>, PreprocessError> {
        if x.ncols() != self.n() {
            return Err(PreprocessError::Dimension(format!("batch has {} columns, projection expects {}", x.ncols(), self.n())));
        }
        Ok(x.dot(&self.a.t()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codeword {
    pub s: Vec<f64>,
    pub cr: CompressionRatio,
    pub scene_id: u32,
}

/// `s = A·vec(h)`.
pub fn compress(h: &AngularDelayCsi, a: &ProjectionMatrix) -> Result<Codeword, PreprocessError> {
    if h.len() != a.n() {
        return Err(PreprocessError::Dimension(format!("CSI has {} entries, projection expects {}", h.len(), a.n())));
    }
    let v = ndarray::Array1::from(h.vectorize());
    Ok(Codeword {
        s: a.a.dot(&v).to_vec(),
        cr: a.cr,
        scene_id: h.scene_id,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedRecord {
    pub scene_id: u32,
    pub ue_position: Point3,
    /// Frobenius norm of the truncated CSI before power normalization.
    pub scale: f64,
    /// Normalized CSI, length `N`.
    pub h: Vec<f64>,
    /// Codeword, length `M`.
    pub s: Vec<f64>,
}

impl PreprocessedRecord {
    /// CSI in physical units: min-max inverted, then rescaled.
    pub fn denormalized(&self, norm: &MinMax) -> Vec<f64> {
        denormalize(&self.h, norm, self.scale)
    }
}

/// Inverts the preprocessing normalization of a CSI vector.
pub fn denormalize(h: &[f64], norm: &MinMax, scale: f64) -> Vec<f64> {
    h.iter().map(|&v| norm.inverse(v) * scale).collect()
}

/// Contents of an `ACNPP` file.
///
/// Every sample is first divided by its own Frobenius norm, then all are
/// min-max normalized with parameters fitted on the training scenes.
///
/// Layout (little-endian): magic `ACNPP`, version `u16`, count `u64`,
/// `Nc: u32`, `Nt: u32`, `M: u32`, ratio numerator and denominator `u32`,
/// projection seed `u64`, normalization min and max `f64`; then per record
/// `scene_id: u32`, UE position `3 × f64`, scale `f64`, `N × f64`
/// normalized CSI and
/// `M × f64` codeword.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedDataset {
    pub nc: usize,
    pub nt: usize,
    pub cr: CompressionRatio,
    pub projection_seed: u64,
    pub norm: MinMax,
    pub records: Vec<PreprocessedRecord>,
}

const PP_MAGIC: &[u8; 5] = b"ACNPP";
const PP_VERSION: u16 = 2;

impl PreprocessedDataset {
    pub fn n(&self) -> usize {
        2 * self.nc * self.nt
    }

    pub fn m(&self) -> usize {
        self.cr.codeword_len(self.n())
    }

    /// Builds a preprocessed dataset. Normalization is fitted on records
    /// whose scene id is in `train_scenes` only.
    pub fn build(
        channels: &[ChannelMatrix],
        nc: usize,
        cr: CompressionRatio,
        projection_seed: u64,
        train_scenes: &[u32],
    ) -> Result<Self, PreprocessError> {
        let ad: Vec<AngularDelayCsi> = channels
            .iter()
            .map(|c| to_angular_delay(c, nc).map(|a| a.power_normalized()))
            .collect::<Result<_, _>>()?;
        let train: Vec<AngularDelayCsi> = ad.iter().filter(|c| train_scenes.contains(&c.scene_id)).cloned().collect();
        let norm = MinMax::fit(&train)?;
        Self::assemble(channels, &ad, nc, cr, projection_seed, norm)
    }

    /// Like [`build`](Self::build) but reuses normalization fitted
    /// elsewhere, so extra samples land on the same scale.
    pub fn with_norm(
        channels: &[ChannelMatrix],
        nc: usize,
        cr: CompressionRatio,
        projection_seed: u64,
        norm: MinMax,
    ) -> Result<Self, PreprocessError> {
        let ad: Vec<AngularDelayCsi> = channels
            .iter()
            .map(|c| to_angular_delay(c, nc).map(|a| a.power_normalized()))
            .collect::<Result<_, _>>()?;
        Self::assemble(channels, &ad, nc, cr, projection_seed, norm)
    }

    fn assemble(
        channels: &[ChannelMatrix],
        ad: &[AngularDelayCsi],
        nc: usize,
        cr: CompressionRatio,
        projection_seed: u64,
        norm: MinMax,
    ) -> Result<Self, PreprocessError> {
        let nt = channels.first().map(|c| c.antennas()).unwrap_or(0);
        let proj = ProjectionMatrix::generate(cr, 2 * nc * nt, projection_seed)?;
        let records = ad
            .iter()
            .zip(channels)
            .map(|(c, ch)| {
                let h = norm.apply(c);
                let s = compress(&h, &proj)?;
                Ok(PreprocessedRecord {
                    scene_id: c.scene_id,
                    ue_position: ch.ue_position,
                    scale: c.norm_scale,
                    h: h.vectorize(),
                    s: s.s,
                })
            })
            .collect::<Result<_, PreprocessError>>()?;
        Ok(Self {
            nc,
            nt,
            cr,
            projection_seed,
            norm,
            records,
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), PreprocessError> {
        let (n, m) = (self.n(), self.m());
        let mut buf = Vec::with_capacity(64 + self.records.len() * (36 + 8 * (n + m)));
        buf.extend_from_slice(PP_MAGIC);
        buf.extend_from_slice(&PP_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for v in [self.nc as u32, self.nt as u32, m as u32, self.cr.num, self.cr.den] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.projection_seed.to_le_bytes());
        buf.extend_from_slice(&self.norm.min.to_le_bytes());
        buf.extend_from_slice(&self.norm.max.to_le_bytes());
        for r in &self.records {
            if r.h.len() != n || r.s.len() != m {
                return Err(PreprocessError::Dimension("record length does not match header".into()));
            }
            buf.extend_from_slice(&r.scene_id.to_le_bytes());
            for v in [r.ue_position.x, r.ue_position.y, r.ue_position.z, r.scale].iter().chain(&r.h).chain(&r.s) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, PreprocessError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let mut take = |k: usize| -> Result<&[u8], PreprocessError> {
            if pos + k > bytes.len() {
                return Err(PreprocessError::Format("unexpected end of file".into()));
            }
            let s = &bytes[pos..pos + k];
            pos += k;
            Ok(s)
        };
        if take(5)? != PP_MAGIC {
            return Err(PreprocessError::Format("bad magic (expected ACNPP)".into()));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != PP_VERSION {
            return Err(PreprocessError::Format(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut u32s = [0u32; 5];
        for v in &mut u32s {
            *v = u32::from_le_bytes(take(4)?.try_into().unwrap());
        }
        let [nc, nt, m, num, den] = u32s.map(|v| v as usize);
        let projection_seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let min = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let max = f64::from_le_bytes(take(8)?.try_into().unwrap());
        let cr = CompressionRatio::new(num as u32, den as u32);
        let n = 2 * nc * nt;
        if cr.codeword_len(n) != m {
            return Err(PreprocessError::Format(format!("header M = {m} inconsistent with CR {cr} and N = {n}")));
        }
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let scene_id = u32::from_le_bytes(take(4)?.try_into().unwrap());
            let mut f = |k: usize| -> Result<Vec<f64>, PreprocessError> {
                (0..k).map(|_| Ok(f64::from_le_bytes(take(8)?.try_into().unwrap()))).collect()
            };
            let ue = f(4)?;
            let h = f(n)?;
            let s = f(m)?;
            records.push(PreprocessedRecord {
                scene_id,
                ue_position: Point3::new(ue[0], ue[1], ue[2]),
                scale: ue[3],
                h,
                s,
            });
        }
        if pos != bytes.len() {
            return Err(PreprocessError::Format("trailing bytes after last record".into()));
        }
        Ok(Self {
            nc,
            nt,
            cr,
            projection_seed,
            norm: MinMax { min, max },
            records,
        })
    }
}
