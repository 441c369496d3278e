//! CSI dataset generation and the `ACNDS` file format.
//!
//! Layout (little-endian): magic `ACNDS`, version `u16`, record count
//! `u64`, `N'c: u32`, `Nt: u32`, centre frequency `f64`, bandwidth `f64`;
//! then per record `scene_id: u32`, UE position `3 × f64` and `N'c × Nt`
//! complex values as interleaved `f32` `(re, im)`, row-major over
//! subcarriers.

use super::{assemble_channel, trace_paths, ChannelError, ChannelMatrix, OfdmConfig, TraceConfig, UlaConfig};
use crate::geometry::Point3;
use crate::scene::Scene;
use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

const MAGIC: &[u8; 5] = b"ACNDS";
const VERSION: u16 = 1;
const MAX_DROPS_PER_SAMPLE: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub samples_per_scene: usize,
    pub seed: u64,
    pub trace: TraceConfig,
    pub ula: UlaConfig,
    pub ofdm: OfdmConfig,
    /// Minimum UE distance from any wall.
    pub wall_margin: f64,
    /// Minimum horizontal UE distance from the base station.
    pub bs_clearance: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            samples_per_scene: 200,
            seed: 0,
            trace: TraceConfig::default(),
            ula: UlaConfig::default(),
            ofdm: OfdmConfig::default(),
            wall_margin: 0.1,
            bs_clearance: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetHeader {
    pub count: u64,
    pub subcarriers: u32,
    pub antennas: u32,
    pub center_freq: f64,
    pub bandwidth: f64,
}

fn one_sample(scene: &Scene, index: usize, cfg: &DatasetConfig) -> Result<ChannelMatrix, ChannelError> {
    for attempt in 0..MAX_DROPS_PER_SAMPLE {
        let mut rng = crate::seed::rng(&[cfg.seed, scene.scene_id as u64, index as u64, attempt as u64]);
        let ue = scene.sample_ue(&mut rng, cfg.wall_margin, cfg.bs_clearance);
        let paths = trace_paths(scene, ue, &cfg.trace)?;
        if paths.is_empty() {
            continue;
        }
        return Ok(assemble_channel(&paths, &cfg.ula, &cfg.ofdm)?.with_origin(scene.scene_id, ue));
    }
    Err(ChannelError::ResamplingExhausted {
        scene_id: scene.scene_id,
        attempts: MAX_DROPS_PER_SAMPLE,
    })
}

/// Samples with the given per-scene indices; index `j` always yields the
/// same drop, so extra samples can be drawn later without disturbing the
/// first `samples_per_scene`.
pub fn generate_scene_samples(
    scene: &Scene,
    indices: std::ops::Range<usize>,
    cfg: &DatasetConfig,
) -> Result<Vec<ChannelMatrix>, ChannelError> {
    let idx: Vec<usize> = indices.collect();
    idx.par_iter().map(|&j| one_sample(scene, j, cfg)).collect()
}

/// Draws `samples_per_scene` UE positions per scene and synthesizes their
/// CSI. Per-sample seeds derive from `(seed, scene_id, index)`, so the
/// output does not depend on thread scheduling.
pub fn generate_dataset(scenes: &[Scene], cfg: &DatasetConfig) -> Result<Vec<ChannelMatrix>, ChannelError> {
    if cfg.samples_per_scene == 0 {
        return Err(ChannelError::InvalidConfig("samples_per_scene must be at least 1".into()));
    }
    if (cfg.trace.center_freq - cfg.ofdm.center_freq).abs() > 0.0 {
        return Err(ChannelError::InvalidConfig("trace and OFDM centre frequencies differ".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..scenes.len())
        .flat_map(|s| (0..cfg.samples_per_scene).map(move |j| (s, j)))
        .collect();
    jobs.par_iter()
        .map(|&(s, j)| one_sample(&scenes[s], j, cfg))
        .collect()
}

pub fn write_dataset<W: Write>(mut w: W, records: &[ChannelMatrix], ofdm: &OfdmConfig, antennas: usize) -> Result<(), ChannelError> {
    let io = |e: std::io::Error| ChannelError::Io {
        path: "<dataset>".into(),
        source: e,
    };
    let mut buf = Vec::with_capacity(64 + records.len() * (28 + ofdm.n_subcarriers * antennas * 8));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(ofdm.n_subcarriers as u32).to_le_bytes());
    buf.extend_from_slice(&(antennas as u32).to_le_bytes());
    buf.extend_from_slice(&ofdm.center_freq.to_le_bytes());
    buf.extend_from_slice(&ofdm.bandwidth.to_le_bytes());
    for r in records {
        if r.h_tilde.dim() != (ofdm.n_subcarriers, antennas) {
            return Err(ChannelError::Format(format!(
                "record shape {:?} does not match header ({}, {})",
                r.h_tilde.dim(),
                ofdm.n_subcarriers,
                antennas
            )));
        }
        buf.extend_from_slice(&r.scene_id.to_le_bytes());
        for v in [r.ue_position.x, r.ue_position.y, r.ue_position.z] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for c in r.h_tilde.iter() {
            buf.extend_from_slice(&(c.re as f32).to_le_bytes());
            buf.extend_from_slice(&(c.im as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ChannelError> {
        if self.pos + n > self.buf.len() {
            return Err(ChannelError::Format("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16, ChannelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ChannelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ChannelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ChannelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, ChannelError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<(DatasetHeader, Vec<ChannelMatrix>), ChannelError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| ChannelError::Io {
        path: "<dataset>".into(),
        source: e,
    })?;
    let mut c = Cursor { buf: &bytes, pos: 0 };
    if c.take(5)? != MAGIC {
        return Err(ChannelError::Format("bad magic (expected ACNDS)".into()));
    }
    let version = c.u16()?;
    if version != VERSION {
        return Err(ChannelError::Format(format!("unsupported version {version}")));
    }
    let header = DatasetHeader {
        count: c.u64()?,
        subcarriers: c.u32()?,
        antennas: c.u32()?,
        center_freq: c.f64()?,
        bandwidth: c.f64()?,
    };
    let (nc, nt) = (header.subcarriers as usize, header.antennas as usize);
    let mut records = Vec::with_capacity(header.count as usize);
    for _ in 0..header.count {
        let scene_id = c.u32()?;
        let ue = Point3::new(c.f64()?, c.f64()?, c.f64()?);
        let mut data = Vec::with_capacity(nc * nt);
        for _ in 0..nc * nt {
            let re = c.f32()? as f64;
            let im = c.f32()? as f64;
            data.push(Complex64::new(re, im));
        }
        records.push(ChannelMatrix {
            h_tilde: Array2::from_shape_vec((nc, nt), data).expect("shape matches"),
            center_freq: header.center_freq,
            bandwidth: header.bandwidth,
            ue_position: ue,
            scene_id,
        });
    }
    if c.pos != bytes.len() {
        return Err(ChannelError::Format("trailing bytes after last record".into()));
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scenes, SceneParams};

    #[test]
    fn bookkeeping_and_determinism() {
        let scenes = generate_scenes(2, 5, &SceneParams::default()).unwrap();
        let cfg = DatasetConfig {
            samples_per_scene: 3,
            seed: 17,
            ..DatasetConfig::default()
        };
        let recs = generate_dataset(&scenes, &cfg).unwrap();
        let ids: Vec<u32> = recs.iter().map(|r| r.scene_id).collect();
        assert_eq!(ids, vec![0, 0, 0, 1, 1, 1]);
        let mut a = Vec::new();
        write_dataset(&mut a, &recs, &cfg.ofdm, 8).unwrap();
        let mut b = Vec::new();
        write_dataset(&mut b, &generate_dataset(&scenes, &cfg).unwrap(), &cfg.ofdm, 8).unwrap();
        assert_eq!(a, b);
        let (h, back) = read_dataset(a.as_slice()).unwrap();
        assert_eq!(h.count, 6);
        assert_eq!(back.len(), 6);
        for (x, y) in recs.iter().zip(&back) {
            assert_eq!(x.ue_position, y.ue_position);
            for (p, q) in x.h_tilde.iter().zip(y.h_tilde.iter()) {
                assert_eq!(p.re as f32, q.re as f32);
                assert_eq!(p.im as f32, q.im as f32);
            }
        }
    }

    #[test]
    fn header_bytes() {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &[], &OfdmConfig::default(), 8).unwrap();
        assert_eq!(&buf[..5], b"ACNDS");
        assert_eq!(buf.len(), 5 + 2 + 8 + 4 + 4 + 8 + 8);
        assert_eq!(&buf[15..19], &64u32.to_le_bytes());
        assert!(read_dataset(&b"XXXXX"[..]).is_err());
    }
}
