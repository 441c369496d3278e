//! Binary checkpoint: a JSON header describing the model, named parameter
//! arrays and optional Adam state, all little-endian `f64`.

use super::{AdamConfig, AdamState};
use ndarray::{ArrayD, IxDyn};
use std::io::{Read, Write};
use thiserror::Error;

const MAGIC: &[u8; 5] = b"ACNCK";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: String,
    pub params: Vec<(String, ArrayD<f64>)>,
    pub optimizer: Option<AdamState>,
}

fn put_array(w: &mut impl Write, a: &ArrayD<f64>) -> std::io::Result<()> {
    w.write_all(&(a.ndim() as u32).to_le_bytes())?;
    for &d in a.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in a.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn take<const K: usize>(r: &mut impl Read) -> Result<[u8; K], CheckpointError> {
    let mut b = [0u8; K];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn get_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    Ok(u32::from_le_bytes(take(r)?))
}

fn get_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    Ok(u64::from_le_bytes(take(r)?))
}

fn get_f64(r: &mut impl Read) -> Result<f64, CheckpointError> {
    Ok(f64::from_le_bytes(take(r)?))
}

fn get_array(r: &mut impl Read) -> Result<ArrayD<f64>, CheckpointError> {
    let nd = get_u32(r)? as usize;
    if nd > 8 {
        return Err(CheckpointError::Format(format!("array rank {nd}")));
    }
    let mut shape = Vec::with_capacity(nd);
    for _ in 0..nd {
        shape.push(get_u64(r)? as usize);
    }
    let n: usize = shape.iter().product();
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(ArrayD::from_shape_vec(IxDyn(&shape), data).expect("sized"))
}

impl Checkpoint {
    pub fn param(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.header.len() as u32).to_le_bytes())?;
        w.write_all(self.header.as_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, a) in &self.params {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            put_array(w, a)?;
        }
        match &self.optimizer {
            None => w.write_all(&[0])?,
            Some(st) => {
                w.write_all(&[1])?;
                w.write_all(&st.step_count.to_le_bytes())?;
                let c = st.config;
                for v in [c.lr, c.beta1, c.beta2, c.eps] {
                    w.write_all(&v.to_le_bytes())?;
                }
                w.write_all(&(st.first_moment.len() as u32).to_le_bytes())?;
                for (m, v) in st.first_moment.iter().zip(&st.second_moment) {
                    put_array(w, m)?;
                    put_array(w, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self, CheckpointError> {
        let magic: [u8; 5] = take(r)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes(take(r)?);
        if version != VERSION {
            return Err(CheckpointError::Format(format!("unsupported version {version}")));
        }
        let hlen = get_u32(r)? as usize;
        let mut hb = vec![0u8; hlen];
        r.read_exact(&mut hb)?;
        let header = String::from_utf8(hb).map_err(|e| CheckpointError::Format(e.to_string()))?;
        let count = get_u32(r)? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = u16::from_le_bytes(take(r)?) as usize;
            let mut nb = vec![0u8; nlen];
            r.read_exact(&mut nb)?;
            let name = String::from_utf8(nb).map_err(|e| CheckpointError::Format(e.to_string()))?;
            params.push((name, get_array(r)?));
        }
        let [flag] = take::<1>(r)?;
        let optimizer = match flag {
            0 => None,
            1 => {
                let step_count = get_u64(r)?;
                let config = AdamConfig { lr: get_f64(r)?, beta1: get_f64(r)?, beta2: get_f64(r)?, eps: get_f64(r)? };
                let n = get_u32(r)? as usize;
                let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
                for _ in 0..n {
                    m.push(get_array(r)?);
                    v.push(get_array(r)?);
                }
                Some(AdamState { config, first_moment: m, second_moment: v, step_count })
            }
            f => return Err(CheckpointError::Format(format!("optimizer flag {f}"))),
        };
        Ok(Self { header, params, optimizer })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CheckpointError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CheckpointError> {
        Self::read(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
