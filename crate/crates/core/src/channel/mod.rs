//! Plan-view image-method ray tracer and OFDM/ULA channel synthesis.

mod assemble;
mod dataset;
mod trace;

pub use assemble::{assemble_channel, ChannelMatrix, OfdmConfig, UlaConfig};
pub use dataset::{
    generate_dataset, generate_scene_samples, read_dataset, write_dataset, DatasetConfig, DatasetHeader,
};
pub use trace::{fresnel_te, is_los, knife_edge_loss_db, trace_paths, PathComponent, TraceConfig};

use thiserror::Error;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("UE position ({x:.3}, {y:.3}, {z:.3}) is outside the UE region of scene {scene_id}")]
    UeOutsideRegion { scene_id: u32, x: f64, y: f64, z: f64 },
    #[error("cannot assemble a channel from an empty path list")]
    NoPaths,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("scene {scene_id}: resampling exhausted after {attempts} UE drops without a propagation path")]
    ResamplingExhausted { scene_id: u32, attempts: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset file: {0}")]
    Format(String),
}
