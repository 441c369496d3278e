//! Environment-adaptive CSI feedback testbed.
//!
//! The crate covers the full pipeline: randomized indoor scenes and their
//! rasterized scene graphs ([`scene`]), an image-method ray tracer and
//! OFDM/ULA channel assembly ([`channel`]), angular-delay preprocessing and
//! random-projection compression ([`preprocess`]), a small reverse-mode
//! autodiff kernel ([`autodiff`]), the hypernetwork-conditioned
//! reconstruction model and its two-step training ([`model`]), and the
//! experiment harness ([`harness`]) driven by the CLI ([`config`], [`cli`]).

pub mod autodiff;
pub mod channel;
pub mod cli;
pub mod config;
pub mod geometry;
pub mod harness;
pub mod manifest;
pub mod model;
pub mod preprocess;
pub mod scene;
pub mod seed;

pub use channel::{assemble_channel, trace_paths, ChannelMatrix, OfdmConfig, PathComponent, TraceConfig, UlaConfig};
pub use model::{HyperNet, ReconNet};
pub use preprocess::{compress, to_angular_delay, AngularDelayCsi, Codeword, CompressionRatio, MinMax, ProjectionMatrix};
pub use scene::{generate_scene, rasterize, Scene, SceneGraphMatrix, SceneParams};
