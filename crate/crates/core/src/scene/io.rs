//! Scene-set directory layout: `manifest.json` plus one `scene_XXXX.acnsg`
//! binary scene-graph file per scene.
//!
//! Binary layout (little-endian): magic `ACNSG`, version `u16`, `G: u32`,
//! `cell_size: f64`, then `G × G` bytes row-major.

use super::{rasterize, Scene, SceneError, SceneGraphMatrix, SceneParams, WallSegment};
use crate::geometry::{Point2, Point3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 5] = b"ACNSG";
const VERSION: u16 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_scene_graph<W: Write>(mut w: W, m: &SceneGraphMatrix) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(m.g as u32).to_le_bytes())?;
    w.write_all(&m.cell_size.to_le_bytes())?;
    w.write_all(&m.grid)?;
    Ok(())
}

/// Reads a scene graph; `scene_id` comes from the manifest, not the file.
pub fn read_scene_graph<R: Read>(mut r: R, scene_id: u32) -> Result<SceneGraphMatrix, String> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|e| e.to_string())?;
    if &magic != MAGIC {
        return Err("bad magic".into());
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2).map_err(|e| e.to_string())?;
    let version = u16::from_le_bytes(b2);
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(|e| e.to_string())?;
    let g = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(|e| e.to_string())?;
    let cell_size = f64::from_le_bytes(b8);
    let mut grid = vec![0u8; g * g];
    r.read_exact(&mut grid).map_err(|e| e.to_string())?;
    if grid.iter().any(|&c| c > 2) {
        return Err("code outside {0,1,2}".into());
    }
    Ok(SceneGraphMatrix {
        grid,
        g,
        cell_size,
        scene_id,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifestEntry {
    pub scene_id: u32,
    pub seed: u64,
    pub bs_position: Point3,
    pub ue_region: Vec<Point2>,
    pub walls: Vec<WallSegment>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub version: u16,
    pub g: usize,
    pub params: SceneParams,
    pub scenes: Vec<SceneManifestEntry>,
}

pub fn scene_file_name(scene_id: u32) -> String {
    format!("scene_{scene_id:04}.acnsg")
}

/// Writes the scene set and returns the scene graphs in id order.
pub fn save_scene_dir(dir: &Path, scenes: &[Scene], params: &SceneParams, g: usize) -> Result<Vec<SceneGraphMatrix>, SceneError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut graphs = Vec::with_capacity(scenes.len());
    let mut entries = Vec::with_capacity(scenes.len());
    for s in scenes {
        let m = rasterize(s, g);
        let file = scene_file_name(s.scene_id);
        let path = dir.join(&file);
        let mut buf = Vec::new();
        write_scene_graph(&mut buf, &m).map_err(io_err(&path))?;
        fs::write(&path, buf).map_err(io_err(&path))?;
        entries.push(SceneManifestEntry {
            scene_id: s.scene_id,
            seed: s.rng_seed,
            bs_position: s.bs_position,
            ue_region: s.ue_region.clone(),
            walls: s.walls.clone(),
            file,
        });
        graphs.push(m);
    }
    let manifest = SceneManifest {
        version: VERSION,
        g,
        params: params.clone(),
        scenes: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(graphs)
}

/// Loads scenes and their scene graphs from a directory written by
/// [`save_scene_dir`].
pub fn load_scene_dir(dir: &Path) -> Result<(SceneManifest, Vec<Scene>, Vec<SceneGraphMatrix>), SceneError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: SceneManifest = serde_json::from_str(&text).map_err(|e| SceneError::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let p = &manifest.params;
    let mut scenes = Vec::new();
    let mut graphs = Vec::new();
    for e in &manifest.scenes {
        let scene = Scene {
            outer_rect: [p.width, p.depth],
            height: p.height,
            walls: e.walls.clone(),
            bs_position: e.bs_position,
            ue_region: e.ue_region.clone(),
            ue_height: p.ue_height,
            scene_id: e.scene_id,
            rng_seed: e.seed,
        };
        let gpath = dir.join(&e.file);
        let bytes = fs::read(&gpath).map_err(io_err(&gpath))?;
        let m = read_scene_graph(bytes.as_slice(), e.scene_id).map_err(|reason| SceneError::Format {
            path: gpath.display().to_string(),
            reason,
        })?;
        if m.g != manifest.g {
            return Err(SceneError::Format {
                path: gpath.display().to_string(),
                reason: format!("grid size {} does not match manifest {}", m.g, manifest.g),
            });
        }
        scenes.push(scene);
        graphs.push(m);
    }
    Ok((manifest, scenes, graphs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::generate_scenes;

    #[test]
    fn header_layout_is_fixed() {
        let m = SceneGraphMatrix {
            grid: vec![0, 1, 2, 0],
            g: 2,
            cell_size: 5.0,
            scene_id: 9,
        };
        let mut buf = Vec::new();
        write_scene_graph(&mut buf, &m).unwrap();
        assert_eq!(&buf[..5], b"ACNSG");
        assert_eq!(&buf[5..7], &1u16.to_le_bytes());
        assert_eq!(&buf[7..11], &2u32.to_le_bytes());
        assert_eq!(&buf[11..19], &5.0f64.to_le_bytes());
        assert_eq!(&buf[19..], &[0, 1, 2, 0]);
        assert_eq!(read_scene_graph(buf.as_slice(), 9).unwrap(), m);
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = SceneParams::default();
        let scenes = generate_scenes(4, 3, &params).unwrap();
        let graphs = save_scene_dir(dir.path(), &scenes, &params, 32).unwrap();
        let (manifest, back, back_graphs) = load_scene_dir(dir.path()).unwrap();
        assert_eq!(manifest.scenes.len(), 4);
        assert_eq!(back, scenes);
        assert_eq!(back_graphs, graphs);
    }
}
