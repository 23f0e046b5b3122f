//! Scene directory format.
//!
//! ```text
//! <dir>/meta.json       id, H, W, D, resolution, seed, categories, embedding, objects
//! <dir>/occupancy.f32   H·W little-endian f32, row-major
//! <dir>/interior.u8     H·W bytes, row-major
//! <dir>/semantic.f32    H·W·D little-endian f32, row-major, channel-last
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ObjectInstance, Scene};
use crate::error::{Error, Result};
use crate::geosem::embedding::EmbeddingKind;
use crate::grid::Grid;

pub const META_FILE: &str = "meta.json";
pub const OCCUPANCY_FILE: &str = "occupancy.f32";
pub const INTERIOR_FILE: &str = "interior.u8";
pub const SEMANTIC_FILE: &str = "semantic.f32";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMeta {
    pub id: String,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    #[serde(rename = "D")]
    pub embedding_dim: usize,
    pub resolution: f64,
    pub seed: u64,
    pub categories: Vec<String>,
    #[serde(default)]
    pub embedding: EmbeddingKind,
    pub objects: Vec<ObjectInstance>,
}

pub fn save_scene(scene: &Scene, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = SceneMeta {
        id: scene.id.clone(),
        height: scene.height(),
        width: scene.width(),
        embedding_dim: scene.embedding_dim(),
        resolution: scene.resolution,
        seed: scene.seed,
        categories: scene.categories.clone(),
        embedding: scene.embedding,
        objects: scene.objects.clone(),
    };
    let meta_path = dir.join(META_FILE);
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| Error::json(&meta_path, e))?;
    write(&meta_path, &json)?;
    write(&dir.join(OCCUPANCY_FILE), &f32_to_le_bytes(scene.occupancy.as_slice()))?;
    write(&dir.join(INTERIOR_FILE), scene.interior.as_slice())?;
    write(&dir.join(SEMANTIC_FILE), &f32_to_le_bytes(scene.semantic()))?;
    Ok(())
}

pub fn load_scene(dir: impl AsRef<Path>) -> Result<Scene> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let raw = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SceneMeta = serde_json::from_slice(&raw)
        .map_err(|e| Error::SceneFormat(format!("{}: {e}", meta_path.display())))?;
    if meta.height == 0 || meta.width == 0 || meta.embedding_dim == 0 {
        return Err(Error::SceneFormat(format!(
            "{}: H, W and D must be positive",
            meta_path.display()
        )));
    }
    let cells = meta
        .height
        .checked_mul(meta.width)
        .ok_or_else(|| Error::SceneFormat("H·W overflows".into()))?;

    let occupancy = read_sized(dir, OCCUPANCY_FILE, cells * 4)?;
    let interior = read_sized(dir, INTERIOR_FILE, cells)?;
    let semantic = read_sized(dir, SEMANTIC_FILE, cells * meta.embedding_dim * 4)?;

    let occupancy = Grid::from_vec(meta.height, meta.width, le_bytes_to_f32(&occupancy))
        .expect("payload size checked");
    let interior = Grid::from_vec(meta.height, meta.width, interior).expect("payload size checked");
    Scene::new(
        meta.id,
        meta.resolution,
        meta.seed,
        meta.categories,
        meta.embedding,
        occupancy,
        interior,
        meta.embedding_dim,
        le_bytes_to_f32(&semantic),
        meta.objects,
    )
}

fn read_sized(dir: &Path, name: &str, expected: usize) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != expected {
        return Err(Error::PayloadSize {
            file: path.display().to_string(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes little-endian f32s; trailing bytes that do not form a full value are ignored.
pub fn le_bytes_to_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}
