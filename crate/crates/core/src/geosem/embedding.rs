//! Embedding providers: text and per-pixel image encoders sharing one vector space.
//!
//! The synthetic provider stands in for a vision-language encoder. Every label
//! maps to a fixed unit vector, either a basis vector (orthonormal vocabulary)
//! or a hash-seeded random direction, so semantic behaviour is reproducible
//! without model weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// RGB image, row-major.
pub type RgbImage = Grid<[u8; 3]>;

/// Maps text queries and image pixels into a shared D-dimensional space.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// Unit-norm embedding of a text query.
    fn embed_text(&self, query: &str) -> Result<Vec<f32>>;

    /// Per-pixel embeddings, row-major and channel-last (`H·W·D` values).
    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f32>>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    /// Vocabulary label `i` maps to basis vector `e_i`; other labels are hashed.
    #[default]
    Orthonormal,
    /// Every label maps to a hash-seeded random unit vector.
    Hashed,
}

/// Labels every scene carries in addition to its object categories.
pub const STRUCTURAL_LABELS: [&str; 2] = ["floor", "wall"];

/// Deterministic stand-in for a CLIP-style encoder.
#[derive(Clone, Debug)]
pub struct SyntheticProvider {
    dim: usize,
    kind: EmbeddingKind,
    vocabulary: Vec<String>,
}

impl SyntheticProvider {
    pub fn new(dim: usize, kind: EmbeddingKind, vocabulary: Vec<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        let vocabulary: Vec<String> = vocabulary.iter().map(|s| normalize_label(s)).collect();
        if kind == EmbeddingKind::Orthonormal && vocabulary.len() > dim {
            return Err(Error::InvalidArgument(format!(
                "orthonormal embeddings need D >= {} (vocabulary size), got D = {dim}",
                vocabulary.len()
            )));
        }
        Ok(Self {
            dim,
            kind,
            vocabulary,
        })
    }

    /// Provider for a scene vocabulary: structural labels first, then categories.
    pub fn for_categories(dim: usize, kind: EmbeddingKind, categories: &[String]) -> Result<Self> {
        let vocabulary = STRUCTURAL_LABELS
            .iter()
            .map(|s| s.to_string())
            .chain(categories.iter().cloned())
            .collect();
        Self::new(dim, kind, vocabulary)
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    /// Embedding of `label`; infallible for the synthetic provider.
    pub fn label_embedding(&self, label: &str) -> Vec<f32> {
        let label = normalize_label(label);
        if self.kind == EmbeddingKind::Orthonormal {
            if let Some(i) = self.vocabulary.iter().position(|v| *v == label) {
                let mut e = vec![0.0; self.dim];
                e[i] = 1.0;
                return e;
            }
        }
        hashed_unit_vector(&label, self.dim)
    }

    /// Colour used for `label` when rendering synthetic images.
    pub fn palette_color(label: &str) -> [u8; 3] {
        let h = fnv1a(normalize_label(label).as_bytes());
        // Keep channels away from 0 so labels never collide with "no data" black.
        [
            32 + (h & 0xbf) as u8,
            32 + ((h >> 8) & 0xbf) as u8,
            32 + ((h >> 16) & 0xbf) as u8,
        ]
    }

    fn pixel_embedding(&self, rgb: [u8; 3]) -> Vec<f32> {
        match self
            .vocabulary
            .iter()
            .find(|label| Self::palette_color(label) == rgb)
        {
            Some(label) => self.label_embedding(label),
            None => hashed_unit_vector(&format!("rgb:{},{},{}", rgb[0], rgb[1], rgb[2]), self.dim),
        }
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, query: &str) -> Result<Vec<f32>> {
        Ok(self.label_embedding(query))
    }

    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(image.len() * self.dim);
        let mut cache: Vec<([u8; 3], Vec<f32>)> = Vec::new();
        for &px in image.iter() {
            match cache.iter().find(|(c, _)| *c == px) {
                Some((_, e)) => out.extend_from_slice(e),
                None => {
                    let e = self.pixel_embedding(px);
                    out.extend_from_slice(&e);
                    cache.push((px, e));
                }
            }
        }
        Ok(out)
    }
}

pub fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Unit vector drawn from an isotropic Gaussian seeded by the label hash.
pub fn hashed_unit_vector(label: &str, dim: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(label.as_bytes()));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na <= 1e-12 || nb <= 1e-12 {
        None
    } else {
        Some(dot(a, b) / (na * nb))
    }
}

/// Pairwise similarity between label embeddings, used as a semantic prior.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorMatrix {
    labels: Vec<String>,
    scores: Vec<f64>,
}

impl PriorMatrix {
    pub fn from_provider(provider: &dyn EmbeddingProvider, labels: &[String]) -> Result<Self> {
        let embeddings = labels
            .iter()
            .map(|l| provider.embed_text(l))
            .collect::<Result<Vec<_>>>()?;
        let k = labels.len();
        let mut scores = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                scores[i * k + j] = cosine(&embeddings[i], &embeddings[j]).unwrap_or(0.0);
            }
        }
        Ok(Self {
            labels: labels.iter().map(|l| normalize_label(l)).collect(),
            scores,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        let label = normalize_label(label);
        self.labels.iter().position(|l| *l == label)
    }

    pub fn score(&self, a: usize, b: usize) -> f64 {
        self.scores[a * self.labels.len() + b]
    }

    pub fn score_by_label(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.score(self.index_of(a)?, self.index_of(b)?))
    }
}
