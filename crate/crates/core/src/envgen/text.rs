use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::universe::{normalize, UrlId};
use crate::error::{CoreError, Result};
use crate::rng::stream;

/// Bag-of-hashed-tokens embedder: each token hashes to one of `buckets` rows
/// of a fixed random projection, and a document is the normalized sum of its
/// token rows.
#[derive(Clone, Debug)]
pub struct HashedTextEmbedder {
    seed: u64,
    buckets: usize,
    dim: usize,
    projection: Vec<f64>,
}

impl HashedTextEmbedder {
    pub fn new(dim: usize, buckets: usize, seed: u64) -> Result<Self> {
        if dim < 2 || buckets == 0 {
            return Err(CoreError::Config(format!("text embedder needs dim >= 2 and buckets >= 1 (got {dim}, {buckets})")));
        }
        let mut rng = stream(seed, "text/projection", 0);
        let projection = (0..dim * buckets).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        Ok(Self { seed, buckets, dim, projection })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn bucket(&self, token: &str) -> usize {
        let mut h = 0xcbf2_9ce4_8422_2325u64 ^ self.seed;
        for b in token.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        (h % self.buckets as u64) as usize
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim];
        let mut tokens = 0usize;
        for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let b = self.bucket(&token.to_lowercase());
            v.iter_mut().zip(&self.projection[b * self.dim..(b + 1) * self.dim]).for_each(|(a, p)| *a += p);
            tokens += 1;
        }
        if tokens == 0 || obfusim_nn::l2_norm(&v) == 0.0 {
            return Err(CoreError::InvalidInput("document has no tokens".into()));
        }
        normalize(&mut v);
        Ok(v)
    }

    /// Embeds every `<url id>.txt` file in `dir`. Other files are ignored.
    pub fn embed_directory(&self, dir: &Path) -> Result<Vec<(UrlId, Vec<f64>)>> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u32>().ok()) else {
                continue;
            };
            let text = std::fs::read_to_string(&path)?;
            let v = self
                .embed(&text)
                .map_err(|e| CoreError::InvalidInput(format!("{}: {e}", path.display())))?;
            out.push((UrlId(id), v));
        }
        out.sort_by_key(|(id, _)| *id);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_unit_vectors() {
        let e = HashedTextEmbedder::new(16, 256, 4).unwrap();
        let a = e.embed("Running shoes for trail running").unwrap();
        let b = e.embed("running SHOES, for trail running!").unwrap();
        assert_eq!(a, b);
        assert!((obfusim_nn::l2_norm(&a) - 1.0).abs() < 1e-12);
        assert_ne!(a, e.embed("kitchen knives").unwrap());
        assert!(e.embed("  ,;  ").is_err());
    }

    #[test]
    fn reads_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("3.txt"), "garden tools").unwrap();
        std::fs::write(dir.path().join("1.txt"), "laptop deals").unwrap();
        std::fs::write(dir.path().join("notes.md"), "ignored").unwrap();
        let e = HashedTextEmbedder::new(8, 64, 1).unwrap();
        let out = e.embed_directory(dir.path()).unwrap();
        assert_eq!(out.iter().map(|(id, _)| id.0).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(out[0].1, e.embed("laptop deals").unwrap());
    }
}
