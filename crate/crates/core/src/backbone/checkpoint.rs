//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "UNKDCKPT"
//! version  u32 LE   1
//! kind     u32 LE   0 = MF, 1 = LightGCN
//! m        u64 LE   users
//! n        u64 LE   items
//! d        u64 LE   embedding dimension
//! layers   u32 LE   LightGCN layer count (0 for MF)
//! users    m*d f32 LE, row-major
//! items    n*d f32 LE, row-major
//! ```

use std::fs;
use std::path::Path;

use super::{BackboneKind, EmbeddingModel, Embeddings};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UNKDCKPT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 8 * 3 + 4;

impl EmbeddingModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = self.params();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * (p.users.len() + p.items.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let kind: u32 = match self.kind() {
            BackboneKind::Mf => 0,
            BackboneKind::LightGcn => 1,
        };
        out.extend_from_slice(&kind.to_le_bytes());
        out.extend_from_slice(&(p.num_users as u64).to_le_bytes());
        out.extend_from_slice(&(p.num_items as u64).to_le_bytes());
        out.extend_from_slice(&(p.dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.layers() as u32).to_le_bytes());
        for x in p.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("missing magic header".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = match u32_at(12) {
            0 => BackboneKind::Mf,
            1 => BackboneKind::LightGcn,
            k => return Err(Error::Checkpoint(format!("unknown kind {k}"))),
        };
        let (m, n, d) = (
            u64_at(16) as usize,
            u64_at(24) as usize,
            u64_at(32) as usize,
        );
        let layers = u32_at(40) as usize;
        let count = m
            .checked_add(n)
            .and_then(|t| t.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint("shape overflow".into()))?;
        if bytes.len() != HEADER_LEN + 4 * count {
            return Err(Error::Checkpoint(format!(
                "expected {} payload bytes, found {}",
                4 * count,
                bytes.len() - HEADER_LEN
            )));
        }
        let mut values = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let users: Vec<f32> = values.by_ref().take(m * d).collect();
        let items: Vec<f32> = values.collect();
        EmbeddingModel::new(kind, layers, Embeddings::from_parts(m, n, d, users, items)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::init_embeddings;

    #[test]
    fn round_trip_is_bit_exact() {
        for kind in [BackboneKind::Mf, BackboneKind::LightGcn] {
            let m = init_embeddings(kind, 4, 6, 5, 2, 9, 0.3).unwrap();
            let bytes = m.to_bytes();
            let back = EmbeddingModel::from_bytes(&bytes).unwrap();
            assert_eq!(back.kind(), kind);
            assert_eq!(back.to_bytes(), bytes);
            let bits =
                |e: &EmbeddingModel| e.params().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back), bits(&m));
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let m = init_embeddings(BackboneKind::LightGcn, 1, 2, 3, 2, 0, 0.0).unwrap();
        let b = m.to_bytes();
        assert_eq!(&b[..8], b"UNKDCKPT");
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..24], &1u64.to_le_bytes());
        assert_eq!(&b[24..32], &2u64.to_le_bytes());
        assert_eq!(&b[32..40], &3u64.to_le_bytes());
        assert_eq!(&b[40..44], &2u32.to_le_bytes());
        assert_eq!(b.len(), 44 + 4 * 9);
    }

    #[test]
    fn truncated_or_foreign_bytes_fail() {
        let m = init_embeddings(BackboneKind::Mf, 2, 2, 2, 0, 0, 0.1).unwrap();
        let b = m.to_bytes();
        assert!(EmbeddingModel::from_bytes(&b[..b.len() - 1]).is_err());
        assert!(
            EmbeddingModel::from_bytes(b"NOTACKPT0000000000000000000000000000000000000").is_err()
        );
    }
}
