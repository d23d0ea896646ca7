//! Exact-scan cosine index.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rusqlite::{params, Connection};
use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::embeddings::{cosine, Embedding, Provenance, EMBEDDING_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorKind {
    Report,
    Paper,
    Extraction,
}

impl VectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VectorKind::Report => "report",
            VectorKind::Paper => "paper",
            VectorKind::Extraction => "extraction",
        }
    }
}

impl fmt::Display for VectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VectorKind {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "report" => Ok(VectorKind::Report),
            "paper" => Ok(VectorKind::Paper),
            "extraction" => Ok(VectorKind::Extraction),
            other => Err(StoreError::Database(format!("unknown vector kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredVector {
    pub key: String,
    pub vector: Embedding,
    pub kind: VectorKind,
}

/// Storage and lookup of report-owned vectors.
pub trait VectorIndex: Send + Sync {
    /// Replaces every vector owned by `owner` with `vectors`.
    fn replace_owned(&self, owner: &str, vectors: &[StoredVector]) -> Result<(), StoreError>;

    /// Top `k` keys of `kind` by cosine similarity, ties by key ascending.
    fn search(&self, query: &[f32], kind: VectorKind, k: usize) -> Result<Vec<(String, f64)>, StoreError>;

    fn count(&self, kind: VectorKind) -> Result<usize, StoreError>;
}

/// Orders `(key, score)` pairs by score descending, then key ascending.
pub fn rank(mut scored: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        other => other,
    });
    scored.truncate(k);
    scored
}

pub fn pack_f32_le(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn unpack_f32_le(bytes: &[u8]) -> Result<Vec<f32>, StoreError> {
    if bytes.len() != EMBEDDING_DIM * 4 {
        return Err(StoreError::Database(format!(
            "vector blob has {} bytes, expected {}",
            bytes.len(),
            EMBEDDING_DIM * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Vectors kept in the `vectors` table of the report database.
#[derive(Clone)]
pub struct SqliteVectorIndex {
    conn: Arc<Mutex<Connection>>,
}

impl SqliteVectorIndex {
    pub(super) fn new(conn: Arc<Mutex<Connection>>) -> Self {
        SqliteVectorIndex { conn }
    }
}

impl VectorIndex for SqliteVectorIndex {
    fn replace_owned(&self, owner: &str, vectors: &[StoredVector]) -> Result<(), StoreError> {
        for v in vectors {
            if v.vector.vector.len() != EMBEDDING_DIM {
                return Err(StoreError::VectorIndex(format!(
                    "vector {} has dimension {}",
                    v.key,
                    v.vector.vector.len()
                )));
            }
        }
        let mut conn = self.conn.lock().expect("store connection poisoned");
        let tx = conn.transaction()?;
        tx.execute("DELETE FROM vectors WHERE owner = ?1", params![owner])?;
        {
            let mut insert = tx.prepare(
                "INSERT OR REPLACE INTO vectors (key, kind, owner, provenance, data) VALUES (?1, ?2, ?3, ?4, ?5)",
            )?;
            for v in vectors {
                let provenance = match v.vector.provenance {
                    Provenance::Remote => "remote",
                    Provenance::Local => "local",
                };
                insert.execute(params![
                    v.key,
                    v.kind.as_str(),
                    owner,
                    provenance,
                    pack_f32_le(&v.vector.vector)
                ])?;
            }
        }
        tx.commit()?;
        Ok(())
    }

    fn search(&self, query: &[f32], kind: VectorKind, k: usize) -> Result<Vec<(String, f64)>, StoreError> {
        let conn = self.conn.lock().expect("store connection poisoned");
        let mut stmt = conn.prepare("SELECT key, data FROM vectors WHERE kind = ?1")?;
        let rows = stmt.query_map(params![kind.as_str()], |r| {
            Ok((r.get::<_, String>(0)?, r.get::<_, Vec<u8>>(1)?))
        })?;
        let mut scored = Vec::new();
        for row in rows {
            let (key, blob) = row?;
            scored.push((key, cosine(query, &unpack_f32_le(&blob)?)));
        }
        Ok(rank(scored, k))
    }

    fn count(&self, kind: VectorKind) -> Result<usize, StoreError> {
        let conn = self.conn.lock().expect("store connection poisoned");
        let n: i64 = conn.query_row(
            "SELECT COUNT(*) FROM vectors WHERE kind = ?1",
            params![kind.as_str()],
            |r| r.get(0),
        )?;
        Ok(n as usize)
    }
}

/// An index that is switched off. Every call fails, which routes writes to
/// warnings and searches to the keyword fallback.
#[derive(Debug, Default, Clone, Copy)]
pub struct DisabledVectorIndex;

impl VectorIndex for DisabledVectorIndex {
    fn replace_owned(&self, _owner: &str, _vectors: &[StoredVector]) -> Result<(), StoreError> {
        Err(StoreError::VectorIndex("vector index disabled".into()))
    }

    fn search(&self, _query: &[f32], _kind: VectorKind, _k: usize) -> Result<Vec<(String, f64)>, StoreError> {
        Err(StoreError::VectorIndex("vector index disabled".into()))
    }

    fn count(&self, _kind: VectorKind) -> Result<usize, StoreError> {
        Err(StoreError::VectorIndex("vector index disabled".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pack_round_trip() {
        let v: Vec<f32> = (0..EMBEDDING_DIM).map(|i| i as f32 * -0.25).collect();
        let bytes = pack_f32_le(&v);
        assert_eq!(bytes.len(), EMBEDDING_DIM * 4);
        assert_eq!(&bytes[4..8], &(-0.25f32).to_le_bytes());
        assert_eq!(unpack_f32_le(&bytes).unwrap(), v);
        assert!(unpack_f32_le(&bytes[..12]).is_err());
    }

    #[test]
    fn rank_breaks_ties_by_key() {
        let ranked = rank(
            vec![
                ("b".into(), 0.5),
                ("a".into(), 0.5),
                ("c".into(), 0.9),
                ("d".into(), -1.0),
            ],
            3,
        );
        let keys: Vec<&str> = ranked.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, ["c", "a", "b"]);
    }

    proptest! {
        #[test]
        fn rank_is_sorted_prefix(scores in proptest::collection::vec(-4i32..4, 0..30), k in 1usize..12) {
            let scored: Vec<(String, f64)> = scores.iter().enumerate().map(|(i, s)| (format!("k{i:02}"), *s as f64 / 4.0)).collect();
            let ranked = rank(scored.clone(), k);
            prop_assert_eq!(ranked.len(), k.min(scored.len()));
            for w in ranked.windows(2) {
                prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
            }
        }
    }
}
