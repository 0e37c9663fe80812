//! Precomputed ad-vector dictionary with exact top-k cosine search.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use fastmatch_tensor::{Checkpoint, SparseVec};

use crate::corpus::AdListing;
use crate::error::{Error, Result};
use crate::models::{score_vectors, Cdssm, Featurizer, Side};
use crate::seed;

const MAGIC: &[u8; 8] = b"FMVDICT\0";
const VERSION: u32 = 1;

/// Digest identifying an encoder checkpoint.
pub fn checkpoint_digest(ckpt: &Checkpoint) -> Result<String> {
    let mut bytes = Vec::new();
    ckpt.write_to(&mut bytes)?;
    Ok(seed::digest_hex(&bytes))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    pub id: u64,
    pub score: f64,
}

/// Ad-side unit vectors, one row per listing, tagged with the encoder they
/// came from.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorDictionary {
    ids: Vec<u64>,
    dim: usize,
    rows: Vec<f64>,
    checkpoint: String,
}

impl VectorDictionary {
    /// Encodes `listings` with the ad tower; listing `i` gets id `i`.
    pub fn build(model: &Cdssm, featurizer: &Featurizer, listings: &[AdListing], checkpoint: &str) -> Result<Self> {
        let seqs: Vec<Vec<SparseVec>> = listings.iter().map(|l| featurizer.ad(l)).collect();
        let refs: Vec<&[SparseVec]> = seqs.iter().map(Vec::as_slice).collect();
        let vectors = model.encode(Side::Ad, &refs)?;
        Self::from_vectors((0..listings.len() as u64).collect(), &vectors, model.config.semantic_dim, checkpoint)
    }

    pub fn from_vectors(ids: Vec<u64>, vectors: &[Vec<f64>], dim: usize, checkpoint: &str) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::Precondition(format!("{} ids for {} vectors", ids.len(), vectors.len())));
        }
        let mut rows = Vec::with_capacity(vectors.len() * dim);
        for v in vectors {
            if v.len() != dim {
                return Err(Error::Precondition(format!("vector of length {} in a {dim}-dim dictionary", v.len())));
            }
            rows.extend_from_slice(v);
        }
        Ok(Self { ids, dim, rows, checkpoint: checkpoint.into() })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn checkpoint(&self) -> &str {
        &self.checkpoint
    }

    /// Fails unless the dictionary was built by the encoder with digest `checkpoint`.
    pub fn check_encoder(&self, checkpoint: &str) -> Result<()> {
        if self.checkpoint != checkpoint {
            return Err(Error::Precondition(format!(
                "dictionary was built by encoder {} but the query encoder is {checkpoint}",
                self.checkpoint
            )));
        }
        Ok(())
    }

    /// The `k` best listings for an encoded query, by descending score with
    /// ties broken by ascending id.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<Hit>> {
        if self.is_empty() {
            return Err(Error::Precondition("top-k over an empty dictionary".into()));
        }
        if query.len() != self.dim {
            return Err(Error::Precondition(format!("query vector has length {}, dictionary dim is {}", query.len(), self.dim)));
        }
        if k > self.len() {
            return Err(Error::Precondition(format!("k = {k} exceeds dictionary size {}", self.len())));
        }
        let mut hits: Vec<Hit> =
            (0..self.len()).map(|i| Hit { id: self.ids[i], score: score_vectors(query, self.row(i)) }).collect();
        let order = |a: &Hit, b: &Hit| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id));
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, order);
            hits.truncate(k);
        }
        hits.sort_unstable_by(order);
        Ok(hits)
    }

    /// Header length in bytes for a given checkpoint digest.
    pub fn header_len(checkpoint: &str) -> usize {
        MAGIC.len() + 4 + 4 + 8 + 4 + checkpoint.len()
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.checkpoint.len() as u32).to_le_bytes())?;
        w.write_all(self.checkpoint.as_bytes())?;
        for x in &self.rows {
            w.write_all(&x.to_le_bytes())?;
        }
        for id in &self.ids {
            w.write_all(&id.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).and_then(|()| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        let mut r = BufReader::new(file);
        let bad = |message: &str| Error::Format { path: path.to_path_buf(), line: 0, message: message.into() };
        let truncated = |_| bad("truncated dictionary file");
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(bad("not a vector dictionary"));
        }
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u32buf).map_err(truncated)?;
        if u32::from_le_bytes(u32buf) != VERSION {
            return Err(bad("unsupported dictionary version"));
        }
        r.read_exact(&mut u32buf).map_err(truncated)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u64buf).map_err(truncated)?;
        let count = usize::try_from(u64::from_le_bytes(u64buf)).map_err(|_| bad("row count overflows"))?;
        r.read_exact(&mut u32buf).map_err(truncated)?;
        let mut hash = vec![0u8; u32::from_le_bytes(u32buf) as usize];
        r.read_exact(&mut hash).map_err(truncated)?;
        let checkpoint = String::from_utf8(hash).map_err(|_| bad("checkpoint digest is not UTF-8"))?;
        let n_values = count.checked_mul(dim).ok_or_else(|| bad("dictionary shape overflows"))?;
        let mut rows = Vec::with_capacity(n_values.min(1 << 20));
        for _ in 0..n_values {
            r.read_exact(&mut u64buf).map_err(truncated)?;
            rows.push(f64::from_le_bytes(u64buf));
        }
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            r.read_exact(&mut u64buf).map_err(truncated)?;
            ids.push(u64::from_le_bytes(u64buf));
        }
        if r.read(&mut [0u8; 1]).map_err(|e| Error::io(path, e))? != 0 {
            return Err(bad("trailing bytes after id table"));
        }
        Ok(Self { ids, dim, rows, checkpoint })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    fn dict() -> VectorDictionary {
        let vs = vec![unit(&[1.0, 0.0]), unit(&[0.0, 1.0]), unit(&[1.0, 1.0]), unit(&[1.0, 0.0])];
        VectorDictionary::from_vectors(vec![0, 1, 2, 3], &vs, 2, "abc").unwrap()
    }

    #[test]
    fn top_k_orders_and_breaks_ties_by_id() {
        let d = dict();
        let hits = d.top_k(&unit(&[1.0, 0.0]), 4).unwrap();
        let ids: Vec<u64> = hits.iter().map(|h| h.id).collect();
        assert_eq!(ids, [0, 3, 2, 1]);
        assert_eq!(hits[0].score, 1.0);
        assert_eq!(d.top_k(&unit(&[1.0, 0.0]), 1).unwrap()[0].id, 0);
        assert!(d.top_k(&[1.0, 0.0], 5).is_err());
    }

    #[test]
    fn empty_dictionary_is_an_error() {
        let d = VectorDictionary::from_vectors(vec![], &[], 2, "abc").unwrap();
        assert!(d.top_k(&[1.0, 0.0], 0).is_err());
    }

    #[test]
    fn file_round_trip_and_size() {
        let d = dict();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dict.bin");
        d.save(&p).unwrap();
        let len = std::fs::metadata(&p).unwrap().len() as usize;
        assert_eq!(len, VectorDictionary::header_len("abc") + 4 * 2 * 8 + 4 * 8);
        assert_eq!(VectorDictionary::load(&p).unwrap(), d);
        assert!(d.check_encoder("abc").is_ok());
        assert!(d.check_encoder("abd").is_err());
        std::fs::write(&p, b"FMVDICT\0\x01\0\0\0").unwrap();
        assert!(matches!(VectorDictionary::load(&p), Err(Error::Format { .. })));
        assert!(matches!(VectorDictionary::load(&dir.path().join("none")), Err(Error::MissingArtifact(_))));
    }
}
