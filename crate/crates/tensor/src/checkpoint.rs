//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "FMCKPT\0\0"
//! version    u32      1
//! arch       u32 len + UTF-8     architecture descriptor (opaque to this crate)
//! vocab      u32 len + UTF-8     path of the trigram vocabulary file
//! config     u32 len + UTF-8     config hash
//! count      u32
//! entries    count × { name: u32 len + UTF-8, trainable: u8, ndim: u32,
//!                      dims: ndim × u64, payload: Π dims × f64 }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"FMCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub architecture: String,
    pub vocab_path: String,
    pub config_hash: String,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_str(w, &self.architecture)?;
        write_str(w, &self.vocab_path)?;
        write_str(w, &self.config_hash)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for id in self.params.ids() {
            let t = self.params.get(id);
            write_str(w, self.params.name(id))?;
            w.write_all(&[u8::from(self.params.is_trainable(id))])?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
        }
        let architecture = read_str(r)?;
        let vocab_path = read_str(r)?;
        let config_hash = read_str(r)?;
        let count = read_u32(r)?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = read_str(r)?;
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            let ndim = read_u32(r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            params.add(name, Tensor::new(shape, data)?, flag[0] != 0);
        }
        Ok(Self { architecture, vocab_path, config_hash, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| TensorError::Checkpoint(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{BatchNorm, Dense};

    #[test]
    fn round_trip_is_bit_exact() {
        let mut params = ParamStore::new();
        let mut rng = crate::init::rng(11);
        Dense::new(&mut params, "a", 5, 3, &mut rng);
        BatchNorm::new(&mut params, "bn", 3);
        params.add("odd", Tensor::new(vec![2], vec![f64::MIN_POSITIVE, -0.0]).unwrap(), true);
        let ck = Checkpoint {
            architecture: "{\"kind\":\"test\"}".into(),
            vocab_path: "vocab.tsv".into(),
            config_hash: "abc123".into(),
            params,
        };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
        let odd = back.params.find("odd").unwrap();
        assert_eq!(back.params.get(odd).data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        assert!(Checkpoint::read_from(&mut &b"NOTACKPT\x01\0\0\0"[..]).is_err());
        let mut buf = MAGIC.to_vec();
        buf.extend_from_slice(&9u32.to_le_bytes());
        assert!(matches!(Checkpoint::read_from(&mut buf.as_slice()), Err(TensorError::Checkpoint(_))));
    }
}
