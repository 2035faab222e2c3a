//! Self-describing parameter files.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic    8 bytes  "IBOODPRM"
//! version  u32
//! topology u32 length + UTF-8
//! count    u32
//! count x { name: u32 length + UTF-8, kind: u8 (0 weight, 1 buffer),
//!           dtype: u8 (0 = f32), ndim: u32, dims: ndim x u32,
//!           payload: prod(dims) x f32 }
//! digest   32 bytes, SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::layers::{ParamKind, Parameterized};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"IBOODPRM";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// A network with a stable name for its parameter layout.
pub trait Topology: Parameterized {
    fn topology(&self) -> String;
}

impl Topology for super::Generator {
    fn topology(&self) -> String {
        "generator".into()
    }
}

impl Topology for super::Discriminator {
    fn topology(&self) -> String {
        "discriminator".into()
    }
}

impl Topology for super::EmbeddingHead {
    fn topology(&self) -> String {
        match self.mode() {
            super::HeadMode::Flatten => "embedding-head/flatten".into(),
            super::HeadMode::Projected { dim } => format!("embedding-head/projected-{dim}"),
        }
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode<N: Topology + ?Sized>(net: &N) -> Vec<u8> {
    let params = net.params();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_str(&mut out, &net.topology());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        put_str(&mut out, &p.name);
        out.push(match p.kind {
            ParamKind::Weight => 0,
            ParamKind::Buffer => 1,
        });
        out.push(DTYPE_F32);
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.at..self.at + n)
            .ok_or_else(|| Error::Load(format!("unexpected end of data at byte {}", self.at)))?;
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Load("invalid utf-8".into()))
    }
}

/// Restores `net` from bytes produced by [`encode`]; `net` is untouched on error.
pub fn decode_into<N: Topology + ?Sized>(net: &mut N, bytes: &[u8]) -> Result<()> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Load("not a parameter file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Load("checksum mismatch (truncated or corrupt file)".into()));
    }
    let mut r = Reader {
        bytes: body,
        at: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Load(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let topology = r.string()?;
    if topology != net.topology() {
        return Err(Error::Topology(format!(
            "file holds a {topology}, target is a {}",
            net.topology()
        )));
    }
    let count = r.u32()? as usize;
    let expected = net.params().len();
    if count != expected {
        return Err(Error::Topology(format!("file holds {count} tensors, target has {expected}")));
    }
    let mut values = Vec::with_capacity(count);
    for p in net.params() {
        let name = r.string()?;
        let _kind = r.u8()?;
        let dtype = r.u8()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if name != p.name || shape != p.shape {
            return Err(Error::Topology(format!(
                "tensor {name} {shape:?} does not match {} {:?}",
                p.name, p.shape
            )));
        }
        if dtype != DTYPE_F32 {
            return Err(Error::Load(format!("unsupported dtype {dtype} for {name}")));
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len * 4)?;
        values.push(
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect::<Vec<_>>(),
        );
    }
    if r.at != body.len() {
        return Err(Error::Load("trailing bytes after last tensor".into()));
    }
    for (p, v) in net.params_mut().into_iter().zip(values) {
        p.value = v;
    }
    Ok(())
}

pub fn save_params<N: Topology + ?Sized>(net: &N, path: &Path) -> Result<()> {
    fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load_params<N: Topology + ?Sized>(net: &mut N, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_into(net, &bytes)
}

/// Hex SHA-256 over names and values of the given parameters.
pub fn digest_params<'a>(params: impl IntoIterator<Item = &'a super::Param>) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.name.as_bytes());
        for v in &p.value {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{embed, Discriminator, EmbeddingHead, FeatureMap, Generator, HeadMode, Mode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained_disc(rng: &mut ChaCha8Rng) -> Discriminator {
        let mut d = Discriminator::new(rng);
        // move running stats away from their defaults
        let imgs = FeatureMap {
            channels: 1,
            batch: 4,
            height: 28,
            width: 28,
            data: (0..4 * 784).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
        };
        let tape = d.forward_features(&imgs, Mode::Train).unwrap();
        d.commit(&tape);
        d
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = trained_disc(&mut rng);
        let head = EmbeddingHead::new(HeadMode::Projected { dim: 16 }, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        save_params(&d, &path).unwrap();
        let mut restored = Discriminator::new(&mut rng);
        load_params(&mut restored, &path).unwrap();
        assert_eq!(encode(&restored), encode(&d));

        let imgs = FeatureMap {
            channels: 1,
            batch: 3,
            height: 28,
            width: 28,
            data: (0..3 * 784).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
        };
        assert_eq!(embed(&d, &head, &imgs).unwrap(), embed(&restored, &head, &imgs).unwrap());
    }

    #[test]
    fn truncated_file_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Discriminator::new(&mut rng);
        let bytes = encode(&d);
        let mut target = d.clone();
        let err = decode_into(&mut target, &bytes[..bytes.len() - 100]).unwrap_err();
        assert!(matches!(err, Error::Load(_)));
        let mut flipped = bytes.clone();
        flipped[200] ^= 1;
        assert!(matches!(decode_into(&mut target, &flipped), Err(Error::Load(_))));
    }

    #[test]
    fn generator_file_rejected_by_discriminator() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Generator::new(&mut rng);
        let mut d = Discriminator::new(&mut rng);
        assert!(matches!(decode_into(&mut d, &encode(&g)), Err(Error::Topology(_))));
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Discriminator::new(&mut rng);
        let mut bytes = encode(&d);
        bytes[8] = 99;
        let body_len = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        let err = decode_into(&mut d.clone(), &bytes).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
