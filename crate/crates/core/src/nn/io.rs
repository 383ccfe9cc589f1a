//! Binary model files.
//!
//! Layout (little endian):
//!
//! ```text
//! "NNWD"                      magic
//! u16                         format version
//! u32 + UTF-8                 canonical spec text, then `meta seed <n>` / `meta epochs <n>`
//! u64                         tensor count
//! per tensor: u8 rank, u32 dims[rank], f64 values
//! u32                         CRC32 of every preceding byte
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::params::{DenseParams, ParameterSet};
use crate::nn::spec::NetworkSpec;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NNWD";
pub const VERSION: u16 = 1;

pub fn to_bytes(spec: &NetworkSpec, params: &ParameterSet) -> Result<Vec<u8>> {
    params.check(spec)?;
    let mut text = spec.to_text();
    text.push_str(&format!(
        "meta seed {}\nmeta epochs {}\n",
        params.seed, params.epochs
    ));

    let mut out = Vec::with_capacity(64 + text.len() + params.scalar_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(params.tensor_count() as u64).to_le_bytes());
    for t in params.tensors() {
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!("{what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(NetworkSpec, ParameterSet)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::NotModelFile);
    }
    if bytes.len() < 4 + 2 + 4 {
        return Err(Error::Truncated("file shorter than header".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader {
        buf: payload,
        pos: 4,
    };
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let text_len = r.u32("spec length")? as usize;
    let text = std::str::from_utf8(r.take(text_len, "spec text")?)
        .map_err(|e| Error::InvalidSpec(format!("spec text is not UTF-8: {e}")))?;
    let mut seed = 0;
    let mut epochs = 0;
    let mut spec_text = String::new();
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        if parts.next() == Some("meta") {
            let key = parts.next();
            let value = parts
                .next()
                .and_then(|v| v.parse::<u64>().ok())
                .ok_or_else(|| Error::InvalidSpec(format!("bad meta line {line:?}")))?;
            match key {
                Some("seed") => seed = value,
                Some("epochs") => epochs = value,
                _ => return Err(Error::InvalidSpec(format!("unknown meta line {line:?}"))),
            }
        } else {
            spec_text.push_str(line);
            spec_text.push('\n');
        }
    }
    let spec = NetworkSpec::parse(&spec_text)?;

    let count = r.u64("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = r.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8, "tensor values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    if r.pos != payload.len() {
        return Err(Error::Truncated(format!(
            "{} trailing bytes after tensors",
            payload.len() - r.pos
        )));
    }

    let dense: Vec<usize> = spec.dense_layers().map(|(i, _, _)| i).collect();
    if tensors.len() != dense.len() * 2 {
        return Err(Error::Shape(format!(
            "file holds {} tensors, spec needs {}",
            tensors.len(),
            dense.len() * 2
        )));
    }
    let mut it = tensors.into_iter();
    let layers = dense
        .into_iter()
        .map(|i| {
            let weight = it.next().expect("counted");
            let bias = it.next().expect("counted");
            (i, DenseParams { weight, bias })
        })
        .collect();
    let params = ParameterSet {
        layers,
        seed,
        epochs,
    };
    params.check(&spec)?;
    if params.tensors().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("stored parameters".into()));
    }
    Ok((spec, params))
}

pub fn save_params(
    spec: &NetworkSpec,
    params: &ParameterSet,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(spec, params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<(NetworkSpec, ParameterSet)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{Activation, Head};

    fn sample() -> (NetworkSpec, ParameterSet) {
        let spec = NetworkSpec::mlp(
            vec![3, 3, 1],
            &[5, 2, 9],
            Activation::Relu,
            Head::Activation(Activation::Sigmoid),
            Some(vec![3, 3, 1]),
        )
        .unwrap();
        let mut params = ParameterSet::init(&spec, 42);
        params.epochs = 17;
        params.layers.get_mut(&1).unwrap().bias.data_mut()[0] = -0.0;
        params.layers.get_mut(&1).unwrap().bias.data_mut()[1] = f64::MIN_POSITIVE / 3.0;
        (spec, params)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (spec, params) = sample();
        let bytes = to_bytes(&spec, &params).unwrap();
        let (s2, p2) = from_bytes(&bytes).unwrap();
        assert_eq!(s2, spec);
        assert_eq!(p2.seed, 42);
        assert_eq!(p2.epochs, 17);
        for (a, b) in params.tensors().zip(p2.tensors()) {
            let ab: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(to_bytes(&s2, &p2).unwrap(), bytes);
    }

    #[test]
    fn wrong_magic() {
        let (spec, params) = sample();
        let mut bytes = to_bytes(&spec, &params).unwrap();
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::NotModelFile)));
        assert!(matches!(from_bytes(b"P5\n"), Err(Error::NotModelFile)));
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let (spec, params) = sample();
        let mut bytes = to_bytes(&spec, &params).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(from_bytes(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn truncated_file() {
        let (spec, params) = sample();
        let bytes = to_bytes(&spec, &params).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 20]).is_err());
        assert!(matches!(from_bytes(&bytes[..6]), Err(Error::Truncated(_))));
    }

    #[test]
    fn version_mismatch() {
        let (spec, params) = sample();
        let mut bytes = to_bytes(&spec, &params).unwrap();
        bytes[4] = 9;
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(from_bytes(&bytes), Err(Error::Version(9))));
    }
}
