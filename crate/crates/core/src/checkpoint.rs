//! Versioned model checkpoints.
//!
//! Layout: magic `ZGCK`, u32 LE format version, u32 LE header length, a
//! UTF-8 JSON header, then the flat parameter vector as f64 LE.

use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::dataset::write_bytes;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ZGCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<M> {
    pub meta: M,
    pub params: Vec<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header<M> {
    kind: String,
    num_params: usize,
    meta: M,
}

impl<M: Serialize + DeserializeOwned> Checkpoint<M> {
    pub fn encode(&self, kind: &str) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            kind: kind.to_string(),
            num_params: self.params.len(),
            meta: &self.meta,
        })
        .map_err(|e| Error::parse("checkpoint header", e))?;
        let mut out = Vec::with_capacity(12 + header.len() + self.params.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], kind: &str) -> Result<Self> {
        let bad = |msg: &str| Error::parse("checkpoint", msg);
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                what: "checkpoint".into(),
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header<M> = serde_json::from_slice(body).map_err(|e| Error::parse("checkpoint header", e))?;
        if header.kind != kind {
            return Err(Error::InvalidInput(format!(
                "checkpoint holds a {} model, expected {kind}",
                header.kind
            )));
        }
        let rest = &bytes[12 + hlen..];
        if rest.len() != header.num_params * 8 {
            return Err(bad("parameter block length does not match header"));
        }
        let params = rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            meta: header.meta,
            params,
        })
    }

    pub fn save(&self, path: &Path, kind: &str) -> Result<()> {
        write_bytes(path, &self.encode(kind)?)
    }

    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(params in proptest::collection::vec(any::<f64>(), 0..64), tag in "[a-z]{0,8}") {
            let ck = Checkpoint { meta: tag.clone(), params: params.clone() };
            let back: Checkpoint<String> = Checkpoint::decode(&ck.encode("m").unwrap(), "m").unwrap();
            prop_assert_eq!(back.meta, tag);
            let a: Vec<u64> = params.iter().map(|p| p.to_bits()).collect();
            let b: Vec<u64> = back.params.iter().map(|p| p.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_wrong_kind_and_version() {
        let ck = Checkpoint { meta: 1u32, params: vec![1.0] };
        let mut bytes = ck.encode("simnet").unwrap();
        assert!(Checkpoint::<u32>::decode(&bytes, "affordance").is_err());
        bytes[4] = 9;
        assert!(matches!(
            Checkpoint::<u32>::decode(&bytes, "simnet"),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }
}
