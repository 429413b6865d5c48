//! Versioned binary container for tokenized datasets.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   "PPDS"            4 bytes
//! version u32               currently 1
//! row_len u32
//! n_records u64
//! n_classes u32
//! classes  { name_len u32, utf8 bytes } × n_classes
//! lengths  u32 × n_records
//! labels   u32 × n_records
//! tokens   u16 × n_records·row_len
//! digest   SHA-256 of everything above, 32 bytes
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::TokenizedDataset;

const MAGIC: &[u8; 4] = b"PPDS";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("unsupported dataset format version {found} (expected {VERSION})")]
    VersionMismatch { found: u32 },
    #[error("dataset file truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("dataset checksum mismatch; file is corrupt")]
    ChecksumMismatch,
    #[error("dataset file is inconsistent: {0}")]
    Corrupt(String),
}

/// Serialize a dataset to bytes.
pub fn encode_dataset(ds: &TokenizedDataset) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + ds.tokens.len() * 2);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.row_len as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(ds.class_names.len() as u32).to_le_bytes());
    for name in &ds.class_names {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
    }
    for &len in &ds.lengths {
        buf.extend_from_slice(&len.to_le_bytes());
    }
    for &label in &ds.labels {
        buf.extend_from_slice(&label.to_le_bytes());
    }
    for &tok in &ds.tokens {
        buf.extend_from_slice(&tok.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        if self.bytes.len() - self.at < n {
            return Err(DatasetError::Truncated { offset: self.at });
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Deserialize a dataset from bytes, verifying structure and checksum.
pub fn decode_dataset(bytes: &[u8]) -> Result<TokenizedDataset, DatasetError> {
    if bytes.len() < 32 {
        return Err(DatasetError::Truncated { offset: bytes.len() });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let expect = Sha256::digest(body);
    if digest != expect.as_slice() {
        // Distinguish a short file from a corrupted one: verify the magic
        // first so truncation inside the body reports as truncation.
        if body.len() < 4 || &body[..4] != MAGIC {
            return Err(DatasetError::BadMagic);
        }
        return Err(DatasetError::ChecksumMismatch);
    }
    let mut r = Reader { bytes: body, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(DatasetError::VersionMismatch { found: version });
    }
    let row_len = r.u32()? as usize;
    let n_records = r.u64()? as usize;
    let n_classes = r.u32()? as usize;
    let mut class_names = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let len = r.u32()? as usize;
        let raw = r.take(len)?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| DatasetError::Corrupt("class name is not utf-8".into()))?;
        class_names.push(name.to_string());
    }
    let mut lengths = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        lengths.push(r.u32()?);
    }
    let mut labels = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        let label = r.u32()?;
        if label as usize >= n_classes {
            return Err(DatasetError::Corrupt(format!(
                "label index {label} out of range for {n_classes} classes"
            )));
        }
        labels.push(label);
    }
    let mut tokens = Vec::with_capacity(n_records * row_len);
    for _ in 0..n_records * row_len {
        let raw = r.take(2)?;
        tokens.push(u16::from_le_bytes(raw.try_into().unwrap()));
    }
    if r.at != body.len() {
        return Err(DatasetError::Corrupt(format!(
            "{} trailing bytes after token matrix",
            body.len() - r.at
        )));
    }
    Ok(TokenizedDataset {
        row_len,
        tokens,
        lengths,
        labels,
        class_names,
    })
}

/// Write a dataset file; the write is atomic via a sibling temp file.
pub fn save_dataset(ds: &TokenizedDataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let bytes = encode_dataset(ds);
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

/// Read a dataset file written by [`save_dataset`].
pub fn load_dataset(path: impl AsRef<Path>) -> Result<TokenizedDataset, DatasetError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TokenizedDataset {
        TokenizedDataset {
            row_len: 4,
            tokens: vec![65, 66, 256, 256, 1, 2, 3, 256, 9, 256, 256, 256],
            lengths: vec![2, 3, 1],
            labels: vec![0, 1, 0],
            class_names: vec!["alpha".into(), "beta".into()],
        }
    }

    #[test]
    fn round_trip_identity() {
        let ds = sample();
        let bytes = encode_dataset(&ds);
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn corrupted_checksum_is_detected() {
        let mut bytes = encode_dataset(&sample());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        assert!(matches!(
            decode_dataset(&bytes),
            Err(DatasetError::ChecksumMismatch)
        ));
    }

    #[test]
    fn empty_file_is_truncation() {
        assert!(matches!(
            decode_dataset(&[]),
            Err(DatasetError::Truncated { .. })
        ));
    }

    #[test]
    fn bad_magic_is_distinct() {
        let mut bytes = encode_dataset(&sample());
        bytes[0] = b'X';
        // Checksum catches the flip first unless we re-seal the file.
        let body_len = bytes.len() - 32;
        let digest = sha2::Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        assert!(matches!(decode_dataset(&bytes), Err(DatasetError::BadMagic)));
    }

    #[test]
    fn wrong_version_is_distinct() {
        let mut bytes = encode_dataset(&sample());
        bytes[4] = 9;
        let body_len = bytes.len() - 32;
        let digest = sha2::Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        assert!(matches!(
            decode_dataset(&bytes),
            Err(DatasetError::VersionMismatch { found: 9 })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.ppds");
        let ds = sample();
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }
}
