//! Little-endian framing shared by the binary file formats: a four-byte
//! magic, a `u32` version, the body, and a trailing CRC-32 of everything
//! before it.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, FormatError, Result};

pub(crate) struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(magic: [u8; 4], version: u32) -> Self {
        let mut e = Self {
            buf: magic.to_vec(),
        };
        e.u32(version);
        e
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn f32s(&mut self, vs: &[f32]) {
        self.buf.reserve(vs.len() * 4);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub(crate) struct Decoder<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    /// Validates magic, checksum and version; returns a decoder positioned
    /// after the version field.
    pub fn open(bytes: &'a [u8], magic: [u8; 4], version: u32) -> Result<Self, FormatError> {
        if bytes.len() < 12 {
            return Err(FormatError::Truncated);
        }
        let found: [u8; 4] = bytes[..4].try_into().unwrap();
        if found != magic {
            return Err(FormatError::BadMagic {
                expected: magic,
                found,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed });
        }
        let mut d = Self { body, pos: 4 };
        let v = d.u32()?;
        if v != version {
            return Err(FormatError::UnsupportedVersion(v));
        }
        Ok(d)
    }

    pub fn remaining(&self) -> usize {
        self.body.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated);
        }
        let s = &self.body[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String, FormatError> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| FormatError::Header("string is not UTF-8".into()))
    }

    /// Reads `rank` followed by that many `u64` extents.
    pub fn extents(&mut self, max_rank: u32) -> Result<Vec<u64>, FormatError> {
        let rank = self.u32()?;
        if rank > max_rank {
            return Err(FormatError::Header(format!(
                "rank {rank} exceeds {max_rank}"
            )));
        }
        (0..rank).map(|_| self.u64()).collect()
    }

    /// Reads the f32 payload for `extents`, reporting a length mismatch
    /// when the file holds fewer bytes than declared.
    pub fn f32_payload(&mut self, extents: &[u64]) -> Result<Vec<f32>, FormatError> {
        let n = extents
            .iter()
            .try_fold(1u64, |a, &e| a.checked_mul(e))
            .and_then(|n| usize::try_from(n).ok())
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| FormatError::Header(format!("extents {extents:?} overflow")))?;
        if extents.contains(&0) {
            return Err(FormatError::Header(format!("zero extent in {extents:?}")));
        }
        if self.remaining() < n * 4 {
            return Err(FormatError::PayloadLength {
                extents: extents.to_vec(),
                payload_bytes: self.remaining(),
            });
        }
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(self) -> Result<(), FormatError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    write_atomic(path, text.as_bytes())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}
