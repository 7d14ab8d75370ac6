//! Single-file section container shared by dataset and checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      [u8; 8]
//! version    u32
//! count      u64                      number of sections
//! section*   name_len u16, name utf-8,
//!            payload_len u64, checksum [u8; 8], payload
//! ```
//!
//! The checksum is the first 8 bytes of the SHA-256 digest of the payload.
//! Tensor payloads are `dtype u8, ndim u8, dims u64*, data` in row-major
//! order; text payloads are UTF-8 `key = value` lines.

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::real::Real;

pub const DTYPE_F32: u8 = 1;
pub const DTYPE_F64: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub payload: Vec<u8>,
}

impl Section {
    pub fn new(name: impl Into<String>, payload: Vec<u8>) -> Self {
        Section {
            name: name.into(),
            payload,
        }
    }
}

pub fn checksum(payload: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(payload);
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    out
}

pub fn write_container<W: Write>(
    mut w: W,
    magic: &[u8; 8],
    version: u32,
    sections: &[Section],
) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&(sections.len() as u64).to_le_bytes())?;
    for s in sections {
        let name = s.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Format(format!("section name too long: {}", s.name)));
        }
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(s.payload.len() as u64).to_le_bytes())?;
        w.write_all(&checksum(&s.payload))?;
        w.write_all(&s.payload)?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated(what.to_string()),
        _ => Error::Io(e),
    })
}

pub fn read_container<R: Read>(mut r: R, magic: &[u8; 8], version: u32) -> Result<Vec<Section>> {
    let mut m = [0u8; 8];
    read_exact_or(&mut r, &mut m, "magic header")?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic header {:?} (expected {:?})",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut b4 = [0u8; 4];
    read_exact_or(&mut r, &mut b4, "version")?;
    let found = u32::from_le_bytes(b4);
    if found != version {
        return Err(Error::Version {
            found,
            expected: version,
        });
    }
    let mut b8 = [0u8; 8];
    read_exact_or(&mut r, &mut b8, "section count")?;
    let count = u64::from_le_bytes(b8);
    let mut sections = Vec::new();
    for k in 0..count {
        let mut b2 = [0u8; 2];
        read_exact_or(&mut r, &mut b2, &format!("section {k} header"))?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        read_exact_or(&mut r, &mut name, &format!("section {k} name"))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format(format!("section {k} name is not UTF-8")))?;
        read_exact_or(&mut r, &mut b8, &format!("section `{name}` length"))?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut sum = [0u8; 8];
        read_exact_or(&mut r, &mut sum, &format!("section `{name}` checksum"))?;
        let mut payload = Vec::new();
        let got = r.by_ref().take(len as u64).read_to_end(&mut payload)?;
        if got != len {
            return Err(Error::Truncated(format!("section `{name}` payload")));
        }
        if checksum(&payload) != sum {
            return Err(Error::Checksum(name));
        }
        sections.push(Section { name, payload });
    }
    Ok(sections)
}

/// Row-major tensor with its dimensions, as stored in a section payload.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor<T> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

pub fn encode_tensor<T: Real>(dims: &[usize], data: &[T]) -> Vec<u8> {
    debug_assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut out = Vec::with_capacity(2 + 8 * dims.len() + data.len() * (T::BITS as usize / 8));
    out.push(if T::BITS == 32 { DTYPE_F32 } else { DTYPE_F64 });
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in data {
        x.write_le(&mut out);
    }
    out
}

pub fn decode_tensor<T: Real>(payload: &[u8], what: &str) -> Result<RawTensor<T>> {
    if payload.len() < 2 {
        return Err(Error::Truncated(format!("tensor `{what}` header")));
    }
    let want = if T::BITS == 32 { DTYPE_F32 } else { DTYPE_F64 };
    if payload[0] != want {
        return Err(Error::Format(format!(
            "tensor `{what}` has dtype tag {} but {}-bit values were requested",
            payload[0],
            T::BITS
        )));
    }
    let ndim = payload[1] as usize;
    let header = 2 + 8 * ndim;
    if payload.len() < header {
        return Err(Error::Truncated(format!("tensor `{what}` dims")));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|k| {
            let off = 2 + 8 * k;
            u64::from_le_bytes(payload[off..off + 8].try_into().unwrap()) as usize
        })
        .collect();
    let n: usize = dims.iter().product();
    let width = T::BITS as usize / 8;
    if payload.len() != header + n * width {
        return Err(Error::Format(format!(
            "tensor `{what}` payload is {} bytes, dims {:?} need {}",
            payload.len(),
            dims,
            header + n * width
        )));
    }
    let data = payload[header..]
        .chunks_exact(width)
        .map(T::read_le)
        .collect();
    Ok(RawTensor { dims, data })
}

pub fn encode_text(pairs: &[(String, String)]) -> Vec<u8> {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(v);
        s.push('\n');
    }
    s.into_bytes()
}

pub fn decode_text(payload: &[u8], what: &str) -> Result<Vec<(String, String)>> {
    let text = std::str::from_utf8(payload)
        .map_err(|_| Error::Format(format!("section `{what}` is not UTF-8")))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once(" = ")
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Format(format!("malformed line in `{what}`: {l}")))
        })
        .collect()
}

/// Looks up a key in decoded text pairs.
pub fn text_get<'a>(pairs: &'a [(String, String)], key: &str, what: &str) -> Result<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Format(format!("section `{what}` lacks key `{key}`")))
}

pub fn text_parse<V: std::str::FromStr>(
    pairs: &[(String, String)],
    key: &str,
    what: &str,
) -> Result<V> {
    let raw = text_get(pairs, key, what)?;
    raw.parse()
        .map_err(|_| Error::Format(format!("section `{what}`: cannot parse `{key}` = {raw}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"TESTCONT";

    #[test]
    fn sections_round_trip() {
        let sections = vec![
            Section::new("a", encode_tensor::<f32>(&[2, 2], &[1.0, -2.0, 3.5, f32::MIN])),
            Section::new("b", encode_text(&[("k".into(), "v w".into())])),
            Section::new("empty", vec![]),
        ];
        let mut buf = Vec::new();
        write_container(&mut buf, MAGIC, 3, &sections).unwrap();
        let back = read_container(&buf[..], MAGIC, 3).unwrap();
        assert_eq!(back, sections);
        let t: RawTensor<f32> = decode_tensor(&back[0].payload, "a").unwrap();
        assert_eq!(t.dims, vec![2, 2]);
        assert_eq!(t.data[3], f32::MIN);
        assert_eq!(decode_text(&back[1].payload, "b").unwrap()[0].1, "v w");
    }

    #[test]
    fn rejects_bad_magic_version_truncation_and_tampering() {
        let sections = vec![Section::new("x", vec![1, 2, 3, 4])];
        let mut buf = Vec::new();
        write_container(&mut buf, MAGIC, 1, &sections).unwrap();

        assert!(matches!(
            read_container(&buf[..], b"OTHERMAG", 1),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            read_container(&buf[..], MAGIC, 2),
            Err(Error::Version { found: 1, expected: 2 })
        ));
        assert!(matches!(
            read_container(&buf[..buf.len() - 1], MAGIC, 1),
            Err(Error::Truncated(_))
        ));
        let mut tampered = buf.clone();
        *tampered.last_mut().unwrap() ^= 0xff;
        assert!(matches!(
            read_container(&tampered[..], MAGIC, 1),
            Err(Error::Checksum(name)) if name == "x"
        ));
    }

    #[test]
    fn dtype_mismatch_is_reported() {
        let p = encode_tensor::<f64>(&[1], &[1.0]);
        assert!(decode_tensor::<f32>(&p, "t").is_err());
    }
}
