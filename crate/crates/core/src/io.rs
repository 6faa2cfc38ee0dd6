//! Binary artifact formats.
//!
//! EMBF (embedding space), all little-endian:
//!
//! ```text
//! "EMB1" | u32 n | u32 d | n*d f32 image rows | n*d f32 text rows | n pair ids, each '\n'-terminated UTF-8
//! ```
//!
//! WMT1 (square matrix):
//!
//! ```text
//! "WMT1" | u32 d | d*d f64 row-major
//! ```
//!
//! Embeddings are narrowed to f32 on write and widened on read, so a file
//! read and re-written is byte-identical.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::embedding::{EmbeddingSpace, EmbeddingVector};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const EMBF_MAGIC: [u8; 4] = *b"EMB1";
pub const WMT1_MAGIC: [u8; 4] = *b"WMT1";

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: [u8; 4], name: &str) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::Format(format!(
                "not a {name} file (magic {:02X?})",
                got
            )));
        }
        Ok(())
    }
}

pub fn encode_embf(space: &EmbeddingSpace) -> Result<Vec<u8>> {
    let (n, d) = (space.len(), space.dim());
    let mut out = Vec::with_capacity(12 + 8 * n * d + 16 * n);
    out.extend_from_slice(&EMBF_MAGIC);
    out.extend_from_slice(&to_u32(n, "pair count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(d, "dimension")?.to_le_bytes());
    for side in [space.image(), space.text()] {
        for v in side {
            for x in v.values() {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
    }
    for id in space.pair_ids() {
        if id.contains('\n') {
            return Err(Error::Format(format!("pair id {id:?} contains a newline")));
        }
        out.extend_from_slice(id.as_bytes());
        out.push(b'\n');
    }
    Ok(out)
}

pub fn decode_embf(bytes: &[u8]) -> Result<EmbeddingSpace> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    c.magic(EMBF_MAGIC, "EMBF")?;
    let n = c.u32("pair count")? as usize;
    let d = c.u32("dimension")? as usize;
    if n == 0 {
        return Err(Error::EmptySpace);
    }
    if d < 2 {
        return Err(Error::Format(format!("dimension {d} < 2")));
    }
    let read_side = |c: &mut Cursor| -> Result<Vec<EmbeddingVector>> {
        let raw = c.take(4 * n * d, "embedding rows")?;
        raw.chunks_exact(4 * d)
            .map(|row| {
                EmbeddingVector::new(
                    row.chunks_exact(4)
                        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
                        .collect(),
                )
            })
            .collect()
    };
    let image = read_side(&mut c)?;
    let text = read_side(&mut c)?;
    let tail = std::str::from_utf8(&bytes[c.pos..])
        .map_err(|e| Error::Format(format!("pair ids are not UTF-8: {e}")))?;
    if !tail.ends_with('\n') {
        return Err(Error::Format("pair id block not newline-terminated".into()));
    }
    let ids: Vec<String> = tail[..tail.len() - 1]
        .split('\n')
        .map(str::to_string)
        .collect();
    if ids.len() != n {
        return Err(Error::Format(format!(
            "expected {n} pair ids, found {}",
            ids.len()
        )));
    }
    EmbeddingSpace::new(image, text, ids)
}

pub fn write_embf(path: impl AsRef<Path>, space: &EmbeddingSpace) -> Result<()> {
    fs::write(path, encode_embf(space)?)?;
    Ok(())
}

pub fn read_embf(path: impl AsRef<Path>) -> Result<EmbeddingSpace> {
    decode_embf(&fs::read(path)?)
}

pub fn encode_wmt1(m: &DenseMatrix) -> Result<Vec<u8>> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let mut out = Vec::with_capacity(8 + 8 * m.entries().len());
    out.extend_from_slice(&WMT1_MAGIC);
    out.extend_from_slice(&to_u32(m.rows(), "dimension")?.to_le_bytes());
    for x in m.entries() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_wmt1(bytes: &[u8]) -> Result<DenseMatrix> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    c.magic(WMT1_MAGIC, "WMT1")?;
    let d = c.u32("dimension")? as usize;
    let raw = c.take(8 * d * d, "matrix entries")?;
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after matrix".into()));
    }
    let entries = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    DenseMatrix::from_row_major(d, d, entries)
}

pub fn write_wmt1(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    fs::write(path, encode_wmt1(m)?)?;
    Ok(())
}

pub fn read_wmt1(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    decode_wmt1(&fs::read(path)?)
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content digest of a space: SHA-256 of its EMBF encoding.
pub fn space_digest(space: &EmbeddingSpace) -> Result<String> {
    Ok(sha256_hex(&encode_embf(space)?))
}

fn to_u32(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Format(format!("{what} {x} does not fit in u32")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn sample_space() -> EmbeddingSpace {
        EmbeddingSpace::from_rows(
            vec![vec![1.0, 0.5, -0.25], vec![0.0, 1.0, 2.0]],
            vec![vec![0.125, 0.0, 1.0], vec![-1.0, -2.0, 0.5]],
            vec!["p0".into(), "pair one".into()],
        )
        .unwrap()
    }

    #[test]
    fn embf_layout() {
        let bytes = encode_embf(&sample_space()).unwrap();
        assert_eq!(&bytes[..4], &[0x45, 0x4D, 0x42, 0x31]);
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        // first text row starts after n*d image floats
        assert_eq!(&bytes[12 + 24..12 + 28], &0.125f32.to_le_bytes());
        assert!(bytes.ends_with(b"p0\npair one\n"));
        assert_eq!(decode_embf(&bytes).unwrap(), sample_space());
    }

    #[test]
    fn wmt1_layout() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.5]]).unwrap();
        let bytes = encode_wmt1(&m).unwrap();
        assert_eq!(&bytes[..4], &[0x57, 0x4D, 0x54, 0x31]);
        assert_eq!(bytes.len(), 8 + 32);
        assert_eq!(decode_wmt1(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = encode_embf(&sample_space()).unwrap();
        assert!(matches!(decode_embf(&bytes[..20]), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(decode_embf(&bytes), Err(Error::Format(_))));
        let w = encode_wmt1(&DenseMatrix::identity(3)).unwrap();
        assert!(matches!(decode_embf(&w), Err(Error::Format(_))));
        assert!(matches!(
            decode_wmt1(&w[..w.len() - 1]),
            Err(Error::Format(_))
        ));
        assert!(encode_wmt1(&DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn zero_pairs_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"EMB1");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        assert!(matches!(decode_embf(&bytes), Err(Error::EmptySpace)));
    }

    proptest! {
        #[test]
        fn embf_bytes_survive_read_write(seed in any::<u64>(), n in 1usize..20, d in 2usize..17) {
            let mut rng = SeededRng::new(seed);
            let rows = |rng: &mut SeededRng| (0..n).map(|_| rng.gaussian_vec(d, 1.0)).collect::<Vec<_>>();
            let image = rows(&mut rng);
            let text = rows(&mut rng);
            let ids = (0..n).map(|i| format!("id-{i}-{}", rng.next_u64())).collect();
            let space = EmbeddingSpace::from_rows(image, text, ids).unwrap();
            let first = encode_embf(&space).unwrap();
            let second = encode_embf(&decode_embf(&first).unwrap()).unwrap();
            prop_assert_eq!(first, second);
        }

        #[test]
        fn wmt1_round_trip_is_exact(seed in any::<u64>(), d in 1usize..12) {
            let mut rng = SeededRng::new(seed);
            let m = DenseMatrix::from_row_major(d, d, rng.gaussian_vec(d * d, 3.0)).unwrap();
            let bytes = encode_wmt1(&m).unwrap();
            prop_assert_eq!(&decode_wmt1(&bytes).unwrap(), &m);
            prop_assert_eq!(encode_wmt1(&decode_wmt1(&bytes).unwrap()).unwrap(), bytes);
        }
    }
}
