//! PGM images and DFLO flow files.
//!
//! A DFLO file is the 4 magic bytes `DFLO`, the width and height as `u32`
//! little-endian, then `W·H` interleaved `(ux, uy)` displacement pairs as
//! `f32` little-endian in row-major order. The displacement `u` is the one of
//! `φ = id + u`, so `I₁ ∘ φ ≈ I₀`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{GridSpec, MapField, ScalarField};

const FLOW_MAGIC: [u8; 4] = *b"DFLO";
const FLOW_HEADER: usize = 12;

/// PGM sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmFormat {
    /// `P2`, whitespace-separated decimal samples.
    Ascii,
    /// `P5`, one byte per sample.
    Binary,
}

/// Parse a P2 or P5 image; samples are divided by `maxval`.
pub fn decode_pgm(bytes: &[u8]) -> Result<ScalarField> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    let magic = cur.token()?;
    let format = match magic.as_str() {
        "P2" => PgmFormat::Ascii,
        "P5" => PgmFormat::Binary,
        other => return Err(Error::PgmHeader(format!("unknown magic {other:?}"))),
    };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::PgmMaxval(maxval));
    }
    let grid = GridSpec::new(width as usize, height as usize)?;
    let n = grid.len();
    let maxval_f = maxval as f64;
    let data: Vec<f64> = match format {
        PgmFormat::Binary => {
            // Exactly one whitespace byte separates maxval from the raster.
            let start = cur.pos + 1;
            let payload = bytes.get(start..).unwrap_or(&[]);
            if payload.len() < n {
                return Err(Error::PgmTruncated {
                    expected: n,
                    found: payload.len(),
                });
            }
            payload[..n].iter().map(|&b| b as f64 / maxval_f).collect()
        }
        PgmFormat::Ascii => {
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                match cur.try_token()? {
                    Some(tok) => {
                        let v: u32 = tok
                            .parse()
                            .map_err(|_| Error::PgmHeader(format!("bad sample {tok:?}")))?;
                        out.push(v as f64 / maxval_f);
                    }
                    None => {
                        return Err(Error::PgmTruncated {
                            expected: n,
                            found: out.len(),
                        })
                    }
                }
            }
            out
        }
    };
    ScalarField::new(grid, data)
}

/// Encode with maxval 255 after clamping to `[0, 1]`.
pub fn encode_pgm(field: &ScalarField, format: PgmFormat) -> Vec<u8> {
    let g = field.grid();
    let q: Vec<u8> = field
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    match format {
        PgmFormat::Binary => {
            let mut out = format!("P5\n{} {}\n255\n", g.width, g.height).into_bytes();
            out.extend_from_slice(&q);
            out
        }
        PgmFormat::Ascii => {
            let mut s = format!("P2\n{} {}\n255\n", g.width, g.height);
            for row in q.chunks(g.width) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                s.push_str(&line.join(" "));
                s.push('\n');
            }
            s.into_bytes()
        }
    }
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<ScalarField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

/// Save as binary P5.
pub fn save_pgm(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    save_pgm_as(field, path, PgmFormat::Binary)
}

pub fn save_pgm_as(field: &ScalarField, path: impl AsRef<Path>, format: PgmFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(field, format)).map_err(|e| Error::io(path, e))
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    /// Next whitespace-delimited token, skipping `#` comments.
    fn try_token(&mut self) -> Result<Option<String>> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Ok(None);
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map(|s| Some(s.to_owned()))
            .map_err(|_| Error::PgmHeader("non-ASCII header".into()))
    }

    fn token(&mut self) -> Result<String> {
        self.try_token()?
            .ok_or_else(|| Error::PgmHeader("unexpected end of header".into()))
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::PgmHeader(format!("bad {what} {tok:?}")))
    }
}

pub fn encode_flow(m: &MapField) -> Vec<u8> {
    let g = m.grid();
    let mut out = Vec::with_capacity(FLOW_HEADER + g.len() * 8);
    out.extend_from_slice(&FLOW_MAGIC);
    out.extend_from_slice(&(g.width as u32).to_le_bytes());
    out.extend_from_slice(&(g.height as u32).to_le_bytes());
    for (ux, uy) in m.ux().iter().zip(m.uy()) {
        out.extend_from_slice(&(*ux as f32).to_le_bytes());
        out.extend_from_slice(&(*uy as f32).to_le_bytes());
    }
    out
}

pub fn decode_flow(bytes: &[u8]) -> Result<MapField> {
    if bytes.len() < 4 || bytes[..4] != FLOW_MAGIC {
        let mut got = [0u8; 4];
        let n = bytes.len().min(4);
        got[..n].copy_from_slice(&bytes[..n]);
        return Err(Error::FlowMagic(got));
    }
    if bytes.len() < FLOW_HEADER {
        return Err(Error::FlowSize {
            width: 0,
            height: 0,
            payload: bytes.len() - 4,
        });
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let (width, height) = (word(4), word(8));
    let payload = bytes.len() - FLOW_HEADER;
    if payload as u64 != width as u64 * height as u64 * 8 {
        return Err(Error::FlowSize {
            width,
            height,
            payload,
        });
    }
    let grid = GridSpec::new(width as usize, height as usize)?;
    let float = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as f64;
    let (ux, uy) = (0..grid.len())
        .map(|k| {
            let o = FLOW_HEADER + 8 * k;
            (float(o), float(o + 4))
        })
        .unzip();
    MapField::new(grid, ux, uy)
}

pub fn save_flow(m: &MapField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_flow(m)).map_err(|e| Error::io(path, e))
}

pub fn load_flow(path: impl AsRef<Path>) -> Result<MapField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flow(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_p5() {
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend_from_slice(&[0u8; 16]);
        let f = decode_pgm(&bytes).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn header_comments_and_ascii() {
        let text = b"P2\n# made by hand\n4 4\n# max\n15\n0 15 0 15\n0 0 0 0\n1 2 3 4\n5 6 7 8\n";
        let f = decode_pgm(text).unwrap();
        assert_eq!(f.at(1, 0), 1.0);
        assert_eq!(f.at(0, 2), 1.0 / 15.0);
    }

    #[test]
    fn distinct_pgm_errors() {
        assert!(matches!(decode_pgm(b"P6\n4 4\n255\n"), Err(Error::PgmHeader(_))));
        assert!(matches!(decode_pgm(b"P5\n4 4\n"), Err(Error::PgmHeader(_))));
        assert!(matches!(decode_pgm(b"P5\n4 4\n65535\n"), Err(Error::PgmMaxval(65535))));
        assert!(matches!(decode_pgm(b"P5\n4 4\n255\n\x01\x02"), Err(Error::PgmTruncated { expected: 16, found: 2 })));
        assert!(matches!(decode_pgm(b"P2\n4 4\n255\n1 2 3"), Err(Error::PgmTruncated { expected: 16, found: 3 })));
    }

    #[test]
    fn flow_layout() {
        let g = GridSpec::square(50).unwrap();
        let bytes = encode_flow(&MapField::translation(g, 10.0, 0.0));
        assert_eq!(bytes.len(), 4 + 8 + 50 * 50 * 8);
        assert_eq!(&bytes[..4], b"DFLO");
        assert_eq!(&bytes[4..8], &50u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &10.0f32.to_le_bytes());
        assert_eq!(&bytes[16..20], &0.0f32.to_le_bytes());
    }

    #[test]
    fn flow_errors() {
        assert!(matches!(decode_flow(b"FLOW...."), Err(Error::FlowMagic(m)) if &m == b"FLOW"));
        let g = GridSpec::square(4).unwrap();
        let mut bytes = encode_flow(&MapField::identity(g));
        bytes.pop();
        assert!(matches!(decode_flow(&bytes), Err(Error::FlowSize { width: 4, height: 4, .. })));
    }
}
