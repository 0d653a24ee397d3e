//! Binary PPM (P6, 8-bit) codec for `[3×H×W]` tensors in `[−1, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest accepted side length.
pub const MAX_PPM_SIDE: usize = 1 << 14;

pub fn to_byte(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn from_byte(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        [3, h, w] => (*h, *w),
        s => {
            return Err(Error::shape(format!(
                "write_ppm: expected [3×H×W], got {s:?}"
            )))
        }
    };
    if let Some(i) = image.data().iter().position(|v| !(-1.0..=1.0).contains(v)) {
        return Err(Error::contract(format!(
            "write_ppm: value {} at flat index {i} is outside [-1, 1]",
            image.data()[i]
        )));
    }
    let header = format!("P6\n{w} {h}\n255\n");
    let mut out = Vec::with_capacity(header.len() + 3 * h * w);
    out.extend_from_slice(header.as_bytes());
    let plane = h * w;
    let d = image.data();
    for i in 0..plane {
        for c in 0..3 {
            out.push(to_byte(d[c * plane + i]));
        }
    }
    Ok(out)
}

struct Cursor<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        let mut value: usize = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as usize))
                .ok_or_else(|| self.err(format!("{what} overflows")))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err(format!("expected {what}")));
        }
        Ok(value)
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(cur.err("bad magic, expected P6"));
    }
    cur.pos = 2;
    let w = cur.number("width")?;
    let h = cur.number("height")?;
    let maxval = cur.number("maximum value")?;
    if w == 0 || h == 0 || w > MAX_PPM_SIDE || h > MAX_PPM_SIDE {
        return Err(cur.err(format!("unsupported dimensions {w}×{h}")));
    }
    if maxval != 255 {
        return Err(cur.err(format!("maximum value {maxval}, only 255 is supported")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("expected a single whitespace byte after the header")),
    }
    let plane = h * w;
    let payload = &bytes[cur.pos..];
    if payload.len() < 3 * plane {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!(
                "truncated payload: {} of {} bytes",
                payload.len(),
                3 * plane
            ),
        });
    }
    if payload.len() > 3 * plane {
        return Err(Error::Format {
            offset: cur.pos + 3 * plane,
            message: "trailing bytes after payload".into(),
        });
    }
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in payload.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = from_byte(px[c]);
        }
    }
    Tensor::new(&[3, h, w], data)
}

pub fn write_ppm(image: &Tensor, path: &Path) -> Result<()> {
    let bytes = encode_ppm(image)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}
