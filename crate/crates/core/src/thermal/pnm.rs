//! Binary portable graymap (P5) and pixmap (P6) codec.
//!
//! Samples wider than 8 bits (maxval > 255) are two bytes, big-endian.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnmKind {
    Graymap,
    Pixmap,
}

impl PnmKind {
    pub fn samples_per_pixel(self) -> usize {
        match self {
            PnmKind::Graymap => 1,
            PnmKind::Pixmap => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PnmImage {
    pub kind: PnmKind,
    pub width: usize,
    pub height: usize,
    pub max_value: u16,
    /// Interleaved samples, `samples_per_pixel` per pixel.
    pub samples: Vec<u16>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    /// Returns the value and the offset where it starts.
    fn number(&mut self, what: &str) -> Result<(u32, usize)> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .map(|v| (v, start))
            .ok_or_else(|| Error::parse(start, format!("{what} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<PnmImage> {
    let kind = match bytes.get(..2) {
        Some(b"P5") => PnmKind::Graymap,
        Some(b"P6") => PnmKind::Pixmap,
        _ => return Err(Error::parse(0, "expected magic P5 or P6")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if !cur
        .bytes
        .get(2)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(Error::parse(2, "expected whitespace after magic"));
    }
    let (width, _) = cur.number("width")?;
    let (height, _) = cur.number("height")?;
    let (maxval, maxval_at) = cur.number("maxval")?;
    let (width, height) = (width as usize, height as usize);
    if width == 0 || height == 0 {
        return Err(Error::parse(maxval_at, "image dimensions must be positive"));
    }
    if maxval == 0 || maxval > u16::MAX as u32 {
        return Err(Error::parse(
            maxval_at,
            format!("maxval {maxval} outside 1..=65535"),
        ));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(Error::parse(
                cur.pos,
                "expected single whitespace before raster",
            ))
        }
    }

    let bytes_per_sample = if maxval > 255 { 2 } else { 1 };
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(kind.samples_per_pixel()))
        .ok_or_else(|| Error::parse(maxval_at, "image too large"))?;
    let expected = count * bytes_per_sample;
    let raster = &bytes[cur.pos..];
    if raster.len() < expected {
        return Err(Error::Length {
            expected,
            found: raster.len(),
        });
    }
    let samples: Vec<u16> = if bytes_per_sample == 1 {
        raster[..count].iter().map(|&b| b as u16).collect()
    } else {
        raster[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if let Some(pos) = samples.iter().position(|&s| s as u32 > maxval) {
        return Err(Error::parse(
            cur.pos + pos * bytes_per_sample,
            format!("sample {} exceeds maxval {maxval}", samples[pos]),
        ));
    }
    Ok(PnmImage {
        kind,
        width,
        height,
        max_value: maxval as u16,
        samples,
    })
}

pub fn encode(image: &PnmImage) -> Vec<u8> {
    let magic = match image.kind {
        PnmKind::Graymap => "P5",
        PnmKind::Pixmap => "P6",
    };
    let mut out = format!(
        "{magic}\n{} {}\n{}\n",
        image.width, image.height, image.max_value
    )
    .into_bytes();
    if image.max_value > 255 {
        out.reserve(image.samples.len() * 2);
        for s in &image.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(image.samples.iter().map(|&s| s as u8));
    }
    out
}
