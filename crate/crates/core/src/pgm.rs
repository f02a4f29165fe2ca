//! PGM (netpbm graymap) reading and writing.
//!
//! Reads binary `P5` and ASCII `P2` files with a maxval of 255, tolerating
//! `#` comments inside the header. Always writes `P5` without comments.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::GrayImage;

const FORMAT: &str = "PGM";

fn format_err(field: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        format: FORMAT,
        field,
        detail: detail.into(),
    }
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

/// Quantizes a gray level to a byte: round half away from zero, then clamp.
#[inline]
pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend(img.pixels().iter().map(|&v| quantize(v)));
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self, field: &'static str) -> Result<&'a str> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format_err(field, "unexpected end of data"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| format_err(field, "non-ASCII token"))
    }

    fn number(&mut self, field: &'static str) -> Result<usize> {
        let tok = self.token(field)?;
        tok.parse::<usize>()
            .map_err(|_| format_err(field, format!("expected an unsigned integer, found {tok:?}")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.token("magic")?;
    let ascii = match magic {
        "P5" => false,
        "P2" => true,
        other => return Err(format_err("magic", format!("expected P5 or P2, found {other:?}"))),
    };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    if width == 0 || height == 0 {
        return Err(format_err("dimensions", format!("{width}x{height}")));
    }
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(format_err("maxval", format!("only 255 is supported, found {maxval}")));
    }
    let n = width * height;

    let pixels = if ascii {
        let mut px = Vec::with_capacity(n);
        for _ in 0..n {
            let v = cur
                .number("payload")
                .map_err(|_| format_err("payload", format!("expected {n} samples")))?;
            if v > 255 {
                return Err(format_err("payload", format!("sample {v} exceeds maxval")));
            }
            px.push(v as f64);
        }
        px
    } else {
        // Exactly one whitespace byte separates maxval from the raster.
        match bytes.get(cur.pos) {
            Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(format_err("payload", "missing separator after maxval")),
        }
        let payload = &bytes[cur.pos..];
        if payload.len() < n {
            return Err(format_err(
                "payload",
                format!("truncated: expected {n} bytes, found {}", payload.len()),
            ));
        }
        payload[..n].iter().map(|&b| b as f64).collect()
    };
    GrayImage::new(width, height, pixels)
}
