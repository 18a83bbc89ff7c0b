//! Binary PGM (`P5`) and PPM (`P6`) with maxval 255.
//!
//! Decoded tensors are `[c, h, w]` (`c = 1` for PGM, `3` for PPM) holding
//! the raw byte values as floats in `[0, 255]`.

use std::path::Path;

use crate::tensor::Tensor;

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnmKind {
    Gray,
    Rgb,
}

impl PnmKind {
    fn channels(self) -> usize {
        match self {
            PnmKind::Gray => 1,
            PnmKind::Rgb => 3,
        }
    }
}

struct Header {
    kind: PnmKind,
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, DataError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(DataError::BadMagic);
    }
    let kind = match bytes[1] {
        b'5' => PnmKind::Gray,
        b'6' => PnmKind::Rgb,
        b'1'..=b'4' | b'7' => return Err(DataError::Unsupported(format!("P{}", bytes[1] as char))),
        _ => return Err(DataError::BadMagic),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Whitespace and comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(DataError::Truncated),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(DataError::Header("expected a decimal number".into()));
        }
        if pos - start > 9 {
            return Err(DataError::Header("header value too large".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .expect("at most nine digits");
    }
    // Exactly one whitespace byte separates maxval from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(DataError::Header("missing whitespace after maxval".into())),
        None => return Err(DataError::Truncated),
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(DataError::MaxVal(maxval));
    }
    if width == 0 || height == 0 {
        return Err(DataError::Header("zero image dimension".into()));
    }
    Ok(Header {
        kind,
        width,
        height,
        data_start: pos,
    })
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, DataError> {
    let h = parse_header(bytes)?;
    let c = h.kind.channels();
    let n = h
        .width
        .checked_mul(h.height)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| DataError::Header("image too large".into()))?;
    let payload = &bytes[h.data_start..];
    if payload.len() < n {
        return Err(DataError::Truncated);
    }
    // Interleaved RGB to planar [c, h, w].
    let plane = h.width * h.height;
    let mut data = vec![0.0; n];
    for (i, &b) in payload[..n].iter().enumerate() {
        data[(i % c) * plane + i / c] = b as f64;
    }
    Ok(Tensor::new(vec![c, h.height, h.width], data).expect("consistent shape"))
}

/// Encodes a `[c, h, w]` (or `[h, w]`) tensor with `c` of 1 or 3. Values are
/// rounded to the nearest integer and clamped to `[0, 255]`.
pub fn encode(t: &Tensor) -> Result<Vec<u8>, DataError> {
    let (c, h, w) = match *t.shape() {
        [h, w] => (1, h, w),
        [c, h, w] if c == 1 || c == 3 => (c, h, w),
        ref s => return Err(DataError::Shape(s.to_vec())),
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    out.reserve(c * plane);
    for i in 0..plane {
        for ch in 0..c {
            let v = t.data()[ch * plane + i];
            out.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Tensor, DataError> {
    decode(&std::fs::read(path)?)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor, DataError> {
    let t = read_pnm(path)?;
    if t.shape()[0] != 1 {
        return Err(DataError::Unsupported("expected a P5 graymap".into()));
    }
    Ok(t)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor, DataError> {
    let t = read_pnm(path)?;
    if t.shape()[0] != 3 {
        return Err(DataError::Unsupported("expected a P6 pixmap".into()));
    }
    Ok(t)
}

pub fn write_pgm(t: &Tensor, path: impl AsRef<Path>) -> Result<(), DataError> {
    if t.rank() == 3 && t.shape()[0] != 1 {
        return Err(DataError::Shape(t.shape().to_vec()));
    }
    std::fs::write(path, encode(t)?)?;
    Ok(())
}

pub fn write_ppm(t: &Tensor, path: impl AsRef<Path>) -> Result<(), DataError> {
    if t.rank() != 3 || t.shape()[0] != 3 {
        return Err(DataError::Shape(t.shape().to_vec()));
    }
    std::fs::write(path, encode(t)?)?;
    Ok(())
}
