//! Binary NetPBM (P5 gray, P6 color), 8-bit only.

use std::fs;
use std::path::Path;

use super::{BinaryMask, ImageGray, ImageRgb};
use crate::error::{Error, LoadError, Result};

/// Floor applied to loaded color channels: half a quantization step.
pub const RGB_FLOOR: f64 = 1.0 / 510.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Image {
    Gray(ImageGray),
    Rgb(ImageRgb),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Gray,
    Rgb,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Gray => "P5 gray",
            Kind::Rgb => "P6 color",
        }
    }
}

struct Raw<'a> {
    kind: Kind,
    width: usize,
    height: usize,
    payload: &'a [u8],
}

fn parse(bytes: &[u8]) -> Result<Raw<'_>, LoadError> {
    let kind = match bytes.get(..2) {
        Some(b"P5") => Kind::Gray,
        Some(b"P6") => Kind::Rgb,
        _ => {
            return Err(LoadError::MalformedHeader(
                "missing P5/P6 magic number".into(),
            ))
        }
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // Whitespace and comments before each token.
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
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(LoadError::MalformedHeader(format!(
                "expected {} at byte {start}",
                ["width", "height", "maxval"][i]
            )));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| LoadError::MalformedHeader(format!("number out of range: {text}")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(LoadError::MalformedHeader(
                "missing whitespace after maxval".into(),
            ))
        }
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(LoadError::MalformedHeader(format!(
            "zero dimension {width}x{height}"
        )));
    }
    if maxval != 255 {
        return Err(LoadError::UnsupportedMaxval(maxval));
    }
    let channels = if kind == Kind::Rgb { 3 } else { 1 };
    let expected = width as usize * height as usize * channels;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(LoadError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    Ok(Raw {
        kind,
        width: width as usize,
        height: height as usize,
        payload: &payload[..expected],
    })
}

fn read(path: &Path) -> Result<Vec<u8>, LoadError> {
    fs::read(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn decode(raw: Raw<'_>) -> Image {
    match raw.kind {
        Kind::Gray => Image::Gray(ImageGray::from_raw(
            raw.width,
            raw.height,
            raw.payload.iter().map(|&b| b as f64 / 255.0).collect(),
        )),
        Kind::Rgb => {
            let data = raw
                .payload
                .chunks_exact(3)
                .map(|p| {
                    [0, 1, 2].map(|c| (p[c] as f64 / 255.0).clamp(RGB_FLOOR, 1.0))
                })
                .collect();
            Image::Rgb(ImageRgb {
                width: raw.width,
                height: raw.height,
                data,
            })
        }
    }
}

/// Loads a P5 or P6 file. Values are scaled by 1/255; color channels are
/// additionally clamped to `[1/510, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = read(path.as_ref())?;
    Ok(decode(parse(&bytes)?))
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<ImageRgb> {
    match load_image(path)? {
        Image::Rgb(img) => Ok(img),
        Image::Gray(_) => Err(LoadError::WrongKind {
            expected: Kind::Rgb.name(),
            found: Kind::Gray.name(),
        }
        .into()),
    }
}

pub fn load_gray(path: impl AsRef<Path>) -> Result<ImageGray> {
    match load_image(path)? {
        Image::Gray(img) => Ok(img),
        Image::Rgb(_) => Err(LoadError::WrongKind {
            expected: Kind::Gray.name(),
            found: Kind::Rgb.name(),
        }
        .into()),
    }
}

/// Loads a P5 mask; any non-zero byte is road.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let bytes = read(path.as_ref())?;
    let raw = parse(&bytes)?;
    if raw.kind != Kind::Gray {
        return Err(LoadError::WrongKind {
            expected: Kind::Gray.name(),
            found: raw.kind.name(),
        }
        .into());
    }
    Ok(BinaryMask {
        width: raw.width,
        height: raw.height,
        data: raw.payload.iter().map(|&b| b != 0).collect(),
    })
}

fn write(path: &Path, magic: &str, w: usize, h: usize, payload: &[u8]) -> Result<()> {
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(payload);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Writes road as 255 and background as 0.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let payload: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write(path.as_ref(), "P5", mask.width, mask.height, &payload)
}

pub fn save_gray(img: &ImageGray, path: impl AsRef<Path>) -> Result<()> {
    let payload: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    write(path.as_ref(), "P5", img.width, img.height, &payload)
}

pub fn save_rgb(img: &ImageRgb, path: impl AsRef<Path>) -> Result<()> {
    let payload: Vec<u8> = img.data.iter().flatten().map(|&v| quantize(v)).collect();
    write(path.as_ref(), "P6", img.width, img.height, &payload)
}
