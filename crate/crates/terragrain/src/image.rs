//! Binary PNM (P6/P5) images, maxval 255.
//!
//! The on-disk layout is pinned for byte-exact round trips: magic, width,
//! height and maxval as single whitespace-separated tokens (comments starting
//! with `#` are accepted when reading), one whitespace byte, then the raw
//! payload. Writers always emit `P6\n<w> <h>\n255\n`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit RGB image, row-major interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize) -> Self {
        RasterImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::data("image dimensions must be at least 1x1"));
        }
        if data.len() != width * height * 3 {
            return Err(Error::data(format!(
                "pixel buffer length {} does not match {}x{} RGB",
                data.len(),
                width,
                height
            )));
        }
        Ok(RasterImage {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> [u8; 3] {
        let i = (v * self.width + u) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, u: usize, v: usize, rgb: [u8; 3]) {
        let i = (v * self.width + u) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }
}

/// 8-bit single-channel image (masks, raw label maps, confidence renders).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        GrayImage {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::data("image dimensions must be at least 1x1"));
        }
        if data.len() != width * height {
            return Err(Error::data(format!(
                "pixel buffer length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: u8) {
        self.data[v * self.width + u] = value;
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }
}

struct HeaderScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> HeaderScanner<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        HeaderScanner { bytes, pos: 0, path }
    }

    /// Next header token, skipping whitespace and `#` comments.
    fn token(&mut self) -> Result<&'a [u8]> {
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
            return Err(Error::format(self.path, "truncated header"));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn uint(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::format(self.path, format!("invalid {what} token")))
    }

    /// Consume the single whitespace byte separating header from payload.
    fn payload(mut self) -> Result<&'a [u8]> {
        if self.pos >= self.bytes.len() || !self.bytes[self.pos].is_ascii_whitespace() {
            return Err(Error::format(self.path, "missing separator before payload"));
        }
        self.pos += 1;
        Ok(&self.bytes[self.pos..])
    }
}

fn read_pnm(path: &Path, magic: &[u8], channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut scan = HeaderScanner::new(&bytes, path);
    let got = scan.token()?;
    if got != magic {
        return Err(Error::format(
            path,
            format!(
                "unsupported magic {:?}, expected {}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let width = scan.uint("width")?;
    let height = scan.uint("height")?;
    let maxval = scan.uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(path, "zero image dimension"));
    }
    if maxval != 255 {
        return Err(Error::format(path, format!("maxval {maxval}, expected 255")));
    }
    let payload = scan.payload()?;
    let expected = width * height * channels;
    if payload.len() < expected {
        return Err(Error::format(
            path,
            format!("truncated payload: {} of {} bytes", payload.len(), expected),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    Ok((width, height, payload.to_vec()))
}

/// Read a binary P6 RGB image.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let (width, height, data) = read_pnm(path, b"P6", 3)?;
    RasterImage::from_raw(width, height, data)
}

/// Read a binary P5 grayscale image.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let (width, height, data) = read_pnm(path, b"P5", 1)?;
    GrayImage::from_raw(width, height, data)
}

/// Parse only the header of a P6 file and return (width, height).
pub fn ppm_dimensions(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut scan = HeaderScanner::new(&bytes, path);
    let got = scan.token()?;
    if got != b"P6" {
        return Err(Error::format(
            path,
            format!("unsupported magic {:?}", String::from_utf8_lossy(got)),
        ));
    }
    let width = scan.uint("width")?;
    let height = scan.uint("height")?;
    Ok((width, height))
}

pub fn write_ppm(image: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(image.data.len() + 32);
    out.extend_from_slice(format!("P6\n{} {}\n255\n", image.width, image.height).as_bytes());
    out.extend_from_slice(&image.data);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(image.data.len() + 32);
    out.extend_from_slice(format!("P5\n{} {}\n255\n", image.width, image.height).as_bytes());
    out.extend_from_slice(&image.data);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Colorize a label grid through a palette. `sentinel` values render as black;
/// any other label must be covered by the palette.
pub fn render_labels(
    labels: &GrayImage,
    palette: &[[u8; 3]],
    sentinel: u8,
) -> Result<RasterImage> {
    let mut out = RasterImage::new(labels.width, labels.height);
    for v in 0..labels.height {
        for u in 0..labels.width {
            let label = labels.get(u, v);
            if label == sentinel {
                continue;
            }
            let rgb = palette
                .get(label as usize)
                .ok_or_else(|| Error::data(format!("unmapped label {label}")))?;
            out.set_pixel(u, v, *rgb);
        }
    }
    Ok(out)
}

/// Scale confidences in [0, 1] to 8-bit gray (1.0 maps to 255).
pub fn confidence_to_gray(values: &[f64], width: usize, height: usize) -> Result<GrayImage> {
    if values.len() != width * height {
        return Err(Error::data("confidence buffer does not match dimensions"));
    }
    let data = values
        .iter()
        .map(|&c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    GrayImage::from_raw(width, height, data)
}
