//! Grayscale image and block-mask input.
//!
//! Two container formats are accepted: binary PGM (`P5`, maxval 255) and
//! 8-bit grayscale PNG. Intensities are normalized to `[0, 1]` at load time.
//! Masks use the same formats; a pixel above 127 marks a valid location.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Mask pixels strictly above this value are valid.
pub const MASK_THRESHOLD: u8 = 127;

/// Smallest block size accepted by [`block_grid`].
pub const MIN_BLOCK_SIZE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::MalformedImage("zero-dimension image".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::MalformedImage(format!("intensity {p} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from 8-bit samples, scaling `[0, 255]` to `[0, 1]`.
    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        let pixels = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(width, height, pixels)
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel, clamping to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Quantizes back to 8-bit samples (round to nearest).
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Applies `a * I + b` per pixel, clamped to `[0, 1]`.
    pub fn map_intensity(&self, a: f64, b: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|p| (a * p + b).clamp(0.0, 1.0))
                .collect(),
        }
    }
}

/// Row-major grid of per-block validity flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMask {
    cols: usize,
    rows: usize,
    valid: Vec<bool>,
}

impl BlockMask {
    pub fn new(cols: usize, rows: usize, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != cols * rows {
            return Err(Error::DimensionMismatch(format!(
                "{} mask entries for a {cols}x{rows} grid",
                valid.len()
            )));
        }
        Ok(Self { cols, rows, valid })
    }

    pub fn all_valid(cols: usize, rows: usize) -> Self {
        Self {
            cols,
            rows,
            valid: vec![true; cols * rows],
        }
    }

    /// Marks blocks with `c0 <= col < c1` and `r0 <= row < r1` valid.
    pub fn rect(cols: usize, rows: usize, c0: usize, r0: usize, c1: usize, r1: usize) -> Self {
        let valid = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (c, r)))
            .map(|(c, r)| c >= c0 && c < c1 && r >= r0 && r < r1)
            .collect();
        Self { cols, rows, valid }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn is_valid(&self, col: usize, row: usize) -> bool {
        self.valid[row * self.cols + col]
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn ensure_nonempty(&self) -> Result<()> {
        if self.count_valid() == 0 {
            Err(Error::EmptyMask)
        } else {
            Ok(())
        }
    }

    /// Renders the mask as one 8-bit pixel per block (255 valid, 0 invalid).
    pub fn to_u8(&self) -> Vec<u8> {
        self.valid.iter().map(|&v| if v { 255 } else { 0 }).collect()
    }
}

/// Number of whole `w`-pixel blocks along x and y. Partial trailing blocks are dropped.
pub fn block_grid(image: &GrayImage, w: usize) -> Result<(usize, usize)> {
    block_grid_dims(image.width, image.height, w)
}

pub(crate) fn block_grid_dims(width: usize, height: usize, w: usize) -> Result<(usize, usize)> {
    if w < MIN_BLOCK_SIZE || w > width.min(height) {
        return Err(Error::InvalidParameter(format!(
            "block size {w} outside [{MIN_BLOCK_SIZE}, {}]",
            width.min(height)
        )));
    }
    Ok((width / w, height / w))
}

/// An 8-bit single-channel raster as it appears on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawGray {
    pub width: usize,
    pub height: usize,
    pub bytes: Vec<u8>,
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let raw = read_raw(path.as_ref())?;
    GrayImage::from_u8(raw.width, raw.height, &raw.bytes)
}

/// Loads a mask given either per block (`cols x rows` pixels) or per image
/// pixel, in which case each `w x w` tile is reduced by strict majority vote.
pub fn load_mask(path: impl AsRef<Path>, cols: usize, rows: usize, w: usize) -> Result<BlockMask> {
    let raw = read_raw(path.as_ref())?;
    let mask = mask_from_raw(&raw, cols, rows, w)?;
    mask.ensure_nonempty()?;
    Ok(mask)
}

pub fn mask_from_raw(raw: &RawGray, cols: usize, rows: usize, w: usize) -> Result<BlockMask> {
    if raw.width == cols && raw.height == rows {
        let valid = raw.bytes.iter().map(|&p| p > MASK_THRESHOLD).collect();
        return BlockMask::new(cols, rows, valid);
    }
    if w > 0 && raw.width / w == cols && raw.height / w == rows {
        return Ok(majority_downsample(raw, cols, rows, w));
    }
    Err(Error::DimensionMismatch(format!(
        "mask is {}x{}, expected {cols}x{rows} blocks or a pixel mask tiling into them with w={w}",
        raw.width, raw.height
    )))
}

fn majority_downsample(raw: &RawGray, cols: usize, rows: usize, w: usize) -> BlockMask {
    let mut valid = Vec::with_capacity(cols * rows);
    for br in 0..rows {
        for bc in 0..cols {
            let mut on = 0usize;
            for y in br * w..(br + 1) * w {
                let row = &raw.bytes[y * raw.width + bc * w..y * raw.width + (bc + 1) * w];
                on += row.iter().filter(|&&p| p > MASK_THRESHOLD).count();
            }
            valid.push(2 * on > w * w);
        }
    }
    BlockMask { cols, rows, valid }
}

pub fn read_raw(path: &Path) -> Result<RawGray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Sniffs the container and decodes an 8-bit grayscale raster.
pub fn decode(bytes: &[u8]) -> Result<RawGray> {
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else {
        Err(Error::UnsupportedFormat(
            "expected binary PGM (P5) or PNG".into(),
        ))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<RawGray> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = pgm_header_number(bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    if maxval > 255 {
        return Err(Error::UnsupportedBitDepth(16));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::MalformedImage("truncated PGM header".into())),
    }
    if width == 0 || height == 0 {
        return Err(Error::MalformedImage("zero-dimension image".into()));
    }
    let len = width * height;
    let data = bytes
        .get(pos..pos + len)
        .ok_or_else(|| Error::MalformedImage(format!("PGM raster shorter than {len} bytes")))?;
    Ok(RawGray {
        width,
        height,
        bytes: data.to_vec(),
    })
}

fn pgm_header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::MalformedImage("truncated PGM header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MalformedImage("bad number in PGM header".into()))
}

pub fn encode_pgm(width: usize, height: usize, bytes: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    out
}

pub fn decode_png(bytes: &[u8]) -> Result<RawGray> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::MalformedImage(format!("PNG: {e}")))?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth(info.bit_depth as u8));
    }
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::UnsupportedFormat(format!(
            "PNG color type {:?}, expected 8-bit grayscale",
            info.color_type
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::MalformedImage("zero-dimension image".into()));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::MalformedImage("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::MalformedImage(format!("PNG: {e}")))?;
    buf.truncate(frame.buffer_size());
    Ok(RawGray {
        width,
        height,
        bytes: buf,
    })
}

pub fn encode_png(width: usize, height: usize, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::MalformedImage(format!("PNG: {e}")))?;
        writer
            .write_image_data(bytes)
            .map_err(|e| Error::MalformedImage(format!("PNG: {e}")))?;
    }
    Ok(out)
}

pub fn save_pgm(path: impl AsRef<Path>, image: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(image.width, image.height, &image.to_u8()))
        .map_err(|e| Error::io(path, e))
}
