//! RGB image buffers with 8-bit PNG and float PFM codecs.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use image::{ColorType, ImageEncoder, ImageReader};

use crate::{Error, Result};

/// Row-major, top-down RGB image of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        ImageBuffer {
            width,
            height,
            data: vec![0.0; width as usize * height as usize * 3],
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: &[[f64; 3]]) -> Self {
        assert_eq!(pixels.len(), width as usize * height as usize);
        ImageBuffer {
            width,
            height,
            data: pixels.iter().flatten().copied().collect(),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        self.pixel(self.index(x, y))
    }

    #[inline]
    pub fn pixel(&self, i: usize) -> [f64; 3] {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: [f64; 3]) {
        let i = self.index(x, y);
        self.data[3 * i..3 * i + 3].copy_from_slice(&v);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_ldr(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// 8-bit quantization: clamp to [0, 1] then `round(v · 255)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

pub fn write_png(path: &Path, img: &ImageBuffer) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let enc = image::codecs::png::PngEncoder::new(std::io::BufWriter::new(f));
    enc.write_image(&img.to_rgb8(), img.width, img.height, ColorType::Rgb8.into())
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

pub fn read_png(path: &Path) -> Result<ImageBuffer> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let dynimg = reader
        .decode()
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    if dynimg.color() != ColorType::Rgb8 {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("expected 8-bit RGB, found {:?}", dynimg.color()),
            ),
        ));
    }
    let rgb = dynimg.into_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(ImageBuffer {
        width: w,
        height: h,
        data: rgb.into_raw().into_iter().map(|b| b as f64 / 255.0).collect(),
    })
}

/// Colour PFM, little-endian (negative scale), bottom-up rows.
pub fn encode_pfm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("PF\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width as usize * 3;
    for y in (0..img.height as usize).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_pfm(path: &Path, img: &ImageBuffer) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_pfm(img)).map_err(|e| Error::io(path, e))
}

pub fn decode_pfm<R: Read>(r: R) -> Result<ImageBuffer> {
    let bad = |d: &str| Error::format("PFM", d);
    let mut r = BufReader::new(r);
    let mut tokens: Vec<String> = Vec::new();
    // Header: "PF", width, height, scale, each whitespace separated; a single
    // whitespace byte follows the scale.
    while tokens.len() < 4 {
        let mut line = Vec::new();
        let n = r.read_until(b'\n', &mut line).map_err(|_| bad("unreadable header"))?;
        if n == 0 {
            return Err(bad("truncated header"));
        }
        let text = std::str::from_utf8(&line).map_err(|_| bad("non-ASCII header"))?;
        tokens.extend(text.split_whitespace().map(str::to_owned));
    }
    if tokens.len() != 4 {
        return Err(bad("unexpected header layout"));
    }
    if tokens[0] != "PF" {
        return Err(bad("only colour PFM (PF) is supported"));
    }
    let width: u32 = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: u32 = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    if width == 0 || height == 0 || scale == 0.0 || !scale.is_finite() {
        return Err(bad("degenerate header"));
    }
    let little = scale < 0.0;
    let row = width as usize * 3;
    let mut raw = vec![0u8; row * height as usize * 4];
    r.read_exact(&mut raw).map_err(|_| bad("truncated pixel data"))?;
    let vals: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| {
            let b: [u8; 4] = c.try_into().unwrap();
            (if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
        })
        .collect();
    let mut data = Vec::with_capacity(vals.len());
    for y in (0..height as usize).rev() {
        data.extend_from_slice(&vals[y * row..(y + 1) * row]);
    }
    Ok(ImageBuffer {
        width,
        height,
        data,
    })
}

pub fn read_pfm(path: &Path) -> Result<ImageBuffer> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(f)
}
