//! RGB images, BT.601 YUV planes and luminance-only merging.
//!
//! `Y = 0.299 R + 0.587 G + 0.114 B`, `U = 0.492 (B − Y)`, `V = 0.877 (R − Y)`.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;
const U_SCALE: f64 = 0.492;
const V_SCALE: f64 = 0.877;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image dimensions must be positive".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pixels", width * height),
                got: format!("{}", pixels.len()),
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct YuvPlanes {
    pub width: usize,
    pub height: usize,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn rgb_pixel_to_yuv([r, g, b]: [u8; 3]) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let y = KR * r + KG * g + KB * b;
    (y, U_SCALE * (b - y), V_SCALE * (r - y))
}

pub fn yuv_pixel_to_rgb(y: f64, u: f64, v: f64) -> [u8; 3] {
    let r = y + v / V_SCALE;
    let b = y + u / U_SCALE;
    let g = (y - KR * r - KB * b) / KG;
    let q = |c: f64| c.round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

pub fn rgb_to_yuv(img: &RgbImage) -> YuvPlanes {
    let n = img.pixels.len();
    let (mut y, mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for &p in &img.pixels {
        let (a, b, c) = rgb_pixel_to_yuv(p);
        y.push(a);
        u.push(b);
        v.push(c);
    }
    YuvPlanes { width: img.width, height: img.height, y, u, v }
}

pub fn yuv_to_rgb(planes: &YuvPlanes) -> Result<RgbImage> {
    let n = planes.width * planes.height;
    if planes.y.len() != n || planes.u.len() != n || planes.v.len() != n {
        return Err(Error::ShapeMismatch { expected: format!("{n} values per plane"), got: "unequal planes".into() });
    }
    let pixels = (0..n).map(|i| yuv_pixel_to_rgb(planes.y[i], planes.u[i], planes.v[i])).collect();
    RgbImage::new(planes.width, planes.height, pixels)
}

/// Luminance of `stylized` with the chroma of `original`, as planes (before
/// quantization back to RGB).
pub fn luminance_merge_planes(stylized: &RgbImage, original: &RgbImage) -> Result<YuvPlanes> {
    if (stylized.width, stylized.height) != (original.width, original.height) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", original.width, original.height),
            got: format!("{}x{}", stylized.width, stylized.height),
        });
    }
    let s = rgb_to_yuv(stylized);
    let o = rgb_to_yuv(original);
    Ok(YuvPlanes { width: o.width, height: o.height, y: s.y, u: o.u, v: o.v })
}

pub fn luminance_merge(stylized: &RgbImage, original: &RgbImage) -> Result<RgbImage> {
    yuv_to_rgb(&luminance_merge_planes(stylized, original)?)
}

fn ppm_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    String::from_utf8(tok).map_err(|_| Error::BadMagic("ppm header".into()))
}

/// Reads a binary (P6) PPM with maxval 255.
pub fn read_ppm<R: BufRead>(mut r: R) -> Result<RgbImage> {
    if ppm_token(&mut r)? != "P6" {
        return Err(Error::BadMagic("ppm".into()));
    }
    let num = |s: String| {
        s.parse::<usize>()
            .map_err(|_| Error::MalformedRecord { line: 1, reason: format!("bad ppm header field {s:?}") })
    };
    let w = num(ppm_token(&mut r)?)?;
    let h = num(ppm_token(&mut r)?)?;
    let maxval = num(ppm_token(&mut r)?)?;
    if maxval != 255 {
        return Err(Error::MalformedRecord { line: 1, reason: format!("unsupported maxval {maxval}") });
    }
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() != w * h * 3 {
        return Err(Error::TruncatedPayload { expected: w * h * 3, found: buf.len() });
    }
    RgbImage::new(w, h, buf.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

pub fn write_ppm<W: Write>(img: &RgbImage, mut w: W) -> Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    for p in &img.pixels {
        w.write_all(p)?;
    }
    Ok(())
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    read_ppm(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn save_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ppm(img, &mut f)?;
    f.flush()?;
    Ok(())
}
