//! Linear RGB images, PFM read/write (bit-exact) and sRGB PNG export.

use crate::error::{ApfError, Result};
use byteorder::{LittleEndian, WriteBytesExt};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Linear RGB image, row 0 at the top, stored as f32 triples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// width*height*3 floats, row-major from the top row.
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Image {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// PFM: `PF\n{w} {h}\n-1.0\n` then rows bottom-to-top, little-endian f32.
    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| ApfError::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| ApfError::io(path.display().to_string(), e);
        write!(w, "PF\n{} {}\n-1.0\n", self.width, self.height).map_err(io_err)?;
        for y in (0..self.height).rev() {
            let row = &self.data[y * self.width * 3..(y + 1) * self.width * 3];
            for &v in row {
                w.write_f32::<LittleEndian>(v).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    pub fn read_pfm(path: &Path) -> Result<Image> {
        let file = std::fs::File::open(path).map_err(|e| ApfError::io(path.display().to_string(), e))?;
        let mut r = BufReader::new(file);
        let mut line = String::new();
        let io_err = |e| ApfError::io(path.display().to_string(), e);
        r.read_line(&mut line).map_err(io_err)?;
        if line.trim() != "PF" {
            return Err(ApfError::Parse(format!("{}: not a color PFM", path.display())));
        }
        line.clear();
        r.read_line(&mut line).map_err(io_err)?;
        let mut dims = line.split_whitespace();
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse().ok())
                .ok_or_else(|| ApfError::Parse(format!("{}: bad PFM dimensions", path.display())))
        };
        let width = parse(dims.next())?;
        let height = parse(dims.next())?;
        line.clear();
        r.read_line(&mut line).map_err(io_err)?;
        let scale: f32 = line
            .trim()
            .parse()
            .map_err(|_| ApfError::Parse(format!("{}: bad PFM scale", path.display())))?;
        if scale >= 0.0 {
            return Err(ApfError::Parse(format!(
                "{}: big-endian PFM not supported",
                path.display()
            )));
        }
        let mut img = Image::new(width, height);
        let mut buf = vec![0u8; width * 3 * 4];
        for y in (0..height).rev() {
            r.read_exact(&mut buf).map_err(io_err)?;
            let row = &mut img.data[y * width * 3..(y + 1) * width * 3];
            for (dst, chunk) in row.iter_mut().zip(buf.chunks_exact(4)) {
                *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            }
        }
        Ok(img)
    }

    /// sRGB-encoded 8-bit PNG, values clamped to [0,1].
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for y in 0..self.height {
            for x in 0..self.width {
                let rgb = self.pixel(x, y);
                let px = [
                    linear_to_srgb_u8(rgb[0]),
                    linear_to_srgb_u8(rgb[1]),
                    linear_to_srgb_u8(rgb[2]),
                ];
                out.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        out.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| ApfError::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(e),
            })
    }

    pub fn mean_value(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

pub fn linear_to_srgb_u8(v: f32) -> u8 {
    let v = v.clamp(0.0, 1.0);
    let s = if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    };
    (s * 255.0 + 0.5) as u8
}

/// Per-pixel squared-error heatmap on a fixed blue-to-red ramp; the ramp is
/// normalized by the 99th-percentile error so a few hot pixels do not wash
/// out the rest.
pub fn error_heatmap(a: &Image, b: &Image) -> Result<(Vec<f64>, Image)> {
    if a.width != b.width || a.height != b.height {
        return Err(ApfError::Validation(format!(
            "image size mismatch: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let n = a.width * a.height;
    let mut err = vec![0.0f64; n];
    for i in 0..n {
        let mut e = 0.0;
        for c in 0..3 {
            let d = a.data[i * 3 + c] as f64 - b.data[i * 3 + c] as f64;
            e += d * d;
        }
        err[i] = e / 3.0;
    }
    let mut sorted: Vec<f64> = err.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let p99 = sorted[((n as f64 * 0.99) as usize).min(n - 1)].max(1e-12);
    let mut heat = Image::new(a.width, a.height);
    for i in 0..n {
        let t = (err[i] / p99).clamp(0.0, 1.0) as f32;
        // blue (0,0,1) -> red (1,0,0) through purple
        heat.data[i * 3] = t;
        heat.data[i * 3 + 1] = 0.0;
        heat.data[i * 3 + 2] = 1.0 - t;
    }
    Ok((err, heat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_bit_exact() {
        let mut img = Image::new(3, 2);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32) * 0.125 - 0.5;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pfm");
        img.write_pfm(&path).unwrap();
        let bytes1 = std::fs::read(&path).unwrap();
        let back = Image::read_pfm(&path).unwrap();
        assert_eq!(back, img);
        back.write_pfm(&path).unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn pfm_header_layout() {
        let img = Image::new(2, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.pfm");
        img.write_pfm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"PF\n2 1\n-1.0\n"));
        assert_eq!(bytes.len(), b"PF\n2 1\n-1.0\n".len() + 2 * 3 * 4);
    }

    #[test]
    fn pfm_rows_are_bottom_to_top() {
        let mut img = Image::new(1, 2);
        img.set_pixel(0, 0, [1.0, 2.0, 3.0]); // top row
        img.set_pixel(0, 1, [4.0, 5.0, 6.0]); // bottom row
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.pfm");
        img.write_pfm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let body = &bytes[b"PF\n1 2\n-1.0\n".len()..];
        // bottom row first
        assert_eq!(f32::from_le_bytes(body[0..4].try_into().unwrap()), 4.0);
        assert_eq!(f32::from_le_bytes(body[12..16].try_into().unwrap()), 1.0);
    }

    #[test]
    fn heatmap_identical_images_all_blue() {
        let img = Image::new(4, 4);
        let (err, heat) = error_heatmap(&img, &img).unwrap();
        assert!(err.iter().all(|&e| e == 0.0));
        for i in 0..16 {
            assert_eq!(heat.data[i * 3], 0.0);
            assert_eq!(heat.data[i * 3 + 2], 1.0);
        }
    }

    #[test]
    fn heatmap_rejects_size_mismatch() {
        let a = Image::new(2, 2);
        let b = Image::new(3, 2);
        assert!(error_heatmap(&a, &b).is_err());
    }
}
