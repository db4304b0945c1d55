use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved (HWC) float image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Parameter(format!("empty image {width}x{height}x{channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::dim(
                "image",
                format!("{width}x{height}x{channels} needs {} values, got {}", width * height * channels, data.len()),
            ));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Bilinear sample at real coordinates inside `[0, w-1] x [0, h-1]`.
    pub fn bilinear(&self, x: f64, y: f64, out: &mut [f32]) {
        let x0 = (x.floor().max(0.0) as usize).min(self.width - 1);
        let y0 = (y.floor().max(0.0) as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64).clamp(0.0, 1.0);
        let fy = (y - y0 as f64).clamp(0.0, 1.0);
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w10 = fx * (1.0 - fy);
        let w01 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let v = w00 * self.get(x0, y0, c) as f64
                + w10 * self.get(x1, y0, c) as f64
                + w01 * self.get(x0, y1, c) as f64
                + w11 * self.get(x1, y1, c) as f64;
            *o = v as f32;
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::Parameter(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(Image::from_fn(w, h, self.channels, |x, y, c| self.get(x + x0, y + y0, c)))
    }

    /// Channel-major copy (`c x h x w`) for the encoder.
    pub fn to_chw(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.data.len()];
        let hw = self.width * self.height;
        for p in 0..hw {
            for c in 0..self.channels {
                out[c * hw + p] = self.data[p * self.channels + c];
            }
        }
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_ppm_bytes()).map_err(|e| Error::io(path, e))
    }

    /// 8-bit binary PPM (P6). Grey images are replicated to three channels.
    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in 0..self.width * self.height {
            for c in 0..3 {
                let v = self.data[p * self.channels + c.min(self.channels - 1)];
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut tokens = Vec::new();
        let mut offset = 0u64;
        while tokens.len() < 4 {
            let mut line = String::new();
            let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                return Err(Error::format(offset, "truncated PPM header"));
            }
            offset += n as u64;
            let body = line.split('#').next().unwrap_or("");
            tokens.extend(body.split_whitespace().map(str::to_owned));
        }
        if tokens[0] != "P6" {
            return Err(Error::format(0, format!("expected P6 magic, found {}", tokens[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(offset, format!("bad PPM header field `{s}`")));
        let (w, h, maxv) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxv != 255 {
            return Err(Error::format(offset, "only 8-bit PPM is supported"));
        }
        let mut buf = vec![0u8; w * h * 3];
        r.read_exact(&mut buf)
            .map_err(|_| Error::format(offset, "truncated PPM payload"))?;
        Image::new(w, h, 3, buf.into_iter().map(|b| b as f32 / 255.0).collect())
    }

    pub fn write_pwim(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = pwim::encode(
            &pwim::Header {
                height: self.height,
                width: self.width,
                channels: self.channels,
                reserved: 0,
            },
            &self.data,
        )?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_pwim(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (h, data) = pwim::decode(&bytes)?;
        Image::new(h.width, h.height, h.channels, data)
    }
}

/// Flat float32 tensor files.
///
/// Layout (little-endian): `"PWIM"`, `u16` version, `u16` channels, `u16`
/// height, `u16` width, `u32` reserved, then `height * width * channels`
/// float32 values in row-major HWC order. The reserved word is zero for
/// images; probabilistic mappings store their grid metadata there.
pub mod pwim {
    use crate::error::{Error, Result};

    pub const MAGIC: &[u8; 4] = b"PWIM";
    pub const VERSION: u16 = 1;
    pub const HEADER_LEN: usize = 16;

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub struct Header {
        pub height: usize,
        pub width: usize,
        pub channels: usize,
        pub reserved: u32,
    }

    pub fn encode(h: &Header, data: &[f32]) -> Result<Vec<u8>> {
        let fits = |v: usize| v > 0 && v <= u16::MAX as usize;
        if !(fits(h.height) && fits(h.width) && fits(h.channels)) {
            return Err(Error::Parameter(format!("PWIM dims out of range: {h:?}")));
        }
        if data.len() != h.height * h.width * h.channels {
            return Err(Error::dim("pwim", "payload length does not match header"));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(h.channels as u16).to_le_bytes());
        out.extend_from_slice(&(h.height as u16).to_le_bytes());
        out.extend_from_slice(&(h.width as u16).to_le_bytes());
        out.extend_from_slice(&h.reserved.to_le_bytes());
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<(Header, Vec<f32>)> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(bytes.len() as u64, "truncated PWIM header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::format(0, "bad PWIM magic"));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
        let version = u16_at(4) as u16;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported PWIM version {version}")));
        }
        let h = Header {
            channels: u16_at(6),
            height: u16_at(8),
            width: u16_at(10),
            reserved: u32::from_le_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]),
        };
        let n = h.channels * h.height * h.width;
        let expected = HEADER_LEN + 4 * n;
        if bytes.len() != expected {
            return Err(Error::format(
                bytes.len().min(expected) as u64,
                format!("PWIM payload length {} does not match header ({expected})", bytes.len()),
            ));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((h, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pwim_round_trip_and_truncation() {
        let img = Image::from_fn(5, 3, 2, |x, y, c| (x + 10 * y + 100 * c) as f32 * 0.01);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pwim");
        img.write_pwim(&p).unwrap();
        assert_eq!(Image::read_pwim(&p).unwrap(), img);

        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(Image::read_pwim(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn ppm_round_trip_quantizes() {
        let img = Image::from_fn(4, 2, 3, |x, y, c| ((x * 37 + y * 11 + c * 5) % 256) as f32 / 255.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ppm");
        img.write_ppm(&p).unwrap();
        let back = Image::read_ppm(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn bilinear_midpoint_of_ramp() {
        let img = Image::from_fn(4, 1, 1, |x, _, _| x as f32);
        let mut out = [0.0];
        img.bilinear(1.5, 0.0, &mut out);
        assert_eq!(out[0], 1.5);
    }
}
