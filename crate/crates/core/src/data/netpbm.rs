//! Binary PGM (`P5`) and PPM (`P6`) with maxval 255.

use std::fs;
use std::path::Path;

use super::DataError;
use crate::tensor::Tensor;

/// 8-bit image, interleaved channels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self, DataError> {
        if channels != 1 && channels != 3 {
            return Err(DataError::Channels(channels));
        }
        if pixels.len() != width * height * channels {
            return Err(DataError::Truncated {
                expected: width * height * channels,
                found: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DataError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.token()?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(DataError::Header(format!("unsupported magic {other:?}"))),
        };
        let width = cur.number("width")?;
        let height = cur.number("height")?;
        let maxval = cur.number("maxval")?;
        if maxval != 255 {
            return Err(DataError::Maxval(maxval));
        }
        // Exactly one whitespace byte separates the header from the raster.
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(DataError::Header("missing separator after maxval".into())),
        }
        let expected = width * height * channels;
        let raster = &bytes[cur.pos..];
        if raster.len() < expected {
            return Err(DataError::Truncated {
                expected,
                found: raster.len(),
            });
        }
        Self::new(width, height, channels, raster[..expected].to_vec())
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<String, DataError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(DataError::Header("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self, what: &str) -> Result<usize, DataError> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| DataError::Header(format!("bad {what} {tok:?}")))
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))?;
    ImageBuffer::decode(&bytes)
}

pub fn save_image(buf: &ImageBuffer, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, buf.encode()).map_err(|e| DataError::Io(path.display().to_string(), e.to_string()))
}

/// Pixel values scaled into `[0, 1]`.
pub fn to_tensor(buf: &ImageBuffer) -> Tensor {
    Tensor::from_fn(buf.height, buf.width, buf.channels, |y, x, c| {
        buf.pixels[(y * buf.width + x) * buf.channels + c] as f64 / 255.0
    })
}

/// Clamps to `[0, 1]`, scales by 255 and rounds half away from zero.
pub fn from_tensor(t: &Tensor) -> Result<ImageBuffer, DataError> {
    let pixels = t
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    ImageBuffer::new(t.width(), t.height(), t.channels(), pixels)
}
