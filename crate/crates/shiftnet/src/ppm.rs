//! Binary PPM (P6, maxval 255) images and masks.

use std::fs;
use std::path::Path;

use shiftnet_core::mask::MaskImage;
use shiftnet_core::{Real, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum PpmError {
    #[error("malformed PPM header: {0}")]
    MalformedHeader(String),
    #[error("truncated PPM payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("{path}: {err}")]
    Io { path: String, err: std::io::Error },
}

/// 8-bit RGB image, rows top to bottom, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageFile {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl ImageFile {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, PpmError> {
        if data.len() != width * height * 3 {
            return Err(PpmError::TruncatedPayload {
                expected: width * height * 3,
                found: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    /// `[1, 3, h, w]` tensor with values `v / 127.5 − 1`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        Tensor::from_fn([1, 3, self.height, self.width], |i| {
            let (c, p) = (i / plane, i % plane);
            T::lit(f64::from(self.data[p * 3 + c]) / 127.5 - 1.0)
        })
    }

    /// Inverse of [`to_tensor`](Self::to_tensor); values are clamped to
    /// `[−1, 1]` and rounded.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self, PpmError> {
        let (n, c, h, w) = t
            .dims4()
            .map_err(|e| PpmError::UnsupportedFormat(e.to_string()))?;
        if n != 1 || c != 3 {
            return Err(PpmError::UnsupportedFormat(format!(
                "expected a [1, 3, h, w] tensor, got {:?}",
                t.shape()
            )));
        }
        let plane = h * w;
        let mut data = vec![0u8; plane * 3];
        for (i, &v) in t.data().iter().enumerate() {
            let (ch, p) = (i / plane, i % plane);
            let q = ((v.as_f64().clamp(-1.0, 1.0) + 1.0) * 127.5).round();
            data[p * 3 + ch] = q as u8;
        }
        Self::new(w, h, data)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PpmError> {
        let mut h = Header { bytes, pos: 0 };
        let magic = h.token()?;
        match magic.as_str() {
            "P6" => {}
            "P1" | "P2" | "P3" | "P4" | "P5" | "P7" => {
                return Err(PpmError::UnsupportedFormat(format!("netpbm {magic}; only P6 is supported")))
            }
            _ if bytes.starts_with(b"\x89PNG") => {
                return Err(PpmError::UnsupportedFormat("PNG; only binary PPM is supported".into()))
            }
            _ => return Err(PpmError::MalformedHeader(format!("bad magic {magic:?}"))),
        }
        let width = h.number("width")?;
        let height = h.number("height")?;
        let maxval = h.number("maxval")?;
        if maxval != 255 {
            return Err(PpmError::UnsupportedFormat(format!("maxval {maxval}; only 255 is supported")));
        }
        if width == 0 || height == 0 {
            return Err(PpmError::MalformedHeader(format!("empty image {width}x{height}")));
        }
        match bytes.get(h.pos) {
            Some(b) if b.is_ascii_whitespace() => {}
            _ => return Err(PpmError::MalformedHeader("missing whitespace after maxval".into())),
        }
        let payload = &bytes[h.pos + 1..];
        let expected = width * height * 3;
        if payload.len() < expected {
            return Err(PpmError::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        Self::new(width, height, payload[..expected].to_vec())
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn token(&mut self) -> Result<String, PpmError> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while !matches!(self.bytes.get(self.pos), None | Some(b'\n')) {
                        self.pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(PpmError::MalformedHeader("unexpected end of header".into())),
            }
        }
        let start = self.pos;
        while matches!(self.bytes.get(self.pos), Some(b) if !b.is_ascii_whitespace() && *b != b'#') {
            self.pos += 1;
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self, what: &str) -> Result<usize, PpmError> {
        let t = self.token()?;
        t.parse()
            .map_err(|_| PpmError::MalformedHeader(format!("{what} {t:?} is not a number")))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PpmError + '_ {
    move |err| PpmError::Io {
        path: path.display().to_string(),
        err,
    }
}

pub fn read_image(path: &Path) -> Result<ImageFile, PpmError> {
    ImageFile::decode(&fs::read(path).map_err(io_err(path))?)
}

pub fn write_image(path: &Path, img: &ImageFile) -> Result<(), PpmError> {
    fs::write(path, img.encode()).map_err(io_err(path))
}

/// A pixel is missing when its channel mean is at least 128 (white marks
/// the hole).
pub fn mask_from_image(img: &ImageFile) -> MaskImage {
    MaskImage::from_fn(img.height, img.width, |y, x| {
        let p = (y * img.width + x) * 3;
        let sum: u32 = img.data[p..p + 3].iter().map(|&v| u32::from(v)).sum();
        sum >= 3 * 128
    })
}

pub fn mask_to_image(mask: &MaskImage) -> ImageFile {
    let data = mask
        .data()
        .iter()
        .flat_map(|&m| [if m == 1 { 255 } else { 0 }; 3])
        .collect();
    ImageFile {
        width: mask.width(),
        height: mask.height(),
        data,
    }
}

pub fn read_mask(path: &Path) -> Result<MaskImage, PpmError> {
    Ok(mask_from_image(&read_image(path)?))
}

pub fn write_mask(path: &Path, mask: &MaskImage) -> Result<(), PpmError> {
    write_image(path, &mask_to_image(mask))
}
