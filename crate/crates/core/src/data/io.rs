//! Binary Netpbm (P5 grayscale, P6 RGB; maxval 255) and the dataset manifest.

use std::fs;
use std::path::{Path, PathBuf};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// A decoded 8-bit Netpbm raster, row-major and channel-interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parses a binary P5/P6 file. Errors carry the byte offset at which
    /// parsing failed.
    pub fn decode(bytes: &[u8]) -> std::result::Result<Raster, (usize, String)> {
        let mut pos = 0;
        let magic = bytes
            .get(0..2)
            .ok_or((0, "file too short for a magic number".to_string()))?;
        let channels = match magic {
            b"P5" => 1,
            b"P6" => 3,
            _ => return Err((0, format!("unsupported magic {:?}", String::from_utf8_lossy(magic)))),
        };
        pos += 2;
        let mut fields = [0usize; 3];
        for (k, field) in fields.iter_mut().enumerate() {
            // whitespace and comments
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            if start == pos {
                let name = ["width", "height", "maxval"][k];
                return Err((pos, format!("expected {name}")));
            }
            let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
            *field = text
                .parse()
                .map_err(|_| (start, format!("number {text} out of range")))?;
        }
        let [width, height, maxval] = fields;
        if width == 0 || height == 0 {
            return Err((pos, "zero image dimension".into()));
        }
        if maxval != 255 {
            return Err((pos, format!("maxval {maxval} unsupported, expected 255")));
        }
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            _ => return Err((pos, "expected a single whitespace after maxval".into())),
        }
        let need = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or((pos, "image dimensions overflow".to_string()))?;
        let data = &bytes[pos..];
        if data.len() < need {
            return Err((
                bytes.len(),
                format!("expected {need} pixel bytes, found {}", data.len()),
            ));
        }
        Ok(Raster {
            width,
            height,
            channels,
            pixels: data[..need].to_vec(),
        })
    }

    pub fn read(path: &Path) -> Result<Raster> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Raster::decode(&bytes).map_err(|(offset, msg)| Error::Parse {
            path: path.to_path_buf(),
            offset,
            msg,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    /// `[C, H, W]` tensor with values `byte / 255`.
    pub fn to_tensor(&self) -> Tensor {
        let (c, h, w) = (self.channels, self.height, self.width);
        let mut data = vec![0.0; c * h * w];
        for (i, &b) in self.pixels.iter().enumerate() {
            let (pix, ch) = (i / c, i % c);
            data[ch * h * w + pix] = b as f64 / 255.0;
        }
        Tensor::from_vec(&[c, h, w], data).expect("consistent raster size")
    }

    /// From `[H, W]` (grayscale) or `[3, H, W]` values in `[0, 1]`, quantized
    /// with `round(255·v)`.
    pub fn from_tensor(t: &Tensor) -> Result<Raster> {
        let (c, h, w) = match *t.shape() {
            [h, w] => (1, h, w),
            [c @ (1 | 3), h, w] => (c, h, w),
            ref s => return Err(Error::shape(format!("cannot encode tensor of shape {s:?} as an image"))),
        };
        let mut pixels = vec![0u8; c * h * w];
        for ch in 0..c {
            for pix in 0..h * w {
                pixels[pix * c + ch] = crate::metrics::quantize(t.data()[ch * h * w + pix]);
            }
        }
        Ok(Raster {
            width: w,
            height: h,
            channels: c,
            pixels,
        })
    }
}

/// RGB image as `[3, H, W]` in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let r = Raster::read(path)?;
    if r.channels != 3 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            msg: "expected an RGB (P6) image".into(),
        });
    }
    Ok(r.to_tensor())
}

pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    Raster::from_tensor(image)?.write(path)
}

/// Grayscale map as `[H, W]` in `[0, 1]`.
pub fn read_map(path: &Path) -> Result<Tensor> {
    let r = Raster::read(path)?;
    if r.channels != 1 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            msg: "expected a grayscale (P5) image".into(),
        });
    }
    r.to_tensor().reshape(&[r.height, r.width])
}

/// Binary mask: pixels >= 128 are salient.
pub fn read_mask(path: &Path) -> Result<Tensor> {
    Ok(read_map(path)?.map(|v| if v >= 128.0 / 255.0 { 1.0 } else { 0.0 }))
}

pub fn write_map(path: &Path, map: &Tensor) -> Result<()> {
    Raster::from_tensor(map)?.write(path)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// One `id<TAB>image_path<TAB>mask_path` record per line. Relative paths are
/// resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let record = line.trim_end_matches(['\n', '\r']);
        if !record.is_empty() {
            let fields: Vec<&str> = record.split('\t').collect();
            let [id, image, mask] = fields[..] else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    offset,
                    msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            };
            out.push(ManifestEntry {
                id: id.to_string(),
                image: base.join(image),
                mask: base.join(mask),
            });
        }
        offset += line.len();
    }
    Ok(out)
}

pub fn format_manifest(entries: &[(String, String, String)]) -> String {
    entries
        .iter()
        .map(|(id, img, mask)| format!("{id}\t{img}\t{mask}\n"))
        .collect()
}
