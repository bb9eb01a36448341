//! On-disk formats: binary PPM/PGM images, the JSON camera rig and the
//! `OR2G` checkpoint.
//!
//! Checkpoint layout (all integers `u32` little-endian, all arrays `f32`
//! little-endian):
//!
//! ```text
//! "OR2G" version N sh_degree
//! positions[3N] rotations[4N] log_scales[3N] opacity_logits[N] sh_coeffs[3N(d+1)^2]
//! cameras H W
//! residual maps[cameras * H * W * 3]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::image::{Image, StaticMask};
use crate::renderer::Camera;
use crate::scene::sh::MAX_SH_DEGREE;
use crate::scene::{sh_len, GaussianSet, PointCloudInit};
use crate::stream::{FrameObservation, FrameSource, ResidualMapSet};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OR2G";
pub const CHECKPOINT_VERSION: u32 = 1;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Netpbm

struct Header {
    width: usize,
    height: usize,
    data_start: usize,
}

fn skip_space(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(b'#') => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            _ => return pos,
        }
    }
}

fn header_int(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize), FormatError> {
    let start = skip_space(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(if start >= bytes.len() {
            FormatError::Truncated { offset: start }
        } else {
            FormatError::MalformedHeader {
                offset: start,
                reason: format!("expected {what}"),
            }
        });
    }
    let value = std::str::from_utf8(&bytes[start..end])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| FormatError::MalformedHeader {
            offset: start,
            reason: format!("{what} out of range"),
        })?;
    Ok((value, end))
}

fn parse_header(bytes: &[u8], magic: &[u8; 2], channels: usize) -> Result<Header, FormatError> {
    if bytes.len() < 2 {
        return Err(FormatError::Truncated { offset: bytes.len() });
    }
    if &bytes[..2] != magic {
        return Err(FormatError::BadMagic {
            offset: 0,
            found: bytes[..2].to_vec(),
        });
    }
    let (width, pos) = header_int(bytes, 2, "width")?;
    let (height, pos) = header_int(bytes, pos, "height")?;
    let maxval_at = skip_space(bytes, pos);
    let (maxval, pos) = header_int(bytes, pos, "maxval")?;
    if maxval != 255 {
        return Err(FormatError::Unsupported {
            offset: maxval_at,
            reason: format!("maxval {maxval} (only 255 is supported)"),
        });
    }
    if width == 0 || height == 0 {
        return Err(FormatError::MalformedHeader {
            offset: 2,
            reason: "zero image dimension".into(),
        });
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        Some(_) => {
            return Err(FormatError::MalformedHeader {
                offset: pos,
                reason: "expected whitespace after maxval".into(),
            })
        }
        None => return Err(FormatError::Truncated { offset: pos }),
    }
    let data_start = pos + 1;
    let need = width * height * channels;
    let end = data_start + need;
    if bytes.len() < end {
        return Err(FormatError::Truncated { offset: bytes.len() });
    }
    if bytes.len() > end {
        return Err(FormatError::TrailingBytes {
            offset: end,
            extra: bytes.len() - end,
        });
    }
    Ok(Header {
        width,
        height,
        data_start,
    })
}

/// P6 encoding of an image (quantized to 8 bits).
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_u8());
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, FormatError> {
    let h = parse_header(bytes, b"P6", 3)?;
    Ok(Image::from_u8(h.width, h.height, &bytes[h.data_start..]).expect("size checked"))
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    write_bytes(path, &encode_ppm(img))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    decode_ppm(&read_bytes(path)?).map_err(|e| Error::format(path, e))
}

/// P5 encoding of a mask: 255 for static pixels, 0 otherwise.
pub fn encode_pgm(mask: &StaticMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&s| if s { 255u8 } else { 0 }));
    out
}

/// Any non-zero sample counts as static.
pub fn decode_pgm(bytes: &[u8]) -> Result<StaticMask, FormatError> {
    let h = parse_header(bytes, b"P5", 1)?;
    let data = bytes[h.data_start..].iter().map(|&b| b != 0).collect();
    Ok(StaticMask {
        width: h.width,
        height: h.height,
        data,
    })
}

pub fn write_pgm(path: &Path, mask: &StaticMask) -> Result<()> {
    write_bytes(path, &encode_pgm(mask))
}

pub fn read_pgm(path: &Path) -> Result<StaticMask> {
    decode_pgm(&read_bytes(path)?).map_err(|e| Error::format(path, e))
}

// ---------------------------------------------------------------------------
// Rig

/// Camera rig shared by every frame of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rig {
    pub frames: usize,
    pub cameras: Vec<Camera>,
}

pub fn write_rig(path: &Path, rig: &Rig) -> Result<()> {
    write_json(path, rig)
}

pub fn read_rig(path: &Path) -> Result<Rig> {
    let rig: Rig = read_json(path)?;
    for cam in &rig.cameras {
        cam.validate()?;
    }
    Ok(rig)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| {
        Error::format(
            path,
            FormatError::MalformedHeader {
                offset: e.column(),
                reason: e.to_string(),
            },
        )
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Seed point cloud stored next to a dataset.
pub fn write_init(path: &Path, init: &PointCloudInit) -> Result<()> {
    write_json(path, init)
}

pub fn read_init(path: &Path) -> Result<PointCloudInit> {
    let init: PointCloudInit = read_json(path)?;
    if init.points.len() != init.colors.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}: {} points but {} colors",
            path.display(),
            init.points.len(),
            init.colors.len()
        )));
    }
    if init.points.is_empty() {
        return Err(Error::EmptyInitialization);
    }
    Ok(init)
}

// ---------------------------------------------------------------------------
// Datasets

/// A dataset directory: `rig.json`, `cam{c}/frame{t}.ppm`, `masks/cam{c}.pgm`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub rig: Rig,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let rig = read_rig(&root.join("rig.json"))?;
        Ok(Dataset {
            root: root.to_path_buf(),
            rig,
        })
    }

    pub fn image_path(&self, camera: usize, frame: usize) -> PathBuf {
        self.root.join(format!("cam{camera}")).join(format!("frame{frame}.ppm"))
    }

    pub fn mask_path(&self, camera: usize) -> PathBuf {
        self.root.join("masks").join(format!("cam{camera}.pgm"))
    }

    fn check(&self, camera: usize, frame: usize) -> Result<()> {
        if camera >= self.rig.cameras.len() {
            return Err(Error::InvalidArgument(format!(
                "camera {camera} not in rig of {}",
                self.rig.cameras.len()
            )));
        }
        if frame >= self.rig.frames {
            return Err(Error::DatasetExhausted(frame));
        }
        Ok(())
    }

    pub fn image(&self, camera: usize, frame: usize) -> Result<Image> {
        self.check(camera, frame)?;
        let cam = &self.rig.cameras[camera];
        let img = read_ppm(&self.image_path(camera, frame))?;
        if img.width != cam.width || img.height != cam.height {
            return Err(Error::ShapeMismatch(format!(
                "camera {camera} frame {frame}: image {}x{} vs rig {}x{}",
                img.width, img.height, cam.width, cam.height
            )));
        }
        Ok(img)
    }

    pub fn mask(&self, camera: usize) -> Result<StaticMask> {
        self.check(camera, 0)?;
        read_pgm(&self.mask_path(camera))
    }

    /// Sequential reader over the given cameras.
    pub fn source(&self, cameras: &[usize]) -> Result<DatasetSource<'_>> {
        for &c in cameras {
            self.check(c, 0)?;
        }
        Ok(DatasetSource {
            dataset: self,
            cameras: cameras.to_vec(),
            next: 0,
        })
    }
}

/// Reads frames from disk one at a time, in order.
pub struct DatasetSource<'a> {
    dataset: &'a Dataset,
    cameras: Vec<usize>,
    next: usize,
}

impl FrameSource for DatasetSource<'_> {
    fn frame_count(&self) -> usize {
        self.dataset.rig.frames
    }

    fn next_frame(&mut self) -> Result<FrameObservation> {
        let t = self.next;
        let images = self
            .cameras
            .iter()
            .map(|&c| self.dataset.image(c, t))
            .collect::<Result<Vec<_>>>()?;
        self.next += 1;
        Ok(FrameObservation { frame: t, images })
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

pub fn encode_checkpoint(g: &GaussianSet, maps: &ResidualMapSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [CHECKPOINT_VERSION, g.len() as u32, g.sh_degree] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let floats = g
        .positions
        .iter()
        .chain(&g.rotations)
        .chain(&g.log_scales)
        .chain(&g.opacity_logits)
        .chain(&g.sh_coeffs);
    for &v in floats {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let (h, w) = maps.maps.first().map_or((0, 0), |m| (m.height, m.width));
    for v in [maps.len() as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for m in &maps.maps {
        for &v in &m.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(FormatError::Truncated {
                offset: self.bytes.len(),
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(4).ok_or(FormatError::Truncated {
            offset: self.bytes.len(),
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(GaussianSet, ResidualMapSet), FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic {
            offset: 0,
            found: magic.to_vec(),
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            offset: 4,
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let n = r.u32()? as usize;
    if n == 0 {
        return Err(FormatError::MalformedHeader {
            offset: 8,
            reason: "zero gaussians".into(),
        });
    }
    let sh_degree = r.u32()?;
    if sh_degree > MAX_SH_DEGREE {
        return Err(FormatError::MalformedHeader {
            offset: 12,
            reason: format!("sh degree {sh_degree}"),
        });
    }
    let k = sh_len(sh_degree);
    let g = GaussianSet {
        positions: r.f32s(3 * n)?,
        rotations: r.f32s(4 * n)?,
        log_scales: r.f32s(3 * n)?,
        opacity_logits: r.f32s(n)?,
        sh_coeffs: r.f32s(3 * k * n)?,
        sh_degree,
    };
    let maps_at = r.pos;
    let cams = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    if cams > 0 && (h == 0 || w == 0) {
        return Err(FormatError::MalformedHeader {
            offset: maps_at,
            reason: "residual maps with zero dimension".into(),
        });
    }
    let mut maps = Vec::with_capacity(cams);
    for _ in 0..cams {
        let data = r.f32s(h * w * 3)?;
        maps.push(Image::from_data(w, h, data).expect("size checked"));
    }
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes {
            offset: r.pos,
            extra: bytes.len() - r.pos,
        });
    }
    Ok((g, ResidualMapSet { maps }))
}

pub fn write_checkpoint(path: &Path, g: &GaussianSet, maps: &ResidualMapSet) -> Result<()> {
    write_bytes(path, &encode_checkpoint(g, maps))
}

pub fn read_checkpoint(path: &Path) -> Result<(GaussianSet, ResidualMapSet)> {
    decode_checkpoint(&read_bytes(path)?).map_err(|e| Error::format(path, e))
}
