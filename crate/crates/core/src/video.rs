//! Frame ingestion, fixed-length temporal resampling and input preprocessing.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::nn::Tensor;

/// Frames per clip fed to the classifiers.
pub const CLIP_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("frame directory {0} does not exist")]
    MissingDirectory(PathBuf),
    #[error("no frames found in {0}")]
    NoFrames(PathBuf),
    #[error("{path}: {reason}")]
    Ppm { path: PathBuf, reason: String },
    #[error(
        "frame numbering in {dir} is not contiguous: expected frame {expected}, found {found}"
    )]
    NonContiguous {
        dir: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("cannot resample an empty frame list")]
    EmptyInput,
    #[error("clip must hold exactly {CLIP_LEN} frames, got {0}")]
    ClipLength(usize),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("target size must be positive, got {0}x{1}")]
    ZeroTarget(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An 8-bit RGB image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    /// Position of this frame in its source sequence.
    pub source_index: usize,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, VideoError> {
        if width == 0 || height == 0 {
            return Err(VideoError::InvalidFrame(format!("{width}x{height}")));
        }
        if pixels.len() != width * height * 3 {
            return Err(VideoError::InvalidFrame(format!(
                "{width}x{height} needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            source_index: 0,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, VideoError> {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn with_source_index(mut self, index: usize) -> Self {
        self.source_index = index;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    /// Binary PPM (`P6`, maxval 255) encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, String> {
        let mut pos = 0;
        let mut token = |bytes: &[u8]| -> Result<String, String> {
            loop {
                match bytes.get(pos) {
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(_) => break,
                    None => return Err("unexpected end of header".into()),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
                pos += 1;
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = token(bytes)?;
        if magic != "P6" {
            return Err(format!("expected P6 magic, found {magic:?}"));
        }
        let mut number = |what: &str| -> Result<usize, String> {
            let t = token(bytes)?;
            t.parse::<usize>()
                .map_err(|_| format!("invalid {what} {t:?} in header"))
        };
        let width = number("width")?;
        let height = number("height")?;
        let maxval = number("maxval")?;
        if width == 0 || height == 0 {
            return Err(format!("invalid dimensions {width}x{height}"));
        }
        if maxval == 0 || maxval > 255 {
            return Err(format!("unsupported maxval {maxval}"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
            return Err("missing separator after header".into());
        }
        let data = &bytes[pos + 1..];
        let need = width * height * 3;
        if data.len() < need {
            return Err(format!("raster truncated: {} of {need} bytes", data.len()));
        }
        let pixels = if maxval == 255 {
            data[..need].to_vec()
        } else {
            data[..need]
                .iter()
                .map(|&v| ((v as usize * 255 + maxval / 2) / maxval).min(255) as u8)
                .collect()
        };
        Frame::new(width, height, pixels).map_err(|e| e.to_string())
    }
}

/// Exactly [`CLIP_LEN`] frames drawn from a source sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clip {
    frames: Vec<Frame>,
    pub source_id: String,
    /// Frame count of the source before resampling.
    pub source_len: usize,
}

impl Clip {
    pub fn new(
        frames: Vec<Frame>,
        source_id: impl Into<String>,
        source_len: usize,
    ) -> Result<Self, VideoError> {
        if frames.len() != CLIP_LEN {
            return Err(VideoError::ClipLength(frames.len()));
        }
        Ok(Self {
            frames,
            source_id: source_id.into(),
            source_len,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn source_indices(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.source_index).collect()
    }
}

/// Source index for each of `target` output slots: `round(i (L-1) / (T-1))`
/// with halves rounded up, computed in exact integer arithmetic.
pub fn resample_indices(source_len: usize, target: usize) -> Result<Vec<usize>, VideoError> {
    if source_len == 0 {
        return Err(VideoError::EmptyInput);
    }
    if target <= 1 {
        return Ok(vec![0; target]);
    }
    let span = target - 1;
    Ok((0..target)
        .map(|i| (2 * i * (source_len - 1) + span) / (2 * span))
        .collect())
}

/// Stretches (duplicating frames) or subsamples `frames` to a [`CLIP_LEN`] clip.
/// Frames keep their own `source_index`.
pub fn resample_to_length(
    frames: &[Frame],
    source_id: impl Into<String>,
) -> Result<Clip, VideoError> {
    let idx = resample_indices(frames.len(), CLIP_LEN)?;
    let picked = idx.iter().map(|&i| frames[i].clone()).collect();
    Clip::new(picked, source_id, frames.len())
}

fn frame_number(path: &Path) -> Option<usize> {
    let name = path.file_name()?.to_str()?;
    let digits = name.strip_prefix("frame_")?.strip_suffix(".ppm")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Loads `frame_NN.ppm` files from `dir` in numeric order. Numbering must
/// start at 0 and be contiguous; other files are ignored.
pub fn load_frames(dir: impl AsRef<Path>) -> Result<Vec<Frame>, VideoError> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(VideoError::MissingDirectory(dir.to_path_buf()));
    }
    let mut numbered: Vec<(usize, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| frame_number(&p).map(|n| (n, p)))
        .collect();
    if numbered.is_empty() {
        return Err(VideoError::NoFrames(dir.to_path_buf()));
    }
    numbered.sort();
    numbered
        .into_iter()
        .enumerate()
        .map(|(expected, (n, path))| {
            if n != expected {
                return Err(VideoError::NonContiguous {
                    dir: dir.to_path_buf(),
                    expected,
                    found: n,
                });
            }
            let bytes = fs::read(&path)?;
            Frame::from_ppm(&bytes)
                .map(|f| f.with_source_index(n))
                .map_err(|reason| VideoError::Ppm { path, reason })
        })
        .collect()
}

/// Writes `frames` as `frame_00.ppm`, `frame_01.ppm`, ... into `dir`.
pub fn save_frames(dir: impl AsRef<Path>, frames: &[Frame]) -> Result<(), VideoError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        fs::write(dir.join(format!("frame_{i:02}.ppm")), f.to_ppm())?;
    }
    Ok(())
}

/// Bilinear resize to `height x width` (half-pixel centres, edge clamped)
/// followed by `v / 127.5 - 1`, giving an `H x W x 3` tensor in `[-1, 1]`.
pub fn preprocess(frame: &Frame, height: usize, width: usize) -> Result<Tensor<f32>, VideoError> {
    if height == 0 || width == 0 {
        return Err(VideoError::ZeroTarget(height, width));
    }
    let (sw, sh) = (frame.width, frame.height);
    let sx = sw as f32 / width as f32;
    let sy = sh as f32 / height as f32;
    let taps = |dst: usize, scale: f32, extent: usize| -> (usize, usize, f32) {
        let src = ((dst as f32 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(extent - 1);
        let i1 = (i0 + 1).min(extent - 1);
        (i0, i1, src - i0 as f32)
    };
    let xs: Vec<_> = (0..width).map(|x| taps(x, sx, sw)).collect();
    let px = &frame.pixels;
    let mut out = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        let (y0, y1, fy) = taps(y, sy, sh);
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let at = |xx: usize, yy: usize| px[(yy * sw + xx) * 3 + c] as f32;
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push((v / 127.5 - 1.0).clamp(-1.0, 1.0));
            }
        }
    }
    Ok(Tensor::new(vec![height, width, 3], out).expect("sized above"))
}
