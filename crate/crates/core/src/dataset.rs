//! Labelled clip collections: the synthetic moving-shape stand-in, stratified
//! splitting and the on-disk directory layout.
//!
//! On disk a dataset is a directory holding `labels.txt` (one word per line,
//! line number = class index) and one `class_<idx>_<word>/` directory per
//! class, each containing one subdirectory per clip with `frame_00.ppm` ..
//! `frame_11.ppm`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::video::{self, Clip, Frame, VideoError, CLIP_LEN};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("label {label} out of range for a vocabulary of {classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid dataset layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub clip: Clip,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    items: Vec<LabeledClip>,
    vocabulary: Vec<String>,
}

impl LabeledDataset {
    pub fn new(items: Vec<LabeledClip>, vocabulary: Vec<String>) -> Result<Self, DatasetError> {
        if let Some(bad) = items.iter().find(|i| i.label >= vocabulary.len()) {
            return Err(DatasetError::LabelOutOfRange {
                label: bad.label,
                classes: vocabulary.len(),
            });
        }
        Ok(Self { items, vocabulary })
    }

    pub fn items(&self) -> &[LabeledClip] {
        &self.items
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn num_classes(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.vocabulary.len()];
        for i in &self.items {
            counts[i.label] += 1;
        }
        counts
    }

    /// Stratified split: in every class `round(n * val_fraction)` clips,
    /// chosen by a seeded shuffle, go to the second (validation) set.
    pub fn split(&self, val_fraction: f64, seed: u64) -> (LabeledDataset, LabeledDataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut val = Vec::new();
        for class in 0..self.vocabulary.len() {
            let mut idx: Vec<usize> = (0..self.items.len())
                .filter(|&i| self.items[i].label == class)
                .collect();
            idx.shuffle(&mut rng);
            let n_val = (idx.len() as f64 * val_fraction.clamp(0.0, 1.0)).round() as usize;
            let (v, t) = idx.split_at(n_val);
            let mut v = v.to_vec();
            let mut t = t.to_vec();
            v.sort_unstable();
            t.sort_unstable();
            val.extend(v.into_iter().map(|i| self.items[i].clone()));
            train.extend(t.into_iter().map(|i| self.items[i].clone()));
        }
        (
            LabeledDataset {
                items: train,
                vocabulary: self.vocabulary.clone(),
            },
            LabeledDataset {
                items: val,
                vocabulary: self.vocabulary.clone(),
            },
        )
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut labels = self.vocabulary.join("\n");
        labels.push('\n');
        fs::write(dir.join("labels.txt"), labels)?;
        let mut per_class = vec![0usize; self.vocabulary.len()];
        for item in &self.items {
            let n = per_class[item.label];
            per_class[item.label] += 1;
            let clip_dir = dir
                .join(format!(
                    "class_{}_{}",
                    item.label, self.vocabulary[item.label]
                ))
                .join(format!("clip_{n:04}"));
            video::save_frames(clip_dir, item.clip.frames())?;
        }
        Ok(())
    }

    /// Loads the layout written by [`LabeledDataset::save`]. Clips with a
    /// frame count other than 12 are resampled.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let dir = dir.as_ref();
        let labels = fs::read_to_string(dir.join("labels.txt"))?;
        let vocabulary: Vec<String> = labels
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        let mut class_dirs: Vec<(usize, std::path::PathBuf)> = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let Some(rest) = name.strip_prefix("class_") else {
                continue;
            };
            let idx_str = rest.split('_').next().unwrap_or_default();
            let idx: usize = idx_str
                .parse()
                .map_err(|_| DatasetError::Layout(format!("bad class directory {name}")))?;
            if idx >= vocabulary.len() {
                return Err(DatasetError::LabelOutOfRange {
                    label: idx,
                    classes: vocabulary.len(),
                });
            }
            let word = &rest[idx_str.len()..].trim_start_matches('_');
            if *word != vocabulary[idx] {
                return Err(DatasetError::Layout(format!(
                    "directory {name} does not match label {:?}",
                    vocabulary[idx]
                )));
            }
            class_dirs.push((idx, path));
        }
        class_dirs.sort();
        let mut items = Vec::new();
        for (label, class_dir) in class_dirs {
            let mut clips: Vec<_> = fs::read_dir(&class_dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            clips.sort();
            for clip_dir in clips {
                let frames = video::load_frames(&clip_dir)?;
                let id = clip_dir.display().to_string();
                items.push(LabeledClip {
                    clip: video::resample_to_length(&frames, id)?,
                    label,
                });
            }
        }
        Self::new(items, vocabulary)
    }
}

const WORDS: [&str; 20] = [
    "hello", "thanks", "yes", "no", "please", "sorry", "help", "more", "good", "bad", "eat",
    "drink", "home", "work", "family", "friend", "love", "stop", "go", "learn",
];

/// Vocabulary used by the synthetic generator.
pub fn synthetic_vocabulary(num_classes: usize) -> Vec<String> {
    (0..num_classes)
        .map(|i| match WORDS.get(i) {
            Some(w) => (*w).to_string(),
            None => format!("sign{i}"),
        })
        .collect()
}

/// Side length of synthetic frames in pixels.
pub const SYNTHETIC_FRAME_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Square,
    Disc,
    Triangle,
    Cross,
    Ring,
}

const SHAPES: [Shape; 5] = [
    Shape::Square,
    Shape::Disc,
    Shape::Triangle,
    Shape::Cross,
    Shape::Ring,
];

/// Straight sweeps; each class is a (shape, sweep, tint) triple.
#[derive(Debug, Clone, Copy)]
struct Sweep {
    from: (f32, f32),
    to: (f32, f32),
}

const SWEEPS: [Sweep; 12] = [
    Sweep {
        from: (0.15, 0.28),
        to: (0.85, 0.28),
    },
    Sweep {
        from: (0.85, 0.72),
        to: (0.15, 0.72),
    },
    Sweep {
        from: (0.28, 0.15),
        to: (0.28, 0.85),
    },
    Sweep {
        from: (0.72, 0.85),
        to: (0.72, 0.15),
    },
    Sweep {
        from: (0.15, 0.15),
        to: (0.85, 0.85),
    },
    Sweep {
        from: (0.85, 0.15),
        to: (0.15, 0.85),
    },
    Sweep {
        from: (0.15, 0.5),
        to: (0.85, 0.5),
    },
    Sweep {
        from: (0.5, 0.85),
        to: (0.5, 0.15),
    },
    Sweep {
        from: (0.5, 0.5),
        to: (0.5, 0.5),
    },
    Sweep {
        from: (0.15, 0.5),
        to: (0.5, 0.15),
    },
    Sweep {
        from: (0.5, 0.85),
        to: (0.85, 0.5),
    },
    Sweep {
        from: (0.85, 0.15),
        to: (0.5, 0.5),
    },
];

const TINTS: [[f32; 3]; 3] = [
    [215.0, 165.0, 130.0],
    [140.0, 190.0, 230.0],
    [170.0, 225.0, 150.0],
];

fn covers(shape: Shape, dx: f32, dy: f32, r: f32) -> bool {
    match shape {
        Shape::Square => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
        Shape::Disc => dx * dx + dy * dy <= r * r,
        Shape::Triangle => {
            // Apex up, base at +r.
            dy <= r * 0.8 && dy >= -r && dx.abs() <= (dy + r) * 0.6
        }
        Shape::Cross => {
            (dx.abs() <= r * 0.3 && dy.abs() <= r) || (dy.abs() <= r * 0.3 && dx.abs() <= r)
        }
        Shape::Ring => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (r * 0.55) * (r * 0.55)
        }
    }
}

/// Shape, sweep and tint indices of a class. Shape and sweep cycle
/// independently (5 and 12 are coprime), so the first 60 classes are
/// distinct pairs and the first 12 all move differently.
fn motif(class: usize) -> (usize, usize, usize) {
    let pairs = SHAPES.len() * SWEEPS.len();
    (
        class % SHAPES.len(),
        class % SWEEPS.len(),
        (class / pairs) % TINTS.len(),
    )
}

/// Renders one jittered instance of `class`'s motif as a 12-frame clip.
pub fn synthetic_clip<R: Rng + ?Sized>(class: usize, rng: &mut R) -> Vec<Frame> {
    let size = SYNTHETIC_FRAME_SIZE;
    let s = size as f32;
    let (shape, sweep, tint) = motif(class);
    let (shape, sweep, tint) = (SHAPES[shape], SWEEPS[sweep], TINTS[tint]);

    let background = rng.random_range(25.0..75.0f32);
    let color: Vec<f32> = tint
        .iter()
        .map(|c| (c + rng.random_range(-20.0..20.0f32)).clamp(0.0, 255.0))
        .collect();
    let radius = s * 0.11 * rng.random_range(0.85..1.15f32);
    let phase = rng.random_range(-0.05..0.05f32);
    let offset = (
        rng.random_range(-4.0..4.0f32),
        rng.random_range(-4.0..4.0f32),
    );

    let along = |t: f32, axis: usize| {
        let (a, b) = if axis == 0 {
            (sweep.from.0, sweep.to.0)
        } else {
            (sweep.from.1, sweep.to.1)
        };
        s * (a + (b - a) * t)
    };
    (0..CLIP_LEN)
        .map(|i| {
            let t = (i as f32 / (CLIP_LEN - 1) as f32 + phase).clamp(0.0, 1.0);
            let wobble = (
                rng.random_range(-1.0..1.0f32),
                rng.random_range(-1.0..1.0f32),
            );
            // Head first, then a fading motion trail behind it.
            let centres: Vec<(f32, f32, f32)> = [(0.0, 1.0), (0.09, 0.55), (0.18, 0.25)]
                .iter()
                .map(|&(lag, weight)| {
                    (
                        along(t - lag, 0) + offset.0 + wobble.0,
                        along(t - lag, 1) + offset.1 + wobble.1,
                        weight,
                    )
                })
                .collect();
            let mut pixels = Vec::with_capacity(size * size * 3);
            for y in 0..size {
                for x in 0..size {
                    let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                    let weight = centres
                        .iter()
                        .find(|(cx, cy, _)| covers(shape, px - cx, py - cy, radius))
                        .map_or(0.0, |c| c.2);
                    for &c in &color {
                        let base = background + (c - background) * weight;
                        let v = base + rng.random_range(-12.0..12.0f32);
                        pixels.push(v.clamp(0.0, 255.0).round() as u8);
                    }
                }
            }
            Frame::new(size, size, pixels)
                .expect("sized above")
                .with_source_index(i)
        })
        .collect()
}

/// `clips_per_class` jittered clips for each of `num_classes` distinct
/// moving-shape motifs, fully determined by `seed`.
pub fn generate_synthetic_dataset(
    num_classes: usize,
    clips_per_class: usize,
    seed: u64,
) -> Result<LabeledDataset, DatasetError> {
    if num_classes < 2 {
        return Err(DatasetError::TooFewClasses(num_classes));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(num_classes * clips_per_class);
    for label in 0..num_classes {
        for n in 0..clips_per_class {
            let frames = synthetic_clip(label, &mut rng);
            let clip = Clip::new(frames, format!("synthetic/{label}/{n}"), CLIP_LEN)?;
            items.push(LabeledClip { clip, label });
        }
    }
    LabeledDataset::new(items, synthetic_vocabulary(num_classes))
}

/// Back-to-back synthetic clips of the given classes as one frame stream,
/// with `source_index` numbering the whole stream.
pub fn synthetic_sequence(classes: &[usize], seed: u64) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    classes
        .iter()
        .flat_map(|&c| synthetic_clip(c, &mut rng))
        .enumerate()
        .map(|(i, f)| f.with_source_index(i))
        .collect()
}
