use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::netpbm::{load_image, to_tensor};
use super::{make_state_pair, DataError, StatePair};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            other => Err(DataError::Manifest(format!("unknown split {other:?}"))),
        }
    }
}

/// One patch: the source image (relative to the manifest directory) and the
/// top-left corner of the `patch_size × patch_size` crop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub origin_x: usize,
    pub origin_y: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub patch_size: usize,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_HEADER: &str = "path,origin_x,origin_y,split";

impl DatasetManifest {
    /// Number of leading entries assigned to the training split.
    pub fn train_count(count: usize, train_fraction: f64) -> usize {
        ((count as f64 * train_fraction).round() as usize).min(count)
    }

    /// Non-overlapping tiles of a `width × height` image, split in raster order.
    pub fn tile(path: &str, width: usize, height: usize, patch_size: usize, train_fraction: f64) -> Self {
        let mut entries = Vec::new();
        for oy in (0..=height.saturating_sub(patch_size)).step_by(patch_size.max(1)) {
            for ox in (0..=width.saturating_sub(patch_size)).step_by(patch_size.max(1)) {
                if oy + patch_size <= height && ox + patch_size <= width {
                    entries.push(ManifestEntry {
                        path: path.to_owned(),
                        origin_x: ox,
                        origin_y: oy,
                        split: Split::Train,
                    });
                }
            }
        }
        let n_train = Self::train_count(entries.len(), train_fraction);
        for e in &mut entries[n_train..] {
            e.split = Split::Test;
        }
        Self { patch_size, entries }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{}\n", e.path, e.origin_x, e.origin_y, e.split));
        }
        out
    }

    pub fn parse_csv(text: &str, patch_size: usize) -> Result<Self, DataError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == MANIFEST_HEADER => {}
            other => {
                return Err(DataError::Manifest(format!(
                    "expected header {MANIFEST_HEADER:?}, found {other:?}"
                )))
            }
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let fields: Vec<&str> = line.trim().split(',').collect();
            let [path, ox, oy, split] = fields[..] else {
                return Err(DataError::Manifest(format!("line {}: expected 4 fields", n + 2)));
            };
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| DataError::Manifest(format!("line {}: bad origin {s:?}", n + 2)))
            };
            entries.push(ManifestEntry {
                path: path.to_owned(),
                origin_x: num(ox)?,
                origin_y: num(oy)?,
                split: split.parse()?,
            });
        }
        Ok(Self { patch_size, entries })
    }

    /// Loads the HR crop of entry `index` from `dir`.
    pub fn load_patch(&self, dir: &Path, index: usize) -> Result<Tensor, DataError> {
        let e = &self.entries[index];
        let img = to_tensor(&load_image(dir.join(&e.path))?);
        let p = self.patch_size;
        if e.origin_y + p > img.height() || e.origin_x + p > img.width() {
            return Err(DataError::Manifest(format!(
                "{}: crop {}x{} at ({}, {}) exceeds {}x{} image",
                e.path,
                p,
                p,
                e.origin_x,
                e.origin_y,
                img.width(),
                img.height()
            )));
        }
        Ok(Tensor::from_fn(p, p, img.channels(), |y, x, c| {
            img.get(e.origin_y + y, e.origin_x + x, c)
        }))
    }

    /// State pairs for every entry of `split`; `id` is the manifest row index.
    pub fn load_pairs(&self, dir: &Path, split: Split) -> Result<Vec<StatePair>, DataError> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| make_state_pair(&self.load_patch(dir, i)?, i))
            .collect()
    }
}
