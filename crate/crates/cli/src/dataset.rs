//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/images/<id>.png   RGB
//! <root>/labels/<id>.png   16-bit instance ids, 0 = background
//! <root>/masks/<id>.png    8-bit grain mask
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use crystalseg::metrics::GrainClass;
use crystalseg::synth::SynthParams;
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        })
    }
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(format!("unknown split {s:?}; expected train, val or test")),
        }
    }
}

/// A split name or `all`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSelection(pub Option<SplitName>);

impl FromStr for SplitSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            return Ok(SplitSelection(None));
        }
        s.parse::<SplitName>()
            .map(|n| SplitSelection(Some(n)))
            .map_err(|_| format!("unknown split {s:?}; expected train, val, test or all"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    pub class: GrainClass,
    pub homogeneity: f64,
    pub split: SplitName,
    pub group: usize,
    /// Generator seed of this image.
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub split_fractions: [f64; 3],
    /// Some class had too few images to split and went entirely to train.
    pub split_warning: bool,
    /// Resolved generator parameters of each group (without per-image seed).
    pub groups: Vec<SynthParams>,
    pub images: Vec<ImageRecord>,
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Manifest> {
        let path = root.join(MANIFEST);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        let m: Manifest =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let mut ids: Vec<&str> = m.images.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            bail!("{}: duplicate image id {}", path.display(), w[0]);
        }
        Ok(m)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// Records of one split, or all records when `split` is `None`, in
    /// manifest order.
    pub fn select(&self, split: Option<SplitName>) -> Vec<&ImageRecord> {
        self.images
            .iter()
            .filter(|r| split.is_none_or(|s| r.split == s))
            .collect()
    }
}

pub fn image_id(index: usize) -> String {
    format!("img_{index:04}")
}

pub fn image_path(root: &Path, id: &str) -> PathBuf {
    root.join("images").join(format!("{id}.png"))
}

pub fn label_path(root: &Path, id: &str) -> PathBuf {
    root.join("labels").join(format!("{id}.png"))
}

pub fn mask_path(root: &Path, id: &str) -> PathBuf {
    root.join("masks").join(format!("{id}.png"))
}
