//! Line-oriented dataset description.
//!
//! Each non-comment line names one surface model:
//!
//! ```text
//! torus major=1 minor=0.3 seed=7 split=train patches=8 points=20000 gt=4096
//! ```
//!
//! `seed` and `split` are required; `patches`, `points` (dense samples per
//! model) and `gt` (points per patch) default to 100, 20000 and 4096.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rayon::prelude::*;

use super::patch::{extract_patch, Patch};
use super::surface::{sample_surface, SurfaceModel};
use crate::error::{invalid, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub model: SurfaceModel,
    pub seed: u64,
    pub split: Split,
    pub patches: usize,
    pub points: usize,
    pub gt_size: usize,
}

impl fmt::Display for ManifestEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} seed={} split={} patches={} points={} gt={}",
            self.model,
            self.seed,
            self.split.name(),
            self.patches,
            self.points,
            self.gt_size
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

fn parse_line(line: &str) -> std::result::Result<ManifestEntry, String> {
    let mut words = line.split_whitespace();
    let kind = words.next().ok_or("empty line")?;
    let mut kv: Vec<(&str, &str)> = Vec::new();
    for w in words {
        let (k, v) = w.split_once('=').ok_or_else(|| format!("expected key=value, found {w:?}"))?;
        if kv.iter().any(|(k2, _)| *k2 == k) {
            return Err(format!("duplicate key {k:?}"));
        }
        kv.push((k, v));
    }
    let get = |k: &str| kv.iter().find(|(k2, _)| *k2 == k).map(|(_, v)| *v);
    let int = |k: &str, default: Option<usize>| -> std::result::Result<usize, String> {
        match get(k) {
            Some(v) => v.parse().map_err(|_| format!("{k} must be a non-negative integer, got {v:?}")),
            None => default.ok_or_else(|| format!("missing {k}=")),
        }
    };
    let seed: u64 = get("seed")
        .ok_or("missing seed=")?
        .parse()
        .map_err(|_| "seed must be a non-negative integer".to_string())?;
    let split = match get("split") {
        Some("train") => Split::Train,
        Some("test") => Split::Test,
        Some(other) => return Err(format!("split must be train or test, got {other:?}")),
        None => return Err("missing split=".into()),
    };
    let patches = int("patches", Some(100))?;
    let points = int("points", Some(20_000))?;
    let gt_size = int("gt", Some(4096))?;

    const RESERVED: [&str; 5] = ["seed", "split", "patches", "points", "gt"];
    let mut model_params = Vec::new();
    for (k, v) in &kv {
        if RESERVED.contains(k) {
            continue;
        }
        let x: f64 = v.parse().map_err(|_| format!("parameter {k} must be a number, got {v:?}"))?;
        model_params.push((*k, x));
    }
    let model = SurfaceModel::from_parts(kind, |name| model_params.iter().find(|(k, _)| *k == name).map(|p| p.1))
        .map_err(|e| e.to_string())?;
    let known: Vec<&str> = model.params().iter().map(|p| p.0).collect();
    if let Some((k, _)) = model_params.iter().find(|(k, _)| !known.contains(k)) {
        return Err(format!("unknown parameter {k:?} for {kind}"));
    }
    if patches == 0 || gt_size == 0 {
        return Err("patches and gt must be positive".into());
    }
    if gt_size > points || patches > points {
        return Err(format!("points={points} is too small for gt={gt_size} and patches={patches}"));
    }
    Ok(ManifestEntry {
        model,
        seed,
        split,
        patches,
        points,
        gt_size,
    })
}

impl DatasetManifest {
    /// Parses manifest text; `path` is only used in error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            entries.push(parse_line(line).map_err(|msg| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            })?);
        }
        if entries.is_empty() {
            return Err(invalid!("{}: manifest lists no models", path.display()));
        }
        let m = Self { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(Error::file(path))?, path)
    }

    /// No model may appear in both splits.
    pub fn validate(&self) -> Result<()> {
        for t in self.split(Split::Test) {
            if let Some(tr) = self.split(Split::Train).find(|tr| tr.model == t.model) {
                return Err(invalid!("model '{}' appears in both train and test splits", tr.model));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Samples the model densely and cuts `patches` patches around distinct
/// random seed points. Deterministic in `entry.seed`.
pub fn generate_patches(entry: &ManifestEntry) -> Result<Vec<Patch>> {
    let dense = sample_surface(&entry.model, entry.points, rng::sub_seed(entry.seed, "surface"))?;
    let mut r = rng::rng(rng::sub_seed(entry.seed, "patch_seeds"));
    let seeds = index::sample(&mut r, dense.len(), entry.patches).into_vec();
    seeds.par_iter().map(|&s| extract_patch(&dense, s, entry.gt_size)).collect()
}

/// File name used for patch `j` of manifest entry `i`.
pub fn patch_file_name(split: Split, entry: usize, patch: usize) -> PathBuf {
    PathBuf::from(format!("{}_m{entry:03}_p{patch:03}.xyz", split.name()))
}
