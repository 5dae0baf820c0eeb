//! JSON dataset manifests: one record per instance, pointing at its
//! sequence and global feature files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mcsm_core::data::{Dataset, Instance, Modality, Split};

use crate::format::{read_features, write_features, FeatureMatrix, FormatError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub pair_id: String,
    pub label: u32,
    /// `"image"` or `"text"`.
    pub modality: String,
    /// `"train"`, `"val"` or `"test"`.
    pub split: String,
    pub sequence_path: PathBuf,
    pub global_path: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid manifest:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("{path}: {source}")]
    Feature {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error(transparent)]
    Dataset(#[from] mcsm_core::Error),
}

pub type Result<T, E = ManifestError> = std::result::Result<T, E>;

/// A parsed manifest whose records passed validation. Relative feature
/// paths are resolved against `root`, the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.root.join(p)
        }
    }

    /// Number of pairs per split.
    pub fn split_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.modality == "image") {
            *counts.entry(r.split.clone()).or_default() += 1;
        }
        counts
    }
}

/// Checks every record and the pairing invariant, collecting all problems
/// rather than stopping at the first.
pub fn validate(records: &[ManifestRecord], root: &Path) -> Vec<String> {
    let mut problems = Vec::new();
    let mut ids = BTreeSet::new();
    // pair id -> (image records, text records)
    let mut pairs: BTreeMap<&str, (Vec<&ManifestRecord>, Vec<&ManifestRecord>)> = BTreeMap::new();
    for r in records {
        if !ids.insert(r.id.as_str()) {
            problems.push(format!("duplicate id {:?}", r.id));
        }
        if r.split.parse::<Split>().is_err() {
            problems.push(format!("{:?}: unknown split {:?}", r.id, r.split));
        }
        let slot = pairs.entry(&r.pair_id).or_default();
        match r.modality.parse::<Modality>() {
            Ok(Modality::Image) => slot.0.push(r),
            Ok(Modality::Text) => slot.1.push(r),
            Err(_) => problems.push(format!("{:?}: unknown modality {:?}", r.id, r.modality)),
        }
        for p in [&r.sequence_path, &r.global_path] {
            let full = if p.is_absolute() { p.clone() } else { root.join(p) };
            if !full.is_file() {
                problems.push(format!("{:?}: missing file {}", r.id, full.display()));
            }
        }
    }
    for (pair, (images, texts)) in &pairs {
        match (images.len(), texts.len()) {
            (1, 1) => {
                let (i, t) = (images[0], texts[0]);
                if i.label != t.label {
                    problems.push(format!("pair {pair:?}: image label {} != text label {}", i.label, t.label));
                }
                if i.split != t.split {
                    problems.push(format!("pair {pair:?}: image in {:?}, text in {:?}", i.split, t.split));
                }
            }
            (0, _) | (_, 0) => problems.push(format!("dangling pair {pair:?}: {} image(s), {} text(s)", images.len(), texts.len())),
            (ni, nt) => problems.push(format!("pair {pair:?} has {ni} images and {nt} texts")),
        }
    }
    problems
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_owned(),
        source,
    })?;
    let records: Vec<ManifestRecord> = serde_json::from_str(&text).map_err(|source| ManifestError::Json {
        path: path.to_owned(),
        source,
    })?;
    let root = path.parent().map(Path::to_owned).unwrap_or_default();
    let problems = validate(&records, &root);
    if !problems.is_empty() {
        return Err(ManifestError::Invalid(problems));
    }
    Ok(Manifest { root, records })
}

fn feature(path: PathBuf) -> Result<FeatureMatrix> {
    read_features(&path).map_err(|source| ManifestError::Feature { path, source })
}

/// Loads every feature file of a validated manifest. Sequences are
/// zero-padded to the longest sequence of their modality.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest = load_manifest(path)?;
    let mut instances = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let global = feature(manifest.resolve(&r.global_path))?;
        let seq_path = manifest.resolve(&r.sequence_path);
        let sequence = feature(seq_path.clone())?;
        if global.rows != 1 && global.cols != 1 {
            return Err(ManifestError::Invalid(vec![format!(
                "{:?}: global feature must be a single row, found {}x{}",
                r.id, global.rows, global.cols
            )]));
        }
        let sequence = sequence
            .into_sequence()
            .map_err(|source| ManifestError::Feature { path: seq_path, source })?;
        let instance = Instance {
            id: r.id.clone(),
            pair_id: r.pair_id.clone(),
            label: r.label,
            modality: r.modality.parse()?,
            sequence,
            global: global.data,
        };
        instances.push((instance, r.split.parse()?));
    }
    let mut ds = Dataset::from_instances(instances)?;
    ds.pad_to_max()?;
    Ok(ds)
}

/// Writes one sequence and one global file per instance under
/// `dir/features/` and the manifest as `dir/manifest.json`, returning the
/// manifest path. Sequences are written without their padding.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    let features = dir.join("features");
    fs::create_dir_all(&features).map_err(|source| ManifestError::Io {
        path: features.clone(),
        source,
    })?;
    let mut records = Vec::with_capacity(2 * ds.pairs.len());
    let mut k = 0usize;
    for pair in &ds.pairs {
        for inst in [&pair.image, &pair.text] {
            let seq_rel = PathBuf::from(format!("features/{k:06}.seq.mcsf"));
            let glob_rel = PathBuf::from(format!("features/{k:06}.global.mcsf"));
            k += 1;
            let global = FeatureMatrix::new(1, inst.global.len(), inst.global.clone())
                .map_err(|source| ManifestError::Feature { path: glob_rel.clone(), source })?;
            for (rel, m) in [(&seq_rel, FeatureMatrix::from_sequence(&inst.sequence.unpadded())), (&glob_rel, global)] {
                let full = dir.join(rel);
                write_features(&full, &m).map_err(|source| ManifestError::Feature { path: full, source })?;
            }
            records.push(ManifestRecord {
                id: inst.id.clone(),
                pair_id: pair.pair_id.clone(),
                label: pair.label,
                modality: inst.modality.as_str().to_owned(),
                split: pair.split.as_str().to_owned(),
                sequence_path: seq_rel,
                global_path: glob_rel,
            });
        }
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&records).expect("records serialize");
    fs::write(&path, json + "\n").map_err(|source| ManifestError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}
