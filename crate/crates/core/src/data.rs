//! Instances, paired datasets, zero-padding with validity lengths, and the
//! synthetic paired-dataset generator used for desk-scale runs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Real, Result, Tensor};

/// A sequence of feature rows (image regions in row-major grid order, or
/// word vectors). Rows at and beyond `valid_len` are zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    valid_len: usize,
}

impl FeatureSequence {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>, valid_len: usize) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::EmptyInput("feature sequence"));
        }
        if data.len() != rows * dim {
            return Err(Error::dim(
                "feature sequence",
                format!("{rows}x{dim} needs {} values, got {}", rows * dim, data.len()),
            ));
        }
        if valid_len == 0 || valid_len > rows {
            return Err(Error::dim("feature sequence", format!("valid length {valid_len} of {rows}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue { op: "feature sequence" });
        }
        if data[valid_len * dim..].iter().any(|&v| v != 0.0) {
            return Err(Error::contract("padded rows must be zero"));
        }
        Ok(Self {
            rows,
            dim,
            data,
            valid_len,
        })
    }

    /// An unpadded sequence.
    pub fn from_rows(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(rows, dim, data, rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_parts(
            vec![self.rows, self.dim],
            self.data.iter().map(|&v| T::of_f32(v)).collect(),
        )
    }

    /// Appends zero rows up to `target` rows.
    pub fn padded(&self, target: usize) -> Result<Self> {
        if target < self.valid_len {
            return Err(Error::dim(
                "pad_and_mask",
                format!("target {target} below valid length {}", self.valid_len),
            ));
        }
        let mut data = self.data[..self.valid_len * self.dim].to_vec();
        data.resize(target * self.dim, 0.0);
        Ok(Self {
            rows: target,
            dim: self.dim,
            data,
            valid_len: self.valid_len,
        })
    }

    /// The valid prefix without padding.
    pub fn unpadded(&self) -> Self {
        Self {
            rows: self.valid_len,
            dim: self.dim,
            data: self.data[..self.valid_len * self.dim].to_vec(),
            valid_len: self.valid_len,
        }
    }
}

/// Zero-pads every sequence to `target` rows, keeping valid lengths.
pub fn pad_and_mask(seqs: &[FeatureSequence], target: usize) -> Result<Vec<FeatureSequence>> {
    seqs.iter().map(|s| s.padded(target)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub pair_id: String,
    pub label: u32,
    pub modality: Modality,
    pub sequence: FeatureSequence,
    pub global: Vec<f32>,
}

/// A matched image/text pair. Both members carry the pair's label.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub pair_id: String,
    pub label: u32,
    pub split: Split,
    pub image: Instance,
    pub text: Instance,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub pairs: Vec<Pair>,
}

impl Dataset {
    /// Groups instance records into pairs, in order of first appearance of
    /// each pair id. Fails listing every offending record if any id is
    /// duplicated, a pair lacks one modality or has two of one, or the two
    /// members disagree on label or split.
    pub fn from_instances(records: Vec<(Instance, Split)>) -> Result<Self> {
        let mut problems = Vec::new();
        let mut seen_ids = BTreeSet::new();
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<(Instance, Split)>> = BTreeMap::new();
        for (inst, split) in records {
            if !seen_ids.insert(inst.id.clone()) {
                problems.push(format!("duplicate id {:?}", inst.id));
                continue;
            }
            let entry = groups.entry(inst.pair_id.clone()).or_default();
            if entry.is_empty() {
                order.push(inst.pair_id.clone());
            }
            entry.push((inst, split));
        }
        let mut pairs = Vec::with_capacity(order.len());
        for pid in order {
            let mut members = groups.remove(&pid).unwrap_or_default();
            let images = members.iter().filter(|(i, _)| i.modality == Modality::Image).count();
            let texts = members.len() - images;
            if images != 1 || texts != 1 {
                problems.push(format!(
                    "dangling pair {pid:?}: {images} image(s), {texts} text(s)"
                ));
                continue;
            }
            members.sort_by_key(|(i, _)| i.modality);
            let (text, tsplit) = members.pop().unwrap();
            let (image, isplit) = members.pop().unwrap();
            if image.label != text.label {
                problems.push(format!(
                    "pair {pid:?}: image label {} vs text label {}",
                    image.label, text.label
                ));
                continue;
            }
            if isplit != tsplit {
                problems.push(format!("pair {pid:?}: members assigned to different splits"));
                continue;
            }
            pairs.push(Pair {
                pair_id: pid,
                label: image.label,
                split: isplit,
                image,
                text,
            });
        }
        if problems.is_empty() {
            Ok(Self { pairs })
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn split(&self, split: Split) -> Vec<&Pair> {
        self.pairs.iter().filter(|p| p.split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.pairs.iter().filter(|p| p.split == split).count()
    }

    /// Zero-pads image sequences to the longest image sequence and text
    /// sequences to the longest text sequence in the dataset.
    pub fn pad_to_max(&mut self) -> Result<()> {
        let max_img = self.pairs.iter().map(|p| p.image.sequence.valid_len()).max().unwrap_or(0);
        let max_txt = self.pairs.iter().map(|p| p.text.sequence.valid_len()).max().unwrap_or(0);
        for p in &mut self.pairs {
            p.image.sequence = p.image.sequence.padded(max_img)?;
            p.text.sequence = p.text.sequence.padded(max_txt)?;
        }
        Ok(())
    }
}

/// Parameters of [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub categories: usize,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub test_pairs: usize,
    /// Images are `grid_size × grid_size` regions.
    pub grid_size: usize,
    pub region_dim: usize,
    pub word_dim: usize,
    /// Width of both global features; must equal the model's target width.
    pub global_dim: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub latent_dim: usize,
    /// Standard deviation of the pair offset and of every per-row noise term.
    pub noise: f64,
    /// Multiplies every linear map.
    pub scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            categories: 10,
            train_pairs: 50,
            val_pairs: 5,
            test_pairs: 10,
            grid_size: 3,
            region_dim: 16,
            word_dim: 16,
            global_dim: 64,
            min_words: 6,
            max_words: 12,
            latent_dim: 8,
            noise: 0.2,
            scale: 10.0,
            seed: 7,
        }
    }
}

struct LinearMap {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LinearMap {
    fn random<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let std = scale / libm::sqrt(cols as f64);
        let data = (0..rows * cols)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { rows, cols, data }
    }

    /// `A z + noise · ε`, rounded to f32.
    fn apply<R: Rng>(&self, z: &[f64], noise: f64, rng: &mut R, out: &mut Vec<f32>) {
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let v: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
            let eps: f64 = rng.sample(StandardNormal);
            out.push((v + noise * eps) as f32);
        }
    }
}

/// Paired dataset whose categories are well-separated latent centers.
///
/// Each pair draws a latent code `z = center + noise · δ`; every image
/// region, image global, word vector and text global is a fixed random
/// linear map of `z` (one map per kind) plus independent noise. Text lengths
/// are uniform in `[min_words, max_words]` and texts are zero-padded to
/// `max_words`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.categories < 2 {
        return Err(Error::contract("synthetic data needs at least two categories"));
    }
    if cfg.grid_size == 0
        || cfg.region_dim == 0
        || cfg.word_dim == 0
        || cfg.global_dim == 0
        || cfg.latent_dim == 0
        || cfg.min_words == 0
        || cfg.max_words < cfg.min_words
    {
        return Err(Error::contract(format!("invalid synthetic configuration {cfg:?}")));
    }
    if !(cfg.noise >= 0.0) || !(cfg.scale > 0.0) {
        return Err(Error::contract("noise must be non-negative and scale positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let l = cfg.latent_dim;
    let centers: Vec<Vec<f64>> = (0..cfg.categories)
        .map(|_| (0..l).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let region_map = LinearMap::random(cfg.region_dim, l, cfg.scale, &mut rng);
    let image_global_map = LinearMap::random(cfg.global_dim, l, cfg.scale, &mut rng);
    let word_map = LinearMap::random(cfg.word_dim, l, cfg.scale, &mut rng);
    let text_global_map = LinearMap::random(cfg.global_dim, l, cfg.scale, &mut rng);
    let regions = cfg.grid_size * cfg.grid_size;

    let mut pairs = Vec::new();
    for (split, count) in [
        (Split::Train, cfg.train_pairs),
        (Split::Val, cfg.val_pairs),
        (Split::Test, cfg.test_pairs),
    ] {
        for (label, center) in centers.iter().enumerate() {
            for _ in 0..count {
                let k = pairs.len();
                let z: Vec<f64> = center
                    .iter()
                    .map(|&c| c + cfg.noise * rng.sample::<f64, _>(StandardNormal))
                    .collect();

                let mut img = Vec::with_capacity(regions * cfg.region_dim);
                for _ in 0..regions {
                    region_map.apply(&z, cfg.noise, &mut rng, &mut img);
                }
                let mut img_global = Vec::with_capacity(cfg.global_dim);
                image_global_map.apply(&z, cfg.noise, &mut rng, &mut img_global);

                let words = rng.random_range(cfg.min_words..=cfg.max_words);
                let mut txt = Vec::with_capacity(words * cfg.word_dim);
                for _ in 0..words {
                    word_map.apply(&z, cfg.noise, &mut rng, &mut txt);
                }
                let mut txt_global = Vec::with_capacity(cfg.global_dim);
                text_global_map.apply(&z, cfg.noise, &mut rng, &mut txt_global);

                let pair_id = format!("pair-{k:05}");
                let label = label as u32;
                pairs.push(Pair {
                    pair_id: pair_id.clone(),
                    label,
                    split,
                    image: Instance {
                        id: format!("img-{k:05}"),
                        pair_id: pair_id.clone(),
                        label,
                        modality: Modality::Image,
                        sequence: FeatureSequence::from_rows(regions, cfg.region_dim, img)?,
                        global: img_global,
                    },
                    text: Instance {
                        id: format!("txt-{k:05}"),
                        pair_id,
                        label,
                        modality: Modality::Text,
                        sequence: FeatureSequence::from_rows(words, cfg.word_dim, txt)?
                            .padded(cfg.max_words)?,
                        global: txt_global,
                    },
                });
            }
        }
    }
    Ok(Dataset { pairs })
}

impl core::fmt::Display for Split {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::contract(format!("unknown split {other:?}"))),
        }
    }
}

impl core::str::FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Modality::Image),
            "text" => Ok(Modality::Text),
            other => Err(Error::contract(format!("unknown modality {other:?}"))),
        }
    }
}
