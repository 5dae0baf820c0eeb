//! One modality-specific semantic space: the anchor modality runs through
//! its recurrent attention network, the other modality contributes a single
//! global vector, and the cross-modal similarity is the attended sum dotted
//! with that vector.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{attended_sum, attention_weights, AttentionParams};
use crate::data::{FeatureSequence, Instance};
use crate::encoders::{
    conv_output_len, encode_text_global, lstm_stack, min_conv_input_len, project_rows, temporal_conv_block,
    ConvBlockParams, ConvLayerSpec, Linear, LstmParams,
};
use crate::numcore::ops;
use crate::{Error, Graph, ParamStore, Real, Result, Tensor, Var};

/// Which modality's fine-grained sequence anchors the space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    /// Image regions are encoded; texts contribute a global vector.
    Image,
    /// Text fragments are encoded; images contribute their global feature.
    Text,
}

impl SpaceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SpaceKind::Image => "image",
            SpaceKind::Text => "text",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            SpaceKind::Image => 0,
            SpaceKind::Text => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SpaceKind::Image),
            1 => Some(SpaceKind::Text),
            _ => None,
        }
    }
}

/// Dimensions and layer layout of one semantic space.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceConfig {
    pub kind: SpaceKind,
    /// Row width of the anchor sequence: region width for the image space,
    /// word-vector width for the text space.
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    /// Width of the projected hidden states and of the opposite global vector.
    pub target_dim: usize,
    pub lstm_layers: usize,
    pub grid_size: usize,
    /// Temporal convolution layers (text space only).
    pub conv: Vec<ConvLayerSpec>,
    /// Input width of the opposite-modality global path: word-vector width
    /// for the image space, image global width (= `target_dim`) for the
    /// text space.
    pub global_input_dim: usize,
}

/// Desk-scale temporal convolution block: needs at least five words.
pub fn default_conv_layers(channels: usize) -> Vec<ConvLayerSpec> {
    vec![
        ConvLayerSpec { channels, width: 2, pool: 1 },
        ConvLayerSpec { channels, width: 2, pool: 1 },
        ConvLayerSpec { channels, width: 2, pool: 2 },
    ]
}

impl SpaceConfig {
    /// Image-anchored space over `region_dim`-wide regions, scoring texts
    /// whose words are `word_dim` wide.
    pub fn image(region_dim: usize, word_dim: usize, target_dim: usize) -> Self {
        Self {
            kind: SpaceKind::Image,
            feature_dim: region_dim,
            hidden_dim: region_dim,
            attention_dim: region_dim,
            target_dim,
            lstm_layers: 1,
            grid_size: 3,
            conv: Vec::new(),
            global_input_dim: word_dim,
        }
    }

    /// Text-anchored space over `word_dim`-wide words, scoring images whose
    /// global feature is `target_dim` wide.
    pub fn text(word_dim: usize, target_dim: usize) -> Self {
        Self {
            kind: SpaceKind::Text,
            feature_dim: word_dim,
            hidden_dim: word_dim,
            attention_dim: word_dim,
            target_dim,
            lstm_layers: 1,
            grid_size: 0,
            conv: default_conv_layers(word_dim),
            global_input_dim: target_dim,
        }
    }

    pub fn with_hidden(mut self, hidden_dim: usize) -> Self {
        self.hidden_dim = hidden_dim;
        self.attention_dim = hidden_dim;
        self
    }

    /// The six values recorded in checkpoint headers: feature, hidden,
    /// attention and target widths, conv layer count, grid size.
    pub fn header_dims(&self) -> [u32; 6] {
        [
            self.feature_dim as u32,
            self.hidden_dim as u32,
            self.attention_dim as u32,
            self.target_dim as u32,
            self.conv.len() as u32,
            self.grid_size as u32,
        ]
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::contract(format!("space config: {msg}")));
        if self.feature_dim == 0 || self.hidden_dim == 0 || self.target_dim == 0 || self.global_input_dim == 0 {
            return bad("zero width");
        }
        if self.attention_dim == 0 {
            return bad("attention_dim must be at least 1");
        }
        if self.lstm_layers == 0 {
            return bad("at least one LSTM unit is required");
        }
        match self.kind {
            SpaceKind::Image if !self.conv.is_empty() => bad("the image space has no convolution block"),
            SpaceKind::Text if self.conv.is_empty() => bad("the text space needs a convolution block"),
            SpaceKind::Text if self.global_input_dim != self.target_dim => {
                bad("image global width must equal target_dim")
            }
            _ => Ok(()),
        }
    }
}

/// All trainable parameters of one semantic space.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticSpaceModel<T> {
    config: SpaceConfig,
    store: ParamStore<T>,
    lstm: Vec<LstmParams>,
    projection: Linear,
    attention: AttentionParams,
    conv: Option<ConvBlockParams>,
    text_global: Option<Linear>,
}

impl<T: Real> SemanticSpaceModel<T> {
    /// Fresh model with seeded Glorot initialization.
    pub fn new(config: SpaceConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let conv = match config.kind {
            SpaceKind::Text => Some(ConvBlockParams::init(
                &mut store,
                "conv",
                config.feature_dim,
                &config.conv,
                &mut rng,
            )?),
            SpaceKind::Image => None,
        };
        let mut width = conv.as_ref().map_or(config.feature_dim, |c| c.output_dim);
        let mut lstm = Vec::with_capacity(config.lstm_layers);
        for l in 0..config.lstm_layers {
            lstm.push(LstmParams::init(&mut store, &format!("lstm.{l}"), width, config.hidden_dim, &mut rng)?);
            width = config.hidden_dim;
        }
        let projection = Linear::init(&mut store, "proj", config.hidden_dim, config.target_dim, &mut rng)?;
        let attention = AttentionParams::init(&mut store, "attn", config.target_dim, config.attention_dim, &mut rng)?;
        let text_global = match config.kind {
            SpaceKind::Image => Some(Linear::init(
                &mut store,
                "text_global",
                config.global_input_dim,
                config.target_dim,
                &mut rng,
            )?),
            SpaceKind::Text => None,
        };
        Ok(Self {
            config,
            store,
            lstm,
            projection,
            attention,
            conv,
            text_global,
        })
    }

    /// Rebuilds a model around loaded parameters, re-deriving the layer
    /// layout from tensor names and shapes and checking it against `dims`
    /// (see [`SpaceConfig::header_dims`]).
    pub fn from_store(kind: SpaceKind, dims: [u32; 6], conv_pools: &[usize], store: ParamStore<T>) -> Result<Self> {
        let [feature_dim, hidden_dim, attention_dim, target_dim, conv_count, grid_size] = dims.map(|d| d as usize);
        if conv_pools.len() != conv_count {
            return Err(Error::dim(
                "checkpoint",
                format!("{conv_count} conv layers but {} pool widths", conv_pools.len()),
            ));
        }
        let conv = match kind {
            SpaceKind::Text => Some(ConvBlockParams::from_store(&store, "conv", conv_pools)?),
            SpaceKind::Image if conv_count == 0 => None,
            SpaceKind::Image => return Err(Error::contract("image space checkpoint lists conv layers")),
        };
        let mut lstm = Vec::new();
        while store.id(&format!("lstm.{}.w_input", lstm.len())).is_some() {
            lstm.push(LstmParams::from_store(&store, &format!("lstm.{}", lstm.len()))?);
        }
        let projection = Linear::from_store(&store, "proj")?;
        let attention = AttentionParams::from_store(&store, "attn")?;
        let text_global = match kind {
            SpaceKind::Image => Some(Linear::from_store(&store, "text_global")?),
            SpaceKind::Text => None,
        };
        let config = SpaceConfig {
            kind,
            feature_dim,
            hidden_dim,
            attention_dim,
            target_dim,
            lstm_layers: lstm.len(),
            grid_size,
            conv: conv.as_ref().map(|c| c.specs(&store)).unwrap_or_default(),
            global_input_dim: text_global.as_ref().map_or(target_dim, |g| g.input_dim),
        };
        config.validate()?;

        let mut width = conv.as_ref().map_or(feature_dim, |c| c.output_dim);
        if let Some(c) = &conv {
            if c.input_dim != feature_dim {
                return Err(Error::dim("checkpoint", "conv input width differs from feature_dim"));
            }
        }
        for l in &lstm {
            if l.input_dim != width || l.hidden_dim != hidden_dim {
                return Err(Error::dim("checkpoint", "LSTM widths disagree with the header"));
            }
            width = l.hidden_dim;
        }
        if projection.input_dim != hidden_dim || projection.output_dim != target_dim {
            return Err(Error::dim("checkpoint", "projection widths disagree with the header"));
        }
        if attention.input_dim != target_dim || attention.attention_dim != attention_dim {
            return Err(Error::dim("checkpoint", "attention widths disagree with the header"));
        }
        if let Some(g) = &text_global {
            if g.output_dim != target_dim {
                return Err(Error::dim("checkpoint", "text global width disagrees with target_dim"));
            }
        }
        Ok(Self {
            config,
            store,
            lstm,
            projection,
            attention,
            conv,
            text_global,
        })
    }

    pub fn config(&self) -> &SpaceConfig {
        &self.config
    }

    pub fn kind(&self) -> SpaceKind {
        self.config.kind
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore<T> {
        self.store
    }

    pub fn lstm(&self) -> &[LstmParams] {
        &self.lstm
    }

    pub fn projection(&self) -> &Linear {
        &self.projection
    }

    pub fn attention(&self) -> &AttentionParams {
        &self.attention
    }

    pub fn conv(&self) -> Option<&ConvBlockParams> {
        self.conv.as_ref()
    }

    pub fn text_global(&self) -> Option<&Linear> {
        self.text_global.as_ref()
    }

    /// Pool widths of the conv block, in layer order.
    pub fn conv_pools(&self) -> Vec<usize> {
        self.conv
            .as_ref()
            .map(|c| c.layers.iter().map(|l| l.pool).collect())
            .unwrap_or_default()
    }

    /// Same model in another scalar width.
    pub fn cast<U: Real>(&self) -> SemanticSpaceModel<U> {
        SemanticSpaceModel {
            config: self.config.clone(),
            store: self.store.cast(),
            lstm: self.lstm.clone(),
            projection: self.projection.clone(),
            attention: self.attention.clone(),
            conv: self.conv.clone(),
            text_global: self.text_global.clone(),
        }
    }

    /// Projected hidden states `[n, target]`, their attention weights, and
    /// the number of valid positions for an anchor-modality sequence.
    pub fn anchor_states(&self, g: &mut Graph<'_, T>, seq: &FeatureSequence) -> Result<AnchorStates> {
        if seq.dim() != self.config.feature_dim {
            return Err(Error::dim(
                "anchor sequence",
                format!("row width {}, model expects {}", seq.dim(), self.config.feature_dim),
            ));
        }
        let x = g.constant(seq.to_tensor());
        let (input, valid) = match &self.conv {
            Some(conv) => {
                let specs = &self.config.conv;
                let valid = conv_output_len(seq.valid_len(), specs).ok_or(Error::TooShort {
                    len: seq.valid_len(),
                    needed: min_conv_input_len(specs),
                })?;
                (temporal_conv_block(g, conv, x)?, valid)
            }
            None => (x, seq.valid_len()),
        };
        let hidden = lstm_stack(g, &self.lstm, input)?;
        let projected = project_rows(g, &self.projection, hidden)?;
        let weights = attention_weights(g, &self.attention, projected, valid)?;
        Ok(AnchorStates {
            projected,
            weights,
            valid,
        })
    }

    /// `Σ_j a_j h_j` for an anchor-modality sequence.
    pub fn anchor_vector(&self, g: &mut Graph<'_, T>, seq: &FeatureSequence) -> Result<Var> {
        let s = self.anchor_states(g, seq)?;
        attended_sum(g, s.projected, s.weights)
    }

    /// The opposite modality's global vector: for the image space the
    /// projected mean word vector of a text, for the text space the
    /// ingested global feature of an image.
    pub fn opposite_global(&self, g: &mut Graph<'_, T>, inst: &Instance) -> Result<Var> {
        match (&self.text_global, self.config.kind) {
            (Some(proj), SpaceKind::Image) => {
                let seq = &inst.sequence;
                if seq.dim() != proj.input_dim {
                    return Err(Error::dim(
                        "text global",
                        format!("word width {}, model expects {}", seq.dim(), proj.input_dim),
                    ));
                }
                let words = g.constant(seq.to_tensor());
                encode_text_global(g, proj, words, seq.valid_len())
            }
            _ => {
                if inst.global.len() != self.config.target_dim {
                    return Err(Error::dim(
                        "image global",
                        format!("width {}, model expects {}", inst.global.len(), self.config.target_dim),
                    ));
                }
                Ok(g.constant(Tensor::from_f32(&[inst.global.len()], &inst.global)?))
            }
        }
    }

    /// Cross-modal similarity of one image/text pair in this space.
    pub fn pair_similarity(&self, g: &mut Graph<'_, T>, image: &Instance, text: &Instance) -> Result<Var> {
        match self.config.kind {
            SpaceKind::Image => {
                let q = self.opposite_global(g, text)?;
                sim_image_space(g, self, &image.sequence, q)
            }
            SpaceKind::Text => {
                let q = self.opposite_global(g, image)?;
                sim_text_space(g, self, &text.sequence, q)
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AnchorStates {
    pub projected: Var,
    pub weights: Var,
    pub valid: usize,
}

/// Image-space similarity `Σ_j a_j h_j · q_t` for an image region sequence
/// and a text global vector.
pub fn sim_image_space<T: Real>(
    g: &mut Graph<'_, T>,
    model: &SemanticSpaceModel<T>,
    image_seq: &FeatureSequence,
    text_global: Var,
) -> Result<Var> {
    if model.kind() != SpaceKind::Image {
        return Err(Error::contract("sim_image_space needs an image-anchored model"));
    }
    let v = model.anchor_vector(g, image_seq)?;
    g.dot(v, text_global)
}

/// Text-space similarity `Σ_j a_j h_j · q_i` for a word sequence and an
/// image global vector.
pub fn sim_text_space<T: Real>(
    g: &mut Graph<'_, T>,
    model: &SemanticSpaceModel<T>,
    text_words: &FeatureSequence,
    image_global: Var,
) -> Result<Var> {
    if model.kind() != SpaceKind::Text {
        return Err(Error::contract("sim_text_space needs a text-anchored model"));
    }
    let v = model.anchor_vector(g, text_words)?;
    g.dot(v, image_global)
}

/// Producer of a similarity matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceTag {
    /// `sim_i`, image semantic space.
    ImageSpace,
    /// `sim_t`, text semantic space.
    TextSpace,
    /// Adaptive fusion of both spaces.
    Fused,
    /// Unweighted average of both spaces.
    LateFused,
}

impl SpaceTag {
    pub fn label(self) -> &'static str {
        match self {
            SpaceTag::ImageSpace => "MCSM-image",
            SpaceTag::TextSpace => "MCSM-text",
            SpaceTag::LateFused => "MCSM-LF",
            SpaceTag::Fused => "MCSM",
        }
    }
}

impl From<SpaceKind> for SpaceTag {
    fn from(k: SpaceKind) -> Self {
        match k {
            SpaceKind::Image => SpaceTag::ImageSpace,
            SpaceKind::Text => SpaceTag::TextSpace,
        }
    }
}

/// Scores of image queries (rows) against text candidates (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    pub tag: SpaceTag,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, tag: SpaceTag) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyInput("similarity matrix"));
        }
        if data.len() != rows * cols {
            return Err(Error::dim(
                "similarity matrix",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue { op: "similarity matrix" });
        }
        Ok(Self { rows, cols, data, tag })
    }

    pub fn from_fn(rows: usize, cols: usize, tag: SpaceTag, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
        Self::new(rows, cols, data, tag)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn with_tag(mut self, tag: SpaceTag) -> Self {
        self.tag = tag;
        self
    }

    /// Applies `f` to every entry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect(), self.tag)
    }
}

/// Similarity of every image against every text under one space.
///
/// Each anchor sequence and each global vector is encoded once; entry
/// `(p, q)` equals [`SemanticSpaceModel::pair_similarity`] for image `p` and
/// text `q`.
pub fn similarity_matrix<T: Real>(
    model: &SemanticSpaceModel<T>,
    images: &[&Instance],
    texts: &[&Instance],
) -> Result<SimilarityMatrix> {
    if images.is_empty() || texts.is_empty() {
        return Err(Error::EmptyInput("similarity_matrix"));
    }
    let (anchors, others) = match model.kind() {
        SpaceKind::Image => (images, texts),
        SpaceKind::Text => (texts, images),
    };
    let encode = |f: &dyn Fn(&mut Graph<'_, T>) -> Result<Var>| -> Result<Tensor<T>> {
        let mut g = Graph::new(model.store());
        let v = f(&mut g)?;
        Ok(g.value(v).clone())
    };
    let anchor_vecs = anchors
        .iter()
        .map(|inst| encode(&|g| model.anchor_vector(g, &inst.sequence)))
        .collect::<Result<Vec<_>>>()?;
    let other_vecs = others
        .iter()
        .map(|inst| encode(&|g| model.opposite_global(g, inst)))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(images.len() * texts.len());
    for p in 0..images.len() {
        for q in 0..texts.len() {
            let (a, o) = match model.kind() {
                SpaceKind::Image => (&anchor_vecs[p], &other_vecs[q]),
                SpaceKind::Text => (&anchor_vecs[q], &other_vecs[p]),
            };
            data.push(ops::dot(a, o)?.item()?.as_f64());
        }
    }
    SimilarityMatrix::new(images.len(), texts.len(), data, model.kind().into())
}

impl core::fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for SpaceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(SpaceKind::Image),
            "text" => Ok(SpaceKind::Text),
            other => Err(Error::contract(format!("unknown space {other:?}"))),
        }
    }
}
