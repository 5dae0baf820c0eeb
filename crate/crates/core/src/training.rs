//! Triplet sampling, the attention-based joint embedding losses and the
//! plain SGD training loop.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Pair;
use crate::fusion::{retrieval_eval, Direction};
use crate::space::{similarity_matrix, SemanticSpaceModel, SpaceKind};
use crate::{Error, Graph, Real, Result, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Margin of the image-space loss.
    pub margin_image: f64,
    /// Margin of the text-space loss.
    pub margin_text: f64,
    pub triplets_per_step: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Validation MAP is recorded every this many steps; 0 disables it.
    pub validation_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            margin_image: 0.5,
            margin_text: 0.5,
            triplets_per_step: 64,
            max_iterations: 2000,
            seed: 0,
            validation_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::contract("learning rate must be finite and non-negative"));
        }
        if !(self.margin_image >= 0.0 && self.margin_text >= 0.0) {
            return Err(Error::contract("margins must be non-negative"));
        }
        if self.triplets_per_step == 0 {
            return Err(Error::contract("triplets_per_step must be at least 1"));
        }
        Ok(())
    }

    pub fn margin(&self, kind: SpaceKind) -> f64 {
        match kind {
            SpaceKind::Image => self.margin_image,
            SpaceKind::Text => self.margin_text,
        }
    }
}

/// Which member of the matched pair is the anchor of a triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripletDirection {
    /// Anchor image, positive text, negative text.
    ImageAnchored,
    /// Anchor text, positive image, negative image.
    TextAnchored,
}

/// Pair indices of one directional triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub direction: TripletDirection,
}

/// A matched pair with one mismatched text and one mismatched image, each
/// drawn from a pair of a different category. Indices refer to the pair
/// list the tuple was sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletTuple {
    pub pair: usize,
    pub text_negative: usize,
    pub image_negative: usize,
}

impl TripletTuple {
    pub fn triplets(&self) -> [Triplet; 2] {
        [
            Triplet {
                anchor: self.pair,
                positive: self.pair,
                negative: self.text_negative,
                direction: TripletDirection::ImageAnchored,
            },
            Triplet {
                anchor: self.pair,
                positive: self.pair,
                negative: self.image_negative,
                direction: TripletDirection::TextAnchored,
            },
        ]
    }
}

/// `max(0, margin - matched + mismatched)`.
pub fn hinge_term(sim_matched: f64, sim_mismatched: f64, margin: f64) -> f64 {
    (margin - sim_matched + sim_mismatched).max(0.0)
}

/// [`hinge_term`] on recorded scalars.
pub fn hinge<T: Real>(g: &mut Graph<'_, T>, matched: Var, mismatched: Var, margin: T) -> Result<Var> {
    let diff = g.sub(mismatched, matched)?;
    let shifted = g.offset(diff, margin)?;
    g.relu(shifted)
}

/// Draws `count` tuples: the matched pair uniformly, then a text negative
/// and an image negative independently and uniformly among pairs whose
/// label differs from the matched pair's.
pub fn sample_triplets<R: Rng + ?Sized>(labels: &[u32], count: usize, rng: &mut R) -> Result<Vec<TripletTuple>> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("sample_triplets"));
    }
    let mut negatives: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &l in labels {
        negatives.entry(l).or_default();
    }
    for (i, &l) in labels.iter().enumerate() {
        for (&other, pool) in negatives.iter_mut() {
            if other != l {
                pool.push(i);
            }
        }
    }
    if negatives.len() < 2 {
        return Err(Error::NoNegative);
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let pair = rng.random_range(0..labels.len());
        let pool = &negatives[&labels[pair]];
        let text_negative = pool[rng.random_range(0..pool.len())];
        let image_negative = pool[rng.random_range(0..pool.len())];
        out.push(TripletTuple {
            pair,
            text_negative,
            image_negative,
        });
    }
    Ok(out)
}

/// Mean over tuples of the two hinge terms, using the model's own space.
pub fn triplet_loss<T: Real>(
    g: &mut Graph<'_, T>,
    model: &SemanticSpaceModel<T>,
    pairs: &[&Pair],
    batch: &[TripletTuple],
    margin: f64,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::contract("loss of an empty batch"));
    }
    let margin = T::of_f64(margin);
    let get = |i: usize| {
        pairs
            .get(i)
            .copied()
            .ok_or_else(|| Error::contract(format!("tuple refers to pair {i} of {}", pairs.len())))
    };
    let mut terms = Vec::with_capacity(2 * batch.len());
    for t in batch {
        let (pos, neg_text, neg_image) = (get(t.pair)?, get(t.text_negative)?, get(t.image_negative)?);
        // Anchor-side encodings are shared by the terms that use them.
        let (matched, with_neg_text, with_neg_image) = match model.kind() {
            SpaceKind::Image => {
                let a_pos = model.anchor_vector(g, &pos.image.sequence)?;
                let a_neg = model.anchor_vector(g, &neg_image.image.sequence)?;
                let q_pos = model.opposite_global(g, &pos.text)?;
                let q_neg = model.opposite_global(g, &neg_text.text)?;
                (g.dot(a_pos, q_pos)?, g.dot(a_pos, q_neg)?, g.dot(a_neg, q_pos)?)
            }
            SpaceKind::Text => {
                let a_pos = model.anchor_vector(g, &pos.text.sequence)?;
                let a_neg = model.anchor_vector(g, &neg_text.text.sequence)?;
                let q_pos = model.opposite_global(g, &pos.image)?;
                let q_neg = model.opposite_global(g, &neg_image.image)?;
                (g.dot(a_pos, q_pos)?, g.dot(a_neg, q_pos)?, g.dot(a_pos, q_neg)?)
            }
        };
        terms.push(hinge(g, matched, with_neg_text, margin)?);
        terms.push(hinge(g, matched, with_neg_image, margin)?);
    }
    let total = g.add_n(&terms)?;
    g.scale(total, T::one() / T::of_f64(batch.len() as f64))
}

/// Image-space loss: per tuple, the matched pair must beat both the pair
/// with the negative text and the pair with the negative image by `margin`.
pub fn loss_image_space<T: Real>(
    g: &mut Graph<'_, T>,
    model: &SemanticSpaceModel<T>,
    pairs: &[&Pair],
    batch: &[TripletTuple],
    margin: f64,
) -> Result<Var> {
    if model.kind() != SpaceKind::Image {
        return Err(Error::contract("loss_image_space needs an image-anchored model"));
    }
    triplet_loss(g, model, pairs, batch, margin)
}

/// Text-space counterpart of [`loss_image_space`].
pub fn loss_text_space<T: Real>(
    g: &mut Graph<'_, T>,
    model: &SemanticSpaceModel<T>,
    pairs: &[&Pair],
    batch: &[TripletTuple],
    margin: f64,
) -> Result<Var> {
    if model.kind() != SpaceKind::Text {
        return Err(Error::contract("loss_text_space needs a text-anchored model"));
    }
    triplet_loss(g, model, pairs, batch, margin)
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    /// Validation MAP (image→text, text→image) when recorded at this step.
    pub val_map: Option<(f64, f64)>,
}

/// MAP of a single space on a pair list, both directions.
pub fn evaluate_space<T: Real>(model: &SemanticSpaceModel<T>, pairs: &[&Pair]) -> Result<(f64, f64)> {
    let images: Vec<_> = pairs.iter().map(|p| &p.image).collect();
    let texts: Vec<_> = pairs.iter().map(|p| &p.text).collect();
    let labels: Vec<u32> = pairs.iter().map(|p| p.label).collect();
    let sim = similarity_matrix(model, &images, &texts)?;
    let i2t = retrieval_eval(&sim, &labels, &labels, Direction::ImageToText)?;
    let t2i = retrieval_eval(&sim, &labels, &labels, Direction::TextToImage)?;
    Ok((i2t.map, t2i.map))
}

/// Trains one space with plain SGD: each step samples a batch of tuples,
/// evaluates the mean triplet loss, backpropagates and applies
/// `θ ← θ − lr · ∇θ`. Returns the per-step loss trace.
///
/// A non-finite loss, gradient or parameter aborts with
/// [`Error::Diverged`] carrying the trace recorded so far.
pub fn train<T: Real>(
    model: &mut SemanticSpaceModel<T>,
    train_pairs: &[&Pair],
    val_pairs: &[&Pair],
    cfg: &TrainConfig,
) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    let labels: Vec<u32> = train_pairs.iter().map(|p| p.label).collect();
    let margin = cfg.margin(model.kind());
    let lr = T::of_f64(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.max_iterations);
    let diverged = |step: usize, trace: &Vec<TraceRow>| Error::Diverged {
        step,
        trace: trace.clone(),
    };

    for step in 0..cfg.max_iterations {
        let batch = sample_triplets(&labels, cfg.triplets_per_step, &mut rng)?;
        let (loss, grads) = {
            let mut g = Graph::new(model.store());
            let out = match triplet_loss(&mut g, model, train_pairs, &batch, margin) {
                Err(Error::InvalidValue { .. }) => return Err(diverged(step, &trace)),
                r => r?,
            };
            let loss = g.value(out).item()?.as_f64();
            if !loss.is_finite() {
                return Err(diverged(step, &trace));
            }
            let grads = match g.backward(out) {
                Err(Error::InvalidValue { .. }) => return Err(diverged(step, &trace)),
                r => r?,
            };
            (loss, grads)
        };
        let store = model.store_mut();
        store.zero_grads();
        store.accumulate(&grads, T::one())?;
        if store.sgd_step(lr).is_err() {
            trace.push(TraceRow {
                step,
                loss,
                val_map: None,
            });
            return Err(diverged(step, &trace));
        }
        let val_map = if cfg.validation_interval > 0 && (step + 1) % cfg.validation_interval == 0 && !val_pairs.is_empty() {
            Some(evaluate_space(model, val_pairs)?)
        } else {
            None
        };
        trace.push(TraceRow { step, loss, val_map });
    }
    Ok(trace)
}
