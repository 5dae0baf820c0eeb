//! Min-max normalization, adaptive and late fusion of the two spaces'
//! similarity matrices, and average-precision retrieval evaluation.

use alloc::vec::Vec;

use crate::space::{SimilarityMatrix, SpaceTag};
use crate::{Error, Result};

/// Set over which min and max are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizationScope {
    /// All query-candidate pairs of the matrix.
    #[default]
    Global,
    /// Each image row separately.
    PerRow,
}

fn rescale(values: &[f64], out: &mut Vec<f64>) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        let span = hi - lo;
        out.extend(values.iter().map(|&v| (v - lo) / span));
    } else {
        // A constant score carries no preference; weight it neutrally.
        out.extend(values.iter().map(|_| 0.5));
    }
}

/// `(S - min) / (max - min)`; a constant matrix (or row) maps to 0.5.
pub fn minmax_normalize(s: &SimilarityMatrix, scope: NormalizationScope) -> Result<SimilarityMatrix> {
    let mut out = Vec::with_capacity(s.data().len());
    match scope {
        NormalizationScope::Global => rescale(s.data(), &mut out),
        NormalizationScope::PerRow => {
            for r in 0..s.rows() {
                rescale(s.row(r), &mut out);
            }
        }
    }
    SimilarityMatrix::new(s.rows(), s.cols(), out, s.tag)
}

fn same_shape(a: &SimilarityMatrix, b: &SimilarityMatrix) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::dim(
            "fusion",
            alloc::format!("{}x{} vs {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        ));
    }
    Ok(())
}

/// Each space's score weighted by the other space's normalized score:
/// `r_t · sim_i + r_i · sim_t`.
pub fn adaptive_fuse(
    sim_i: &SimilarityMatrix,
    sim_t: &SimilarityMatrix,
    scope: NormalizationScope,
) -> Result<SimilarityMatrix> {
    same_shape(sim_i, sim_t)?;
    let r_i = minmax_normalize(sim_i, scope)?;
    let r_t = minmax_normalize(sim_t, scope)?;
    let data = (0..sim_i.data().len())
        .map(|k| r_t.data()[k] * sim_i.data()[k] + r_i.data()[k] * sim_t.data()[k])
        .collect();
    SimilarityMatrix::new(sim_i.rows(), sim_i.cols(), data, SpaceTag::Fused)
}

/// Elementwise mean of the two spaces.
pub fn late_fuse(sim_i: &SimilarityMatrix, sim_t: &SimilarityMatrix) -> Result<SimilarityMatrix> {
    same_shape(sim_i, sim_t)?;
    let data = sim_i
        .data()
        .iter()
        .zip(sim_t.data())
        .map(|(&a, &b)| 0.5 * (a + b))
        .collect();
    SimilarityMatrix::new(sim_i.rows(), sim_i.cols(), data, SpaceTag::LateFused)
}

/// `(1/R) Σ_k (R_k / k) · rel_k` over the full ranked list, where `R_k` is
/// the number of relevant results in the top `k`.
pub fn average_precision(ranked_relevance: &[bool], relevant_total: usize) -> Result<f64> {
    if relevant_total == 0 {
        return Err(Error::UndefinedQuery);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in ranked_relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / relevant_total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Image queries (rows) rank text candidates (columns).
    ImageToText,
    /// Text queries (columns) rank image candidates (rows).
    TextToImage,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::ImageToText => "image->text",
            Direction::TextToImage => "text->image",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalMetrics {
    pub direction: Direction,
    pub tag: SpaceTag,
    /// `(query index, AP)` for every query with at least one relevant candidate.
    pub ap: Vec<(usize, f64)>,
    /// Queries left out because nothing in the candidate list is relevant.
    pub excluded: Vec<usize>,
    pub map: f64,
}

/// Ranks candidates for every query by descending score (ties by ascending
/// candidate index) and averages AP over queries; relevance means equal
/// labels.
pub fn retrieval_eval(
    sim: &SimilarityMatrix,
    image_labels: &[u32],
    text_labels: &[u32],
    direction: Direction,
) -> Result<RetrievalMetrics> {
    if image_labels.len() != sim.rows() || text_labels.len() != sim.cols() {
        return Err(Error::dim(
            "retrieval_eval",
            alloc::format!(
                "{}x{} matrix with {} image and {} text labels",
                sim.rows(),
                sim.cols(),
                image_labels.len(),
                text_labels.len()
            ),
        ));
    }
    let (queries, candidates, q_labels, c_labels) = match direction {
        Direction::ImageToText => (sim.rows(), sim.cols(), image_labels, text_labels),
        Direction::TextToImage => (sim.cols(), sim.rows(), text_labels, image_labels),
    };
    let score = |q: usize, c: usize| match direction {
        Direction::ImageToText => sim.get(q, c),
        Direction::TextToImage => sim.get(c, q),
    };
    let mut ap = Vec::with_capacity(queries);
    let mut excluded = Vec::new();
    let mut order: Vec<usize> = Vec::with_capacity(candidates);
    let mut relevance = Vec::with_capacity(candidates);
    for q in 0..queries {
        let relevant = c_labels.iter().filter(|&&l| l == q_labels[q]).count();
        if relevant == 0 {
            log::warn!("{} query {q} has no relevant candidates; excluded from MAP", direction.label());
            excluded.push(q);
            continue;
        }
        order.clear();
        order.extend(0..candidates);
        order.sort_by(|&a, &b| {
            score(q, b)
                .partial_cmp(&score(q, a))
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        relevance.clear();
        relevance.extend(order.iter().map(|&c| c_labels[c] == q_labels[q]));
        ap.push((q, average_precision(&relevance, relevant)?));
    }
    let map = if ap.is_empty() {
        0.0
    } else {
        ap.iter().map(|&(_, v)| v).sum::<f64>() / ap.len() as f64
    };
    Ok(RetrievalMetrics {
        direction,
        tag: sim.tag,
        ap,
        excluded,
        map,
    })
}
