//! Finite-difference verification of every differentiable block at small
//! dimensions, in 64-bit arithmetic.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::attention::{attended_sequence, attended_sum, attention_weights, AttentionParams};
use crate::data::{FeatureSequence, Instance, Modality, Pair, Split};
use crate::encoders::{lstm_sequence, lstm_step, temporal_conv_block, ConvBlockParams, LstmParams};
use crate::numcore::{grad_check_with, GradCheckReport};
use crate::space::{default_conv_layers, sim_image_space, sim_text_space, SemanticSpaceModel, SpaceConfig};
use crate::training::{loss_image_space, loss_text_space, sample_triplets};
use crate::{Error, Graph, ParamStore, Result, Tensor, Var};

/// Dimensions and finite-difference settings for [`gradient_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub grid_size: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub target_dim: usize,
    pub text_len: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            grid_size: 3,
            feature_dim: 8,
            hidden_dim: 8,
            target_dim: 8,
            text_len: 6,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

/// The report of one checked block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub block: &'static str,
    pub report: GradCheckReport,
}

/// Names of the blocks checked by [`gradient_suite`], in order.
pub const BLOCKS: [&str; 9] = [
    "lstm_step",
    "lstm_sequence",
    "temporal_conv_block",
    "attention",
    "sim_image_space",
    "sim_text_space",
    "loss_image_space",
    "loss_text_space",
    "attended_sequence",
];

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), normal(rng, n)).expect("shape and data agree")
}

/// A fixed random linear readout `Σ_t r_t · row_t` that turns a matrix
/// output into a scalar with non-trivial gradients everywhere.
fn readout(g: &mut Graph<'_, f64>, m: Var, weights: &Tensor<f64>) -> Result<Var> {
    let r = g.constant(weights.clone());
    let prod = g.hadamard(m, r)?;
    let (rows, _) = g.value(prod).dims2("readout")?;
    let ones = g.constant(Tensor::new(alloc::vec![rows], alloc::vec![1.0; rows])?);
    let col = g.matmul(ones, prod)?;
    let width = g.value(col).numel();
    let ones = g.constant(Tensor::new(alloc::vec![width], alloc::vec![1.0; width])?);
    g.dot(col, ones)
}

fn instance(rng: &mut ChaCha8Rng, id: String, label: u32, modality: Modality, rows: usize, cfg: &SuiteConfig) -> Instance {
    let data = normal(rng, rows * cfg.feature_dim).into_iter().map(|v| v as f32).collect();
    Instance {
        pair_id: id.clone(),
        id,
        label,
        modality,
        sequence: FeatureSequence::from_rows(rows, cfg.feature_dim, data).expect("finite synthetic rows"),
        global: normal(rng, cfg.target_dim).into_iter().map(|v| v as f32).collect(),
    }
}

/// Runs central-difference checks over the LSTM step and sequence, the
/// temporal convolution block, attention, both similarities and both
/// composed triplet losses.
///
/// `fault` names a parameter whose analytic gradient is negated before
/// comparison; it exists so callers can confirm that a broken gradient is
/// reported under the right name.
pub fn gradient_suite(cfg: &SuiteConfig, fault: Option<&str>) -> Result<Vec<BlockReport>> {
    if cfg.grid_size == 0 || cfg.feature_dim == 0 || cfg.hidden_dim == 0 || cfg.target_dim == 0 {
        return Err(Error::dim("gradient suite", "zero dimension"));
    }
    let regions = cfg.grid_size * cfg.grid_size;
    let d = cfg.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(BLOCKS.len());

    let mut run = |block: &'static str,
                   store: &mut ParamStore<f64>,
                   f: &dyn Fn(&mut Graph<'_, f64>) -> Result<Var>|
     -> Result<()> {
        let faulty = fault.and_then(|name| store.id(name));
        let report = grad_check_with(f, store, cfg.step, cfg.tolerance, |grads| {
            if let Some(id) = faulty {
                for v in grads.get_mut(id).data_mut() {
                    *v = -*v;
                }
            }
        })?;
        out.push(BlockReport { block, report });
        Ok(())
    };

    // lstm_step with the input and previous state as parameters.
    {
        let mut store = ParamStore::new();
        let p = LstmParams::init(&mut store, "lstm", d, cfg.hidden_dim, &mut rng)?;
        let x = store.insert("x", tensor(&mut rng, &[d]))?;
        let h0 = store.insert("h_prev", tensor(&mut rng, &[cfg.hidden_dim]))?;
        let c0 = store.insert("c_prev", tensor(&mut rng, &[cfg.hidden_dim]))?;
        let rh = tensor(&mut rng, &[1, cfg.hidden_dim]);
        let rc = tensor(&mut rng, &[1, cfg.hidden_dim]);
        run("lstm_step", &mut store, &|g| {
            let (x, h0, c0) = (g.param(x), g.param(h0), g.param(c0));
            let (h, c) = lstm_step(g, &p, x, h0, c0)?;
            let h = g.stack_rows(&[h])?;
            let c = g.stack_rows(&[c])?;
            let a = readout(g, h, &rh)?;
            let b = readout(g, c, &rc)?;
            g.add(a, b)
        })?;
    }

    {
        let mut store = ParamStore::new();
        let p = LstmParams::init(&mut store, "lstm", d, cfg.hidden_dim, &mut rng)?;
        let seq = store.insert("seq", tensor(&mut rng, &[regions, d]))?;
        let r = tensor(&mut rng, &[regions, cfg.hidden_dim]);
        run("lstm_sequence", &mut store, &|g| {
            let seq = g.param(seq);
            let hs = lstm_sequence(g, &p, seq)?;
            readout(g, hs, &r)
        })?;
    }

    {
        let mut store = ParamStore::new();
        let specs = default_conv_layers(d);
        let p = ConvBlockParams::init(&mut store, "conv", d, &specs, &mut rng)?;
        let words = store.insert("words", tensor(&mut rng, &[cfg.text_len, d]))?;
        let probe = {
            let mut g = Graph::new(&store);
            let w = g.param(words);
            let y = temporal_conv_block(&mut g, &p, w)?;
            g.value(y).shape().to_vec()
        };
        let r = tensor(&mut rng, &probe);
        run("temporal_conv_block", &mut store, &|g| {
            let w = g.param(words);
            let y = temporal_conv_block(g, &p, w)?;
            readout(g, y, &r)
        })?;
    }

    // Attention over a partly padded state sequence, so masking is covered.
    {
        let mut store = ParamStore::new();
        let p = AttentionParams::init(&mut store, "attn", cfg.target_dim, cfg.hidden_dim, &mut rng)?;
        let hs = store.insert("states", tensor(&mut rng, &[regions, cfg.target_dim]))?;
        let valid = regions.saturating_sub(2).max(1);
        let r = tensor(&mut rng, &[1, cfg.target_dim]);
        run("attention", &mut store, &|g| {
            let hs = g.param(hs);
            let a = attention_weights(g, &p, hs, valid)?;
            let v = attended_sum(g, hs, a)?;
            let v = g.stack_rows(&[v])?;
            readout(g, v, &r)
        })?;
    }

    let image_cfg = SpaceConfig {
        grid_size: cfg.grid_size,
        ..SpaceConfig::image(d, d, cfg.target_dim).with_hidden(cfg.hidden_dim)
    };
    let text_cfg = SpaceConfig::text(d, cfg.target_dim).with_hidden(cfg.hidden_dim);
    let image_model = SemanticSpaceModel::<f64>::new(image_cfg, cfg.seed ^ 0x1)?;
    let text_model = SemanticSpaceModel::<f64>::new(text_cfg, cfg.seed ^ 0x2)?;

    let labels = [0u32, 0, 1, 1, 2];
    let pairs: Vec<Pair> = labels
        .iter()
        .enumerate()
        .map(|(k, &label)| {
            let id = format!("p{k}");
            Pair {
                pair_id: id.clone(),
                label,
                split: Split::Train,
                image: instance(&mut rng, id.clone(), label, Modality::Image, regions, cfg),
                text: instance(&mut rng, id.clone(), label, Modality::Text, cfg.text_len, cfg),
            }
        })
        .collect();
    let refs: Vec<&Pair> = pairs.iter().collect();
    let batch = sample_triplets(&labels, 3, &mut rng)?;

    {
        let mut store = image_model.store().clone();
        run("sim_image_space", &mut store, &|g| {
            let q = image_model.opposite_global(g, &pairs[0].text)?;
            sim_image_space(g, &image_model, &pairs[0].image.sequence, q)
        })?;
    }
    {
        let mut store = text_model.store().clone();
        run("sim_text_space", &mut store, &|g| {
            let q = text_model.opposite_global(g, &pairs[0].image)?;
            sim_text_space(g, &text_model, &pairs[0].text.sequence, q)
        })?;
    }
    {
        let mut store = image_model.store().clone();
        run("loss_image_space", &mut store, &|g| loss_image_space(g, &image_model, &refs, &batch, 0.5))?;
    }
    {
        let mut store = text_model.store().clone();
        run("loss_text_space", &mut store, &|g| loss_text_space(g, &text_model, &refs, &batch, 0.5))?;
    }

    // The weighted sequence {a_j h_j} itself, read out position by position.
    {
        let mut store = ParamStore::new();
        let p = AttentionParams::init(&mut store, "attn", cfg.target_dim, cfg.hidden_dim, &mut rng)?;
        let hs = store.insert("states", tensor(&mut rng, &[regions, cfg.target_dim]))?;
        let r = tensor(&mut rng, &[regions, cfg.target_dim]);
        run("attended_sequence", &mut store, &|g| {
            let hs = g.param(hs);
            let a = attention_weights(g, &p, hs, regions)?;
            let weighted = attended_sequence(g, hs, a)?;
            readout(g, weighted, &r)
        })?;
    }

    Ok(out)
}

/// One line per block and a final verdict, for terminal output.
pub fn format_suite(reports: &[BlockReport]) -> String {
    let mut s = String::new();
    for b in reports {
        let worst = b.report.params.iter().max_by(|x, y| x.max_rel_error.total_cmp(&y.max_rel_error));
        let (name, err) = worst.map_or(("-", 0.0), |w| (w.name.as_str(), w.max_rel_error));
        s.push_str(&format!(
            "{:<20} {:<5} max rel error {:.3e} ({})\n",
            b.block,
            if b.report.passed() { "ok" } else { "FAIL" },
            err,
            name
        ));
        for f in b.report.failures() {
            s.push_str(&format!(
                "    {} failed: rel error {:.3e} at element {} (analytic {:.6e}, numeric {:.6e})\n",
                f.name, f.max_rel_error, f.worst_index, f.analytic, f.numeric
            ));
        }
    }
    let ok = reports.iter().all(|b| b.report.passed());
    s.push_str(if ok { "all blocks passed\n" } else { "gradient check FAILED\n" });
    s
}
