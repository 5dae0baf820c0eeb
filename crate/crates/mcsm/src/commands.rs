//! The work behind each CLI subcommand, callable without a process.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};

use mcsm_core::data::{generate_synthetic, Dataset, Pair, Split};
use mcsm_core::diagnostics::{format_suite, gradient_suite, SuiteConfig};
use mcsm_core::fusion::{adaptive_fuse, late_fuse, retrieval_eval, Direction, NormalizationScope, RetrievalMetrics};
use mcsm_core::space::{similarity_matrix, SemanticSpaceModel, SimilarityMatrix, SpaceKind, SpaceTag};
use mcsm_core::training::{train, TraceRow};

use crate::config::{ConfigError, RunConfig, Scope};
use crate::format::{load_checkpoint, read_features, save_checkpoint, write_features, FeatureMatrix, FormatError};
use crate::manifest::{load_dataset, save_dataset, ManifestError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("gradient check failed")]
    GradCheck,
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Diverged { .. } => 3,
            CliError::GradCheck => 4,
        }
    }
}

impl From<mcsm_core::Error> for CliError {
    fn from(e: mcsm_core::Error) -> Self {
        match e {
            mcsm_core::Error::Diverged { step, .. } => CliError::Diverged { step },
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Validation(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn write_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

/// Creates the output directory. With `require_empty`, an existing
/// non-empty directory is refused unless `force` is set.
pub fn prepare_out(out: &Path, require_empty: bool, force: bool) -> Result<()> {
    if require_empty && !force {
        if let Ok(mut entries) = fs::read_dir(out) {
            if entries.next().is_some() {
                return Err(CliError::Validation(format!(
                    "output directory {} is not empty (use --force to write into it)",
                    out.display()
                )));
            }
        }
    }
    fs::create_dir_all(out).map_err(io_err(out))
}

/// Writes the effective configuration next to the command's outputs.
pub fn echo_config(cfg: &RunConfig) -> Result<PathBuf> {
    let path = cfg.out.join("config.resolved.json");
    fs::write(&path, cfg.to_json()).map_err(io_err(&path))?;
    Ok(path)
}

/// The configured manifest, or the synthetic dataset for this seed.
pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.manifest {
        Some(path) => Ok(load_dataset(path)?),
        None => Ok(generate_synthetic(&cfg.synthetic_config())?),
    }
}

pub fn fresh_model(cfg: &RunConfig, kind: SpaceKind, ds: &Dataset) -> Result<SemanticSpaceModel<f32>> {
    Ok(SemanticSpaceModel::new(cfg.space_config(kind, ds)?, cfg.init_seed(kind))?)
}

/// Trains one space from its seeded initialization. A divergence error
/// comes back together with the trace recorded before it.
pub fn train_space(
    cfg: &RunConfig,
    kind: SpaceKind,
    ds: &Dataset,
) -> std::result::Result<(SemanticSpaceModel<f32>, Vec<TraceRow>), (CliError, Vec<TraceRow>)> {
    let mut model = fresh_model(cfg, kind, ds).map_err(|e| (e, Vec::new()))?;
    let train_pairs = ds.split(Split::Train);
    let val_pairs = ds.split(Split::Val);
    match train(&mut model, &train_pairs, &val_pairs, &cfg.train_config(kind)) {
        Ok(trace) => Ok((model, trace)),
        Err(mcsm_core::Error::Diverged { step, trace }) => Err((CliError::Diverged { step }, trace)),
        Err(e) => Err((e.into(), Vec::new())),
    }
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(write_err)?;
    w.write_record(["step", "loss", "val_map_image_to_text", "val_map_text_to_image"])
        .map_err(write_err)?;
    for r in trace {
        let (i2t, t2i) = r
            .val_map
            .map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
        w.write_record([r.step.to_string(), r.loss.to_string(), i2t, t2i])
            .map_err(write_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// MAP of one similarity matrix in both retrieval directions.
#[derive(Debug, Clone, PartialEq)]
pub struct TagMetrics {
    pub tag: SpaceTag,
    pub image_to_text: RetrievalMetrics,
    pub text_to_image: RetrievalMetrics,
}

impl TagMetrics {
    pub fn average(&self) -> f64 {
        (self.image_to_text.map + self.text_to_image.map) / 2.0
    }
}

/// Evaluates each matrix against the pairs' labels. Rows are the pairs'
/// images and columns their texts, in pair order.
pub fn evaluate_matrices(matrices: &[SimilarityMatrix], pairs: &[&Pair]) -> Result<Vec<TagMetrics>> {
    let labels: Vec<u32> = pairs.iter().map(|p| p.label).collect();
    matrices
        .iter()
        .map(|m| {
            Ok(TagMetrics {
                tag: m.tag,
                image_to_text: retrieval_eval(m, &labels, &labels, Direction::ImageToText)?,
                text_to_image: retrieval_eval(m, &labels, &labels, Direction::TextToImage)?,
            })
        })
        .collect()
}

/// Similarity matrices for the requested rows: each space alone, late
/// fusion and adaptive fusion (the fused rows need both spaces).
pub fn similarity_rows(
    cfg: &RunConfig,
    pairs: &[&Pair],
    image: Option<&SemanticSpaceModel<f32>>,
    text: Option<&SemanticSpaceModel<f32>>,
) -> Result<Vec<SimilarityMatrix>> {
    if pairs.is_empty() {
        return Err(CliError::Validation("the evaluation split is empty".into()));
    }
    let images: Vec<_> = pairs.iter().map(|p| &p.image).collect();
    let texts: Vec<_> = pairs.iter().map(|p| &p.text).collect();
    let sim_i = image.map(|m| similarity_matrix(m, &images, &texts)).transpose()?;
    let sim_t = text.map(|m| similarity_matrix(m, &images, &texts)).transpose()?;
    fuse_rows(cfg, sim_i, sim_t)
}

fn fuse_rows(
    cfg: &RunConfig,
    sim_i: Option<SimilarityMatrix>,
    sim_t: Option<SimilarityMatrix>,
) -> Result<Vec<SimilarityMatrix>> {
    let mut out = Vec::new();
    if let (Some(i), Some(t)) = (&sim_i, &sim_t) {
        if cfg.eval.late_fusion {
            out.push(late_fuse(i, t)?);
        }
        if cfg.eval.adaptive_fusion {
            out.push(adaptive_fuse(i, t, cfg.eval.normalization.into())?);
        }
    }
    if cfg.eval.per_space || out.is_empty() {
        let singles: Vec<_> = [sim_i, sim_t].into_iter().flatten().collect();
        out.splice(0..0, singles);
    }
    Ok(out)
}

/// Aligned MAP table, one row per method.
pub fn format_table(rows: &[TagMetrics]) -> String {
    let mut s = format!("{:<12} {:>12} {:>12} {:>9}\n", "Method", "Image->Text", "Text->Image", "Average");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<12} {:>12.4} {:>12.4} {:>9.4}",
            r.tag.label(),
            r.image_to_text.map,
            r.text_to_image.map,
            r.average()
        );
    }
    s
}

/// `ap.csv` with one row per query and `summary.csv` with one MAP row per
/// method and direction.
pub fn write_metrics(out: &Path, rows: &[TagMetrics], pairs: &[&Pair]) -> Result<()> {
    let ap_path = out.join("ap.csv");
    let mut w = csv::Writer::from_path(&ap_path).map_err(write_err)?;
    w.write_record(["tag", "direction", "query_id", "ap"]).map_err(write_err)?;
    for r in rows {
        for m in [&r.image_to_text, &r.text_to_image] {
            for &(q, ap) in &m.ap {
                let id = match m.direction {
                    Direction::ImageToText => &pairs[q].image.id,
                    Direction::TextToImage => &pairs[q].text.id,
                };
                w.write_record([r.tag.label(), m.direction.label(), id, &ap.to_string()])
                    .map_err(write_err)?;
            }
        }
    }
    w.flush().map_err(io_err(&ap_path))?;

    let summary_path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path).map_err(write_err)?;
    w.write_record(["direction", "tag", "map", "queries", "excluded"]).map_err(write_err)?;
    for r in rows {
        for m in [&r.image_to_text, &r.text_to_image] {
            w.write_record([
                m.direction.label(),
                r.tag.label(),
                &m.map.to_string(),
                &m.ap.len().to_string(),
                &m.excluded.len().to_string(),
            ])
            .map_err(write_err)?;
        }
    }
    w.flush().map_err(io_err(&summary_path))
}

fn matrix_file(tag: SpaceTag) -> &'static str {
    match tag {
        SpaceTag::ImageSpace => "sim_image.mcsf",
        SpaceTag::TextSpace => "sim_text.mcsf",
        SpaceTag::LateFused => "sim_late.mcsf",
        SpaceTag::Fused => "sim_fused.mcsf",
    }
}

pub fn cmd_synth(cfg: &RunConfig, force: bool) -> Result<String> {
    prepare_out(&cfg.out, true, force)?;
    let ds = generate_synthetic(&cfg.synthetic_config())?;
    let manifest = save_dataset(&ds, &cfg.out).map_err(write_err)?;
    echo_config(cfg)?;
    let c = &cfg.synthetic;
    Ok(format!(
        "wrote {} pairs ({} train, {} val, {} test) over {} categories to {}\n\
         image: {} regions x {}, global {}; text: {}..{} words x {}",
        ds.pairs.len(),
        ds.count(Split::Train),
        ds.count(Split::Val),
        ds.count(Split::Test),
        c.categories,
        manifest.display(),
        c.grid_size * c.grid_size,
        c.region_dim,
        c.global_dim,
        c.min_words,
        c.max_words,
        c.word_dim,
    ))
}

pub fn checkpoint_path(out: &Path, kind: SpaceKind) -> PathBuf {
    out.join(format!("{}.mcsc", kind.as_str()))
}

pub fn cmd_train(cfg: &RunConfig, kind: SpaceKind) -> Result<String> {
    prepare_out(&cfg.out, false, true)?;
    echo_config(cfg)?;
    let ds = load_data(cfg)?;
    let trace_path = cfg.out.join(format!("{}_trace.csv", kind.as_str()));
    let started = Instant::now();
    let (model, trace) = match train_space(cfg, kind, &ds) {
        Ok(done) => done,
        Err((err, partial)) => {
            write_trace(&trace_path, &partial)?;
            return Err(err);
        }
    };
    write_trace(&trace_path, &trace)?;
    let ckpt = checkpoint_path(&cfg.out, kind);
    save_checkpoint(&ckpt, &model).map_err(write_err)?;
    let tenth = (trace.len() / 10).max(1);
    let mean = |rows: &[TraceRow]| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len().max(1) as f64;
    let mut msg = format!("trained {} space for {} steps in {:.1?}", kind.as_str(), trace.len(), started.elapsed());
    if !trace.is_empty() {
        let _ = write!(
            msg,
            "; mean loss first 10% {:.4}, last 10% {:.4}",
            mean(&trace[..tenth]),
            mean(&trace[trace.len() - tenth..])
        );
    }
    let _ = write!(msg, "\ncheckpoint {}\ntrace {}", ckpt.display(), trace_path.display());
    Ok(msg)
}

fn check_model(model: &SemanticSpaceModel<f32>, expect: SpaceKind, path: &Path) -> Result<()> {
    if model.kind() != expect {
        return Err(CliError::Validation(format!(
            "{} holds a {} space, expected {}",
            path.display(),
            model.kind().as_str(),
            expect.as_str()
        )));
    }
    Ok(())
}

/// Inputs of `eval`: checkpoints and, for tests, a similarity matrix that
/// replaces the image space's scores.
#[derive(Debug, Clone, Default)]
pub struct EvalInputs {
    pub image_checkpoint: Option<PathBuf>,
    pub text_checkpoint: Option<PathBuf>,
    pub injected: Option<PathBuf>,
}

pub fn cmd_eval(cfg: &RunConfig, inputs: &EvalInputs) -> Result<String> {
    prepare_out(&cfg.out, false, true)?;
    echo_config(cfg)?;
    let ds = load_data(cfg)?;
    let pairs = ds.split(cfg.eval_split());
    let load = |p: &Option<PathBuf>, kind| -> Result<Option<SemanticSpaceModel<f32>>> {
        p.as_deref()
            .map(|p| {
                let m = load_checkpoint(p)?;
                check_model(&m, kind, p)?;
                Ok(m)
            })
            .transpose()
    };
    let image = load(&inputs.image_checkpoint, SpaceKind::Image)?;
    let text = load(&inputs.text_checkpoint, SpaceKind::Text)?;
    let matrices = match &inputs.injected {
        Some(path) => {
            let m = read_features(path)?.into_similarity(SpaceTag::ImageSpace)?;
            if m.rows() != pairs.len() || m.cols() != pairs.len() {
                return Err(CliError::Validation(format!(
                    "injected matrix is {}x{}, split has {} pairs",
                    m.rows(),
                    m.cols(),
                    pairs.len()
                )));
            }
            let images: Vec<_> = pairs.iter().map(|p| &p.image).collect();
            let texts: Vec<_> = pairs.iter().map(|p| &p.text).collect();
            let sim_t = text.as_ref().map(|t| similarity_matrix(t, &images, &texts)).transpose()?;
            fuse_rows(cfg, Some(m), sim_t)?
        }
        None if image.is_none() && text.is_none() => {
            return Err(CliError::Validation("eval needs at least one checkpoint".into()));
        }
        None => similarity_rows(cfg, &pairs, image.as_ref(), text.as_ref())?,
    };
    for m in &matrices {
        let path = cfg.out.join(matrix_file(m.tag));
        write_features(&path, &FeatureMatrix::from_similarity(m)).map_err(write_err)?;
    }
    let rows = evaluate_matrices(&matrices, &pairs)?;
    write_metrics(&cfg.out, &rows, &pairs)?;
    Ok(format_table(&rows))
}

pub fn cmd_fuse(cfg: &RunConfig, image: &Path, text: &Path, scope: Option<Scope>) -> Result<String> {
    prepare_out(&cfg.out, false, true)?;
    echo_config(cfg)?;
    let sim_i = read_features(image)?.into_similarity(SpaceTag::ImageSpace)?;
    let sim_t = read_features(text)?.into_similarity(SpaceTag::TextSpace)?;
    let scope: NormalizationScope = scope.unwrap_or(cfg.eval.normalization).into();
    let fused = adaptive_fuse(&sim_i, &sim_t, scope)?;
    let late = late_fuse(&sim_i, &sim_t)?;
    for m in [&fused, &late] {
        let path = cfg.out.join(matrix_file(m.tag));
        write_features(&path, &FeatureMatrix::from_similarity(m)).map_err(write_err)?;
    }
    Ok(format!(
        "fused {}x{} matrices into {} and {}",
        fused.rows(),
        fused.cols(),
        cfg.out.join(matrix_file(SpaceTag::Fused)).display(),
        cfg.out.join(matrix_file(SpaceTag::LateFused)).display()
    ))
}

/// Settings of `gradcheck` beyond the run config.
#[derive(Debug, Clone, Default)]
pub struct GradCheckOptions {
    pub tolerance: Option<f64>,
    pub step: Option<f64>,
    pub fault: Option<String>,
}

pub fn cmd_gradcheck(cfg: &RunConfig, opts: &GradCheckOptions) -> Result<String> {
    prepare_out(&cfg.out, false, true)?;
    echo_config(cfg)?;
    let defaults = SuiteConfig::default();
    let suite = SuiteConfig {
        tolerance: opts.tolerance.unwrap_or(defaults.tolerance),
        step: opts.step.unwrap_or(defaults.step),
        seed: cfg.seed(),
        ..defaults
    };
    let reports = gradient_suite(&suite, opts.fault.as_deref())?;
    let text = format_suite(&reports);
    let path = cfg.out.join("gradcheck.txt");
    fs::write(&path, &text).map_err(io_err(&path))?;
    if reports.iter().all(|b| b.report.passed()) {
        Ok(text)
    } else {
        eprint!("{text}");
        Err(CliError::GradCheck)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    Margin,
    Lr,
}

/// Drops repeated values, keeping first occurrences, and warns about them.
pub fn dedup_values(values: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(values.len());
    for &v in values {
        if out.iter().any(|u| u.to_bits() == v.to_bits()) {
            warn!("ignoring duplicate sweep value {v}");
        } else {
            out.push(v);
        }
    }
    out
}

/// Methods reported when both spaces are present, in report order.
pub fn fused_tags(cfg: &RunConfig) -> Vec<SpaceTag> {
    let mut tags = Vec::new();
    if cfg.eval.per_space || !(cfg.eval.late_fusion || cfg.eval.adaptive_fusion) {
        tags.extend([SpaceTag::ImageSpace, SpaceTag::TextSpace]);
    }
    if cfg.eval.late_fusion {
        tags.push(SpaceTag::LateFused);
    }
    if cfg.eval.adaptive_fusion {
        tags.push(SpaceTag::Fused);
    }
    tags
}

/// Trains both spaces once per value and writes `sweep_<param>.csv` with
/// one row per value: both directions and their average for every method.
pub fn cmd_sweep(cfg: &RunConfig, param: SweepParam, values: &[f64]) -> Result<String> {
    if values.is_empty() {
        return Err(CliError::Validation("sweep needs at least one value".into()));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(CliError::Validation("sweep values must be finite and non-negative".into()));
    }
    prepare_out(&cfg.out, false, true)?;
    echo_config(cfg)?;
    let ds = load_data(cfg)?;
    let pairs = ds.split(cfg.eval_split());
    let name = match param {
        SweepParam::Margin => "margin",
        SweepParam::Lr => "lr",
    };
    let tags = fused_tags(cfg);
    let path = cfg.out.join(format!("sweep_{name}.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(write_err)?;
    let mut header = vec!["param".to_owned(), "value".to_owned(), "status".to_owned()];
    for t in &tags {
        for d in ["image_to_text", "text_to_image", "average"] {
            header.push(format!("{} {d}", t.label()));
        }
    }
    w.write_record(&header).map_err(write_err)?;
    let mut lines = String::new();
    for v in dedup_values(values) {
        let mut run = cfg.clone();
        match param {
            SweepParam::Margin => {
                run.train.margin_image = v;
                run.train.margin_text = v;
            }
            SweepParam::Lr => run.train.learning_rate = v,
        }
        info!("sweep {name} = {v}");
        let mut record = vec![name.to_owned(), v.to_string()];
        let trained = train_space(&run, SpaceKind::Image, &ds)
            .and_then(|i| Ok((i, train_space(&run, SpaceKind::Text, &ds)?)));
        match trained {
            Ok(((image, _), (text, _))) => {
                let rows = evaluate_matrices(&similarity_rows(&run, &pairs, Some(&image), Some(&text))?, &pairs)?;
                record.push("ok".into());
                for r in &rows {
                    record.extend([r.image_to_text.map, r.text_to_image.map, r.average()].map(|m| m.to_string()));
                }
                let summary: Vec<_> = rows.iter().map(|r| format!("{} {:.4}", r.tag.label(), r.average())).collect();
                let _ = writeln!(lines, "{name} = {v}: average MAP {}", summary.join(", "));
            }
            Err((e @ CliError::Diverged { .. }, _)) => {
                warn!("{name} = {v}: {e}");
                record.push("diverged".into());
                record.resize(header.len(), String::new());
                let _ = writeln!(lines, "{name} = {v}: diverged");
            }
            Err((e, _)) => return Err(e),
        }
        w.write_record(&record).map_err(write_err)?;
    }
    w.flush().map_err(io_err(&path))?;
    let _ = write!(lines, "curve data in {}", path.display());
    Ok(lines)
}
