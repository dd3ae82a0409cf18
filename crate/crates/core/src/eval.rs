//! Evaluation protocols over a corpus: reconstruction metrics, diversity,
//! consistency/error correlation, initialisation ablation, views sweep and
//! paired deterministic/conditional comparison.

use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::infer::{reconstruct_with_mode, InferenceConfig, InferenceMode};
use crate::losses::consistency_loss;
use crate::metrics::{MetricReport, REPORT_SCALE};
use crate::model::{GeneratorKind, Image, LatentInput, Model, ModelParams};
use crate::synthdata::DatasetRecord;

/// Provenance line written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: u64,
    pub seed: u64,
    pub version: &'static str,
}

impl Provenance {
    pub fn new(config_text: &str, seed: u64) -> Self {
        Self {
            config_hash: fnv1a(config_text.as_bytes()),
            seed,
            version: env!("CARGO_PKG_VERSION"),
        }
    }

    pub fn header(&self) -> String {
        format!(
            "# mvshape version={} seed={} config_hash={:016x}",
            self.version, self.seed, self.config_hash
        )
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// `n` distinct view indices out of `total`, in draw order.
pub fn pick_views<R: Rng + ?Sized>(total: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 || n > total {
        return Err(Error::InvalidArgument(format!("cannot pick {n} of {total} views")));
    }
    Ok(sample(rng, total, n).into_vec())
}

fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub shape_id: String,
    pub n_views: usize,
    pub views: Vec<usize>,
    pub init_consis: f64,
    pub final_consis: f64,
    pub report: MetricReport,
}

impl EvalRow {
    pub const CSV_HEADER: &'static str =
        "shape_id,n_views,views,init_consis,final_consis,gt_to_pred,pred_to_gt,cd_x100,fps_cd_x100";

    pub fn csv_row(&self) -> String {
        let views: Vec<String> = self.views.iter().map(usize::to_string).collect();
        format!(
            "{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            self.shape_id,
            self.n_views,
            views.join(" "),
            self.init_consis,
            self.final_consis,
            self.report.gt_to_pred,
            self.report.pred_to_gt,
            self.report.cd * REPORT_SCALE,
            self.report.fps_cd * REPORT_SCALE
        )
    }
}

pub fn write_eval_csv<W: Write>(rows: &[EvalRow], provenance: &Provenance, mut out: W) -> Result<()> {
    writeln!(out, "{}", provenance.header())?;
    writeln!(out, "{}", EvalRow::CSV_HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Reconstructs one record from the given views and scores it against the
/// full ground-truth cloud.
pub fn evaluate_record(
    model: &Model,
    params: &ModelParams,
    record: &DatasetRecord,
    views: &[usize],
    inference: &InferenceConfig,
    mode: InferenceMode,
) -> Result<EvalRow> {
    let images: Vec<&Image> = views.iter().map(|&v| &record.views[v].image).collect();
    let rec = reconstruct_with_mode(model, params, &images, inference, mode)?;
    Ok(EvalRow {
        shape_id: record.shape_id.clone(),
        n_views: views.len(),
        views: views.to_vec(),
        init_consis: rec.trace.initial_consis,
        final_consis: rec.trace.final_consis,
        report: MetricReport::evaluate(&rec.cloud, &record.cloud)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub n_views: usize,
    pub mode: InferenceMode,
    pub inference: InferenceConfig,
    /// Drives view subsets and per-episode inference seeds.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_views: 8,
            mode: InferenceMode::HeuristicOptimized,
            inference: InferenceConfig::default(),
            seed: 0,
        }
    }
}

/// One episode per record. Episode `i` draws its views and inference seed
/// from stream `i`, so every mode and model sees the same views.
pub fn evaluate_records(
    model: &Model,
    params: &ModelParams,
    records: &[&DatasetRecord],
    cfg: &EvalConfig,
) -> Result<Vec<EvalRow>> {
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut rng = episode_rng(cfg.seed, i as u64);
            let views = pick_views(rec.views.len(), cfg.n_views, &mut rng)?;
            let inference = InferenceConfig {
                seed: rng.gen(),
                ..cfg.inference.clone()
            };
            evaluate_record(model, params, rec, &views, &inference, cfg.mode)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub count: usize,
    /// Unscaled means.
    pub mean_cd: f64,
    pub mean_fps_cd: f64,
    pub mean_final_consis: f64,
}

pub fn summarize(rows: &[EvalRow]) -> EvalSummary {
    let n = rows.len();
    let mean = |f: &dyn Fn(&EvalRow) -> f64| {
        if n == 0 {
            f64::NAN
        } else {
            rows.iter().map(f).sum::<f64>() / n as f64
        }
    };
    EvalSummary {
        count: n,
        mean_cd: mean(&|r| r.report.cd),
        mean_fps_cd: mean(&|r| r.report.fps_cd),
        mean_final_consis: mean(&|r| r.final_consis),
    }
}

/// Consistency loss over `k` predictions for one image with independent
/// latent draws. Deterministic generators give exactly 0.
pub fn diversity<R: Rng + ?Sized>(
    model: &Model,
    params: &ModelParams,
    image: &Image,
    k: usize,
    rng: &mut R,
) -> Result<f64> {
    if k < 2 {
        return Err(Error::TooFewViews(k));
    }
    let images = vec![image; k];
    let clouds = match params.kind {
        GeneratorKind::Deterministic => model.generate_batch(params, &images, None)?,
        GeneratorKind::Conditional => {
            let rs: Vec<LatentInput> = (0..k)
                .map(|_| LatentInput::sample(model.config.latent_dim, rng))
                .collect();
            let refs: Vec<&LatentInput> = rs.iter().collect();
            model.generate_batch(params, &images, Some(&refs))?
        }
    };
    consistency_loss(&clouds)
}

/// Mean diversity over every view image of every record.
pub fn corpus_diversity(
    model: &Model,
    params: &ModelParams,
    records: &[&DatasetRecord],
    k: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut count = 0usize;
    for rec in records {
        for view in &rec.views {
            sum += diversity(model, params, &view.image, k, &mut rng)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no images to score".into()));
    }
    Ok(sum / count as f64)
}

/// Pearson correlation; `None` when fewer than two samples or either side
/// has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

pub fn format_r(r: Option<f64>) -> String {
    r.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub episode: usize,
    pub shape_id: String,
    pub mode: InferenceMode,
    pub consis: f64,
    /// Unscaled Chamfer distance to the ground truth.
    pub cd: f64,
}

/// `episodes` inference runs cycling over `records`, each run under every
/// requested mode with the same views and seed.
pub fn run_episodes(
    model: &Model,
    params: &ModelParams,
    records: &[&DatasetRecord],
    episodes: usize,
    n_views: usize,
    modes: &[InferenceMode],
    inference: &InferenceConfig,
    seed: u64,
) -> Result<Vec<Episode>> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(episodes * modes.len());
    for e in 0..episodes {
        let rec = records[e % records.len()];
        let mut rng = episode_rng(seed, e as u64);
        let views = pick_views(rec.views.len(), n_views, &mut rng)?;
        let inf = InferenceConfig {
            seed: rng.gen(),
            ..inference.clone()
        };
        for &mode in modes {
            let row = evaluate_record(model, params, rec, &views, &inf, mode)?;
            out.push(Episode {
                episode: e,
                shape_id: rec.shape_id.clone(),
                mode,
                consis: row.final_consis,
                cd: row.report.cd,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub episodes: Vec<Episode>,
    /// Pearson r over the optimised episodes.
    pub r: Option<f64>,
    /// Mean unscaled CD per mode, in [`InferenceMode::ALL`] order.
    pub mode_means: Vec<(InferenceMode, f64)>,
}

pub fn correlate(
    model: &Model,
    params: &ModelParams,
    records: &[&DatasetRecord],
    episodes: usize,
    n_views: usize,
    inference: &InferenceConfig,
    seed: u64,
) -> Result<CorrelationReport> {
    let eps = run_episodes(model, params, records, episodes, n_views, &InferenceMode::ALL, inference, seed)?;
    let opt: Vec<&Episode> = eps.iter().filter(|e| e.mode == InferenceMode::HeuristicOptimized).collect();
    let xs: Vec<f64> = opt.iter().map(|e| e.consis).collect();
    let ys: Vec<f64> = opt.iter().map(|e| e.cd).collect();
    let mode_means = InferenceMode::ALL
        .iter()
        .map(|&m| {
            let v: Vec<f64> = eps.iter().filter(|e| e.mode == m).map(|e| e.cd).collect();
            let mean = if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
            (m, mean)
        })
        .collect();
    Ok(CorrelationReport {
        r: pearson(&xs, &ys),
        episodes: eps,
        mode_means,
    })
}

impl CorrelationReport {
    pub fn write_scatter<W: Write>(&self, provenance: &Provenance, mut out: W) -> Result<()> {
        writeln!(out, "{}", provenance.header())?;
        writeln!(out, "# pearson_r={}", format_r(self.r))?;
        writeln!(out, "episode,shape_id,mode,consis,cd_x100")?;
        for e in &self.episodes {
            writeln!(
                out,
                "{},{},{},{:.9},{:.9}",
                e.episode,
                e.shape_id,
                e.mode.name(),
                e.consis,
                e.cd * REPORT_SCALE
            )?;
        }
        Ok(())
    }

    pub fn write_summary<W: Write>(&self, provenance: &Provenance, mut out: W) -> Result<()> {
        writeln!(out, "{}", provenance.header())?;
        writeln!(out, "mode,mean_cd_x100")?;
        for (m, v) in &self.mode_means {
            writeln!(out, "{},{:.9}", m.name(), v * REPORT_SCALE)?;
        }
        Ok(())
    }
}

/// Mean metrics for each view count, on shared seeds.
pub fn views_sweep(
    model: &Model,
    params: &ModelParams,
    records: &[&DatasetRecord],
    counts: &[usize],
    cfg: &EvalConfig,
) -> Result<Vec<(usize, EvalSummary)>> {
    counts
        .iter()
        .map(|&n| {
            let rows = evaluate_records(model, params, records, &EvalConfig { n_views: n, ..cfg.clone() })?;
            Ok((n, summarize(&rows)))
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(sweep: &[(usize, EvalSummary)], provenance: &Provenance, mut out: W) -> Result<()> {
    writeln!(out, "{}", provenance.header())?;
    writeln!(out, "n_views,count,mean_cd_x100,mean_fps_cd_x100,mean_consis")?;
    for (n, s) in sweep {
        writeln!(
            out,
            "{n},{},{:.9},{:.9},{:.9}",
            s.count,
            s.mean_cd * REPORT_SCALE,
            s.mean_fps_cd * REPORT_SCALE,
            s.mean_final_consis
        )?;
    }
    Ok(())
}

/// Paired comparison of two models on identical episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedDelta {
    pub count: usize,
    pub mean_first: f64,
    pub mean_second: f64,
    /// `mean_second - mean_first` (unscaled CD).
    pub delta: f64,
    /// Episodes where the second model is strictly better.
    pub second_wins: usize,
}

pub fn paired_delta(first: &[EvalRow], second: &[EvalRow]) -> Result<PairedDelta> {
    if first.len() != second.len() {
        return Err(Error::SizeMismatch {
            left: first.len(),
            right: second.len(),
        });
    }
    if let Some((a, b)) = first.iter().zip(second).find(|(a, b)| a.shape_id != b.shape_id || a.views != b.views) {
        return Err(Error::InvalidArgument(format!(
            "unpaired episodes: {} vs {}",
            a.shape_id, b.shape_id
        )));
    }
    let a = summarize(first);
    let b = summarize(second);
    Ok(PairedDelta {
        count: first.len(),
        mean_first: a.mean_cd,
        mean_second: b.mean_cd,
        delta: b.mean_cd - a.mean_cd,
        second_wins: first.iter().zip(second).filter(|(a, b)| b.report.cd < a.report.cd).count(),
    })
}

impl PairedDelta {
    pub fn write<W: Write>(&self, labels: (&str, &str), provenance: &Provenance, mut out: W) -> Result<()> {
        writeln!(out, "{}", provenance.header())?;
        writeln!(out, "count = {}", self.count)?;
        writeln!(out, "{}_mean_cd_x100 = {:.9}", labels.0, self.mean_first * REPORT_SCALE)?;
        writeln!(out, "{}_mean_cd_x100 = {:.9}", labels.1, self.mean_second * REPORT_SCALE)?;
        writeln!(out, "delta_cd_x100 = {:.9}", self.delta * REPORT_SCALE)?;
        writeln!(out, "{}_wins = {}", labels.1, self.second_wins)?;
        Ok(())
    }
}
