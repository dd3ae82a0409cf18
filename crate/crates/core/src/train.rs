//! Autoencoder pretraining, single-view training and multi-view finetuning.
//!
//! Both generator stages share one step: a batch of items, each one shape
//! seen from one or more views with several random inputs per view. The
//! clouds predicted for the same random-input slot are concatenated across
//! the item's views and the front loss is taken in every view. With a
//! single view this is exactly the single-view objective.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{
    chamfer_var, combined_loss, emd_var, diversity_loss_var, front_loss_var, interpolate_latents, sample_interpolation,
    FrontMetric, LossReport, LossWeights,
};
use crate::model::{cloud_to_tensor, GeneratorKind, LatentInput, Model, ModelConfig, ModelParams};
use crate::synthdata::{DatasetRecord, Split};

/// Adam with bias correction, as published.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: ParamSet,
    v: ParamSet,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: ParamSet::new(),
            v: ParamSet::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that has a gradient in `grads`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads.iter() {
            let Some(p) = params.get_mut(name) else { continue };
            if self.m.get(name).is_none() {
                self.m.insert(name.clone(), Tensor::zeros(g.shape()));
                self.v.insert(name.clone(), Tensor::zeros(g.shape()));
            }
            let m = self.m.get_mut(name).expect("moment");
            for (mi, gi) in m.data_mut().iter_mut().zip(g.data()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.v.get_mut(name).expect("moment");
            for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let (m, v) = (self.m.expect(name), self.v.expect(name));
            for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let mhat = mi / c1;
                let vhat = vi / c2;
                *pi -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Autoencoder,
    SingleView,
    MultiView,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Autoencoder => "autoencoder",
            Stage::SingleView => "single_view",
            Stage::MultiView => "multi_view",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "autoencoder" => Ok(Stage::Autoencoder),
            "single_view" => Ok(Stage::SingleView),
            "multi_view" => Ok(Stage::MultiView),
            other => Err(Error::InvalidArgument(format!("unknown stage {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub iterations: usize,
    pub batch_shapes: usize,
    pub views_per_shape: usize,
    pub noises_per_view: usize,
    pub weights: LossWeights,
    pub lr: f64,
    pub seed: u64,
    pub metric: FrontMetric,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    /// Multi-view only: take the diversity loss on the concatenated clouds
    /// rather than per view.
    pub concat_diversity: bool,
    /// Write measured wall time into the log; off keeps logs reproducible.
    pub timing: bool,
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// Published schedule: 40k single-view iterations with 16 images and 5
    /// random inputs each; multi-view batches of 2 shapes × 8 views × 5
    /// inputs; Adam at 1e-4.
    pub fn paper(stage: Stage) -> Self {
        let base = Self {
            stage,
            iterations: 40_000,
            batch_shapes: 16,
            views_per_shape: 1,
            noises_per_view: 5,
            weights: LossWeights::STAGE1,
            lr: 1e-4,
            seed: 0,
            metric: FrontMetric::Chamfer,
            critic_steps: 1,
            concat_diversity: false,
            timing: false,
            checkpoint_every: 0,
            checkpoint_dir: None,
        };
        match stage {
            Stage::Autoencoder => Self {
                batch_shapes: 32,
                metric: FrontMetric::Emd,
                ..base
            },
            Stage::SingleView => base,
            Stage::MultiView => Self {
                batch_shapes: 2,
                views_per_shape: 8,
                weights: LossWeights::STAGE2,
                ..base
            },
        }
    }

    /// Desk-scale schedule for the 200-shape, 64-point corpus, with α
    /// rescaled to the default model's point count and latent size.
    pub fn desk(stage: Stage) -> Self {
        let mut paper = Self::paper(stage);
        let dims = ModelConfig::default();
        paper.weights = paper.weights.at_scale(dims.points, dims.latent_dim);
        match stage {
            Stage::Autoencoder => Self {
                iterations: 1_500,
                batch_shapes: 16,
                lr: 1e-3,
                metric: FrontMetric::Emd,
                ..paper
            },
            Stage::SingleView => Self {
                iterations: 2_000,
                batch_shapes: 8,
                lr: 1e-3,
                ..paper
            },
            Stage::MultiView => Self {
                iterations: 3_000,
                batch_shapes: 2,
                views_per_shape: 4,
                lr: 5e-4,
                ..paper
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.iterations == 0 || self.batch_shapes == 0 || self.views_per_shape == 0 || self.noises_per_view == 0 {
            return Err(Error::InvalidArgument(
                "iterations, batch_shapes, views_per_shape and noises_per_view must be >= 1".into(),
            ));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        Ok(())
    }
}

/// Per-iteration loss reports.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub rows: Vec<(usize, LossReport, u128)>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", LossReport::CSV_HEADER)?;
        for (iter, r, ms) in &self.rows {
            writeln!(out, "{}", r.csv_row(*iter, *ms))?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf8")
    }

    pub fn last(&self) -> Option<&LossReport> {
        self.rows.last().map(|r| &r.1)
    }
}

const DIVERGENCE_PATIENCE: usize = 3;

/// Aborts after several consecutive non-finite losses.
#[derive(Debug, Default)]
struct DivergenceGuard {
    streak: usize,
}

impl DivergenceGuard {
    /// `Ok(true)` if the step may be applied.
    fn check(&mut self, iteration: usize, loss: f64, grads_finite: bool) -> Result<bool> {
        if loss.is_finite() && grads_finite {
            self.streak = 0;
            return Ok(true);
        }
        self.streak += 1;
        if self.streak >= DIVERGENCE_PATIENCE {
            return Err(Error::Diverged {
                iteration,
                detail: format!("{} consecutive non-finite losses (last {loss})", self.streak),
            });
        }
        Ok(false)
    }
}

fn train_records(corpus: &[DatasetRecord]) -> Vec<&DatasetRecord> {
    corpus.iter().filter(|r| r.split == Split::Train).collect()
}

/// Mean of scalar vars.
fn mean_of(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let flat = terms
        .iter()
        .map(|&t| tape.reshape(t, &[1]))
        .collect::<Result<Vec<_>>>()?;
    let all = tape.concat(&flat, 0)?;
    Ok(tape.mean(all))
}

fn maybe_checkpoint(cfg: &TrainConfig, iter: usize, params: &ParamSet) -> Result<()> {
    if let Some(dir) = &cfg.checkpoint_dir {
        if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 {
            fs::create_dir_all(dir)?;
            let path = dir.join(format!("{}_{:06}.ckpt", cfg.stage.name(), iter + 1));
            params.write_checkpoint(BufWriter::new(fs::File::create(path)?))?;
        }
    }
    Ok(())
}

/// Trains `E_S` and the shape decoder to reconstruct training clouds under
/// `cfg.metric`. Returns `(encoder, decoder)`.
pub fn pretrain_autoencoder(
    model: &Model,
    corpus: &[DatasetRecord],
    cfg: &TrainConfig,
) -> Result<(ParamSet, ParamSet, TrainLog)> {
    cfg.validate()?;
    let shapes = train_records(corpus);
    if shapes.is_empty() {
        return Err(Error::InvalidArgument("autoencoder needs at least one training shape".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (enc, dec) = model.init_autoencoder(&mut rng);
    let mut ae = enc;
    ae.merge(&dec);
    let mut opt = Adam::new(cfg.lr);
    let mut log = TrainLog::default();
    let mut guard = DivergenceGuard::default();
    let start = Instant::now();
    for iter in 0..cfg.iterations {
        let mut tape = Tape::new();
        let bound = ae.bind(&mut tape, true);
        let batch: Vec<usize> = (0..cfg.batch_shapes).map(|_| rng.gen_range(0..shapes.len())).collect();
        let mut latents = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for &i in &batch {
            let c = tape.constant(cloud_to_tensor(&shapes[i].cloud));
            latents.push(model.encode_shape_var(&mut tape, &bound, c)?);
            targets.push(c);
        }
        let z = tape.concat(&latents, 0)?;
        let recon = model.decode_latent(&mut tape, &bound, z)?;
        let terms = recon
            .iter()
            .zip(&targets)
            .map(|(&r, &t)| match cfg.metric {
                FrontMetric::Chamfer => chamfer_var(&mut tape, r, t),
                FrontMetric::Emd => emd_var(&mut tape, r, t),
            })
            .collect::<Result<Vec<_>>>()?;
        let loss = mean_of(&mut tape, &terms)?;
        let value = tape.scalar_value(loss);
        let grads = tape.backward(loss)?;
        let g = bound.collect(&grads);
        if guard.check(iter, value, g.is_finite())? {
            opt.step(&mut ae, &g);
        }
        let ms = if cfg.timing { start.elapsed().as_millis() } else { 0 };
        // The reconstruction Chamfer is logged in the `front` column.
        log.rows.push((iter, combined_loss(value, 0.0, 0.0, &cfg.weights), ms));
        maybe_checkpoint(cfg, iter, &ae)?;
    }
    Ok((ae.subset("enc."), ae.subset("dec."), log))
}

/// Mean reconstruction Chamfer of `E_S` / decoder over the given records.
pub fn reconstruction_error(
    model: &Model,
    encoder: &ParamSet,
    decoder: &ParamSet,
    records: &[&DatasetRecord],
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut sum = 0.0;
    for r in records {
        let z = model.encode_shape(encoder, &r.cloud)?;
        let recon = model.decode_shape(decoder, &z)?;
        sum += crate::metrics::chamfer_total(&recon, &r.cloud)?;
    }
    Ok(sum / records.len() as f64)
}

/// One batch element: a shape and the views it is seen from.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub record: usize,
    pub views: Vec<usize>,
}

fn sample_batch<R: Rng + ?Sized>(
    corpus: &[&DatasetRecord],
    cfg: &TrainConfig,
    views: usize,
    rng: &mut R,
) -> Result<Vec<BatchItem>> {
    (0..cfg.batch_shapes)
        .map(|_| {
            let record = rng.gen_range(0..corpus.len());
            let available = corpus[record].views.len();
            if available < views {
                return Err(Error::InvalidArgument(format!(
                    "{} has {available} views, {views} requested",
                    corpus[record].shape_id
                )));
            }
            let mut v = sample_indices(rng, available, views).into_vec();
            v.sort_unstable();
            Ok(BatchItem { record, views: v })
        })
        .collect()
}

/// Forward pass, losses and gradients of one generator step.
struct StepOutcome {
    report: LossReport,
    generator_grads: ParamSet,
    /// Pre-decoder latents, one row per generated cloud, item-major.
    z_fake: Tensor,
}

fn generator_step(
    model: &Model,
    params: &ModelParams,
    corpus: &[&DatasetRecord],
    items: &[BatchItem],
    noises: &[Vec<Vec<LatentInput>>],
    cfg: &TrainConfig,
) -> Result<StepOutcome> {
    let deterministic = params.kind == GeneratorKind::Deterministic;
    let k_per_view = if deterministic { 1 } else { cfg.noises_per_view };
    let mut tape = Tape::new();
    let gen = params.generator.bind(&mut tape, true);
    let dec = params.decoder.bind(&mut tape, false);
    let px = model.config.image_pixels();

    let mut image_rows = Vec::new();
    let mut noise_rows = Vec::new();
    for (item, item_noise) in items.iter().zip(noises) {
        let rec = corpus[item.record];
        for (slot, &v) in item.views.iter().enumerate() {
            for k in 0..k_per_view {
                image_rows.extend_from_slice(&rec.views[v].image.pixels);
                if !deterministic {
                    noise_rows.extend_from_slice(&item_noise[slot][k].0);
                }
            }
        }
    }
    let rows = image_rows.len() / px;
    let images = tape.constant(Tensor::matrix(rows, px, image_rows)?);
    let noise = if deterministic {
        None
    } else {
        Some(tape.constant(Tensor::matrix(rows, model.config.latent_dim, noise_rows)?))
    };
    let out = model.generator_forward(&mut tape, &gen, &dec, images, noise)?;

    let mut front_terms = Vec::new();
    let mut div_terms = Vec::new();
    let mut row = 0;
    for (item, item_noise) in items.iter().zip(noises) {
        let rec = corpus[item.record];
        let nv = item.views.len();
        // clouds[slot][k]
        let clouds: Vec<Vec<Var>> = (0..nv)
            .map(|s| (0..k_per_view).map(|k| out.clouds[row + s * k_per_view + k]).collect())
            .collect();
        row += nv * k_per_view;
        let mut concatenated = Vec::with_capacity(k_per_view);
        for k in 0..k_per_view {
            let parts: Vec<Var> = clouds.iter().map(|c| c[k]).collect();
            let joined = if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 0)? };
            concatenated.push(joined);
            for &v in &item.views {
                let gt_front = rec.front_cloud(v);
                let cam = &rec.views[v].camera;
                let term = match front_loss_var(&mut tape, joined, &gt_front, cam, cfg.metric) {
                    Err(Error::EmptyFront) => {
                        // Nothing visible: pull the whole prediction onto the front part.
                        let gt = tape.constant(cloud_to_tensor(&gt_front));
                        chamfer_var(&mut tape, joined, gt)?
                    }
                    other => other?,
                };
                front_terms.push(term);
            }
        }
        if deterministic || cfg.weights.beta == 0.0 {
            continue;
        }
        let alpha = cfg.weights.alpha;
        if cfg.concat_diversity && nv > 1 {
            let joined_noise: Vec<LatentInput> = (0..k_per_view)
                .map(|k| LatentInput(item_noise.iter().flat_map(|per_view| per_view[k].0.clone()).collect()))
                .collect();
            for a in 0..k_per_view {
                for b in a + 1..k_per_view {
                    div_terms.push(diversity_loss_var(
                        &mut tape,
                        &joined_noise[a],
                        &joined_noise[b],
                        concatenated[a],
                        concatenated[b],
                        alpha,
                    )?);
                }
            }
        } else {
            for (slot, per_view) in clouds.iter().enumerate() {
                for a in 0..k_per_view {
                    for b in a + 1..k_per_view {
                        div_terms.push(diversity_loss_var(
                            &mut tape,
                            &item_noise[slot][a],
                            &item_noise[slot][b],
                            per_view[a],
                            per_view[b],
                            alpha,
                        )?);
                    }
                }
            }
        }
    }

    let front = mean_of(&mut tape, &front_terms)?;
    let mut total = front;
    let div = if div_terms.is_empty() {
        None
    } else {
        let d = mean_of(&mut tape, &div_terms)?;
        let weighted = tape.scale(d, cfg.weights.beta);
        total = tape.add(total, weighted)?;
        Some(d)
    };
    let gan = if cfg.weights.gamma > 0.0 {
        let critic = params.critic.bind(&mut tape, false);
        let scores = model.critic_forward(&mut tape, &critic, out.latent)?;
        let mean = tape.mean(scores);
        let g = tape.scale(mean, -1.0);
        let weighted = tape.scale(g, cfg.weights.gamma);
        total = tape.add(total, weighted)?;
        Some(g)
    } else {
        None
    };
    let values = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar_value(v));
    let report = combined_loss(tape.scalar_value(front), values(div), values(gan), &cfg.weights);
    let grads = tape.backward(total)?;
    Ok(StepOutcome {
        report,
        generator_grads: gen.collect(&grads),
        z_fake: tape.value(out.latent).clone(),
    })
}

/// One critic update on `mean D(fake) − mean D(real) + λ·GP`.
fn critic_step<R: Rng + ?Sized>(
    model: &Model,
    params: &mut ModelParams,
    opt: &mut Adam,
    z_fake: &Tensor,
    z_real: &Tensor,
    lambda: f64,
    rng: &mut R,
) -> Result<f64> {
    let nf = z_fake.dims2().expect("latent matrix").0;
    let eps = sample_interpolation(nf, rng);
    let zhat = interpolate_latents(z_fake, z_real, &eps)?;
    let mut tape = Tape::new();
    let cb = params.critic.bind(&mut tape, true);
    let fake = tape.constant(z_fake.clone());
    let real = tape.constant(z_real.clone());
    let df = model.critic_forward(&mut tape, &cb, fake)?;
    let dr = model.critic_forward(&mut tape, &cb, real)?;
    let mf = tape.mean(df);
    let mr = tape.mean(dr);
    let wd = tape.sub(mf, mr)?;
    let zh = tape.constant(zhat);
    let gp = model.gradient_penalty(&mut tape, &cb, zh)?;
    let pen = tape.scale(gp, lambda);
    let loss = tape.add(wd, pen)?;
    let value = tape.scalar_value(loss);
    let grads = cb.collect(&tape.backward(loss)?);
    if value.is_finite() && grads.is_finite() {
        opt.step(&mut params.critic, &grads);
    }
    Ok(value)
}

fn real_latents(model: &Model, params: &ModelParams, corpus: &[&DatasetRecord], items: &[BatchItem]) -> Result<Tensor> {
    let d = model.config.shape_latent;
    let mut data = Vec::with_capacity(items.len() * d);
    for it in items {
        data.extend(model.encode_shape(&params.encoder, &corpus[it.record].cloud)?);
    }
    Tensor::matrix(items.len(), d, data)
}

/// Trains the generator (and critic) with the given stage configuration.
/// The decoder and shape encoder stay frozen.
pub fn train_generator(
    model: &Model,
    params: &mut ModelParams,
    corpus: &[DatasetRecord],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    let views = match cfg.stage {
        Stage::SingleView => 1,
        Stage::MultiView => cfg.views_per_shape,
        Stage::Autoencoder => {
            return Err(Error::InvalidArgument("use pretrain_autoencoder for the autoencoder stage".into()))
        }
    };
    let shapes = train_records(corpus);
    if shapes.is_empty() {
        return Err(Error::InvalidArgument("no training shapes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gen_opt = Adam::new(cfg.lr);
    let mut critic_opt = Adam::new(cfg.lr);
    let mut guard = DivergenceGuard::default();
    let mut log = TrainLog::default();
    let start = Instant::now();
    let deterministic = params.kind == GeneratorKind::Deterministic;
    for iter in 0..cfg.iterations {
        let items = sample_batch(&shapes, cfg, views, &mut rng)?;
        let noises: Vec<Vec<Vec<LatentInput>>> = items
            .iter()
            .map(|it| {
                it.views
                    .iter()
                    .map(|_| {
                        if deterministic {
                            Vec::new()
                        } else {
                            (0..cfg.noises_per_view)
                                .map(|_| LatentInput::sample(model.config.latent_dim, &mut rng))
                                .collect()
                        }
                    })
                    .collect()
            })
            .collect();
        let outcome = generator_step(model, params, &shapes, &items, &noises, cfg)?;
        if guard.check(iter, outcome.report.total, outcome.generator_grads.is_finite())? {
            gen_opt.step(&mut params.generator, &outcome.generator_grads);
            if cfg.weights.gamma > 0.0 {
                let z_real = real_latents(model, params, &shapes, &items)?;
                for _ in 0..cfg.critic_steps {
                    critic_step(model, params, &mut critic_opt, &outcome.z_fake, &z_real, cfg.weights.lambda, &mut rng)?;
                }
            }
        }
        let ms = if cfg.timing { start.elapsed().as_millis() } else { 0 };
        log.rows.push((iter, outcome.report, ms));
        if cfg.checkpoint_dir.is_some() {
            maybe_checkpoint(cfg, iter, &params.to_param_set())?;
        }
    }
    Ok(log)
}

/// Single-view stage.
pub fn train_single_view(
    model: &Model,
    params: &mut ModelParams,
    corpus: &[DatasetRecord],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if cfg.stage != Stage::SingleView {
        return Err(Error::InvalidArgument(format!("stage {} is not single_view", cfg.stage.name())));
    }
    train_generator(model, params, corpus, cfg)
}

/// Multi-view finetuning, starting from `params` (stage-1 weights or a
/// fresh generator).
pub fn train_multi_view(
    model: &Model,
    params: &mut ModelParams,
    corpus: &[DatasetRecord],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if cfg.stage != Stage::MultiView {
        return Err(Error::InvalidArgument(format!("stage {} is not multi_view", cfg.stage.name())));
    }
    train_generator(model, params, corpus, cfg)
}

/// Everything needed for the full pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub kind: GeneratorKind,
    pub autoencoder: TrainConfig,
    pub single_view: TrainConfig,
    /// `None` skips finetuning.
    pub multi_view: Option<TrainConfig>,
    /// Initialise stage 2 from stage 1; otherwise stage 2 starts from a
    /// fresh generator.
    pub stage1_init: bool,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn desk(kind: GeneratorKind) -> Self {
        Self {
            kind,
            autoencoder: TrainConfig::desk(Stage::Autoencoder),
            single_view: TrainConfig::desk(Stage::SingleView),
            multi_view: Some(TrainConfig::desk(Stage::MultiView)),
            stage1_init: true,
            seed: 0,
        }
    }
}

/// Logs of each stage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineLogs {
    pub autoencoder: TrainLog,
    pub single_view: TrainLog,
    pub multi_view: Option<TrainLog>,
}

/// Initial parameters with a pretrained, frozen autoencoder.
pub fn init_with_autoencoder(
    model: &Model,
    kind: GeneratorKind,
    encoder: &ParamSet,
    decoder: &ParamSet,
    seed: u64,
) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = model.init(kind, &mut rng);
    params.encoder = encoder.clone();
    params.decoder = decoder.clone();
    params
}

/// Generator stages on top of an already trained autoencoder.
pub fn train_generator_stages(
    model: &Model,
    corpus: &[DatasetRecord],
    cfg: &PipelineConfig,
    encoder: &ParamSet,
    decoder: &ParamSet,
) -> Result<(ModelParams, TrainLog, Option<TrainLog>)> {
    let mut params = init_with_autoencoder(model, cfg.kind, encoder, decoder, cfg.seed);
    let fresh = params.clone();
    let s1 = train_single_view(model, &mut params, corpus, &cfg.single_view)?;
    let s2 = match &cfg.multi_view {
        Some(mv) => {
            if !cfg.stage1_init {
                params = fresh;
            }
            Some(train_multi_view(model, &mut params, corpus, mv)?)
        }
        None => None,
    };
    Ok((params, s1, s2))
}

/// Autoencoder, then the generator stages.
pub fn train_pipeline(model: &Model, corpus: &[DatasetRecord], cfg: &PipelineConfig) -> Result<(ModelParams, PipelineLogs)> {
    let (enc, dec, ae_log) = pretrain_autoencoder(model, corpus, &cfg.autoencoder)?;
    let (params, s1, s2) = train_generator_stages(model, corpus, cfg, &enc, &dec)?;
    Ok((
        params,
        PipelineLogs {
            autoencoder: ae_log,
            single_view: s1,
            multi_view: s2,
        },
    ))
}
