//! Multi-view reconstruction with a frozen conditional generator: pick the
//! best of several random latent groups, then descend the consistency loss
//! over the latent inputs alone.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::losses::{consistency_loss, consistency_loss_var};
use crate::model::{GeneratorKind, Image, LatentInput, Model, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    /// Random latent groups tried by the heuristic initialisation.
    pub groups: usize,
    /// Cap on gradient steps.
    pub opt_steps: usize,
    /// Initial step size of every gradient step.
    pub opt_lr: f64,
    /// Stop once the loss fell by less than this fraction over
    /// `convergence_window` accepted steps.
    pub convergence_tol: f64,
    pub convergence_window: usize,
    /// Step halvings tried before giving up on a step.
    pub max_halvings: usize,
    /// Keep every latent on the sphere of its initial norm after each step.
    pub keep_norm: bool,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            groups: 5,
            opt_steps: 300,
            opt_lr: 0.5,
            convergence_tol: 1e-4,
            convergence_window: 10,
            max_halvings: 10,
            keep_norm: false,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 {
            return Err(Error::InvalidArgument("groups must be >= 1".into()));
        }
        if !(self.opt_lr > 0.0) || !(self.convergence_tol >= 0.0) || self.convergence_window == 0 {
            return Err(Error::InvalidArgument(
                "opt_lr must be positive, convergence_tol >= 0 and convergence_window >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// How the latent inputs are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMode {
    /// One random group, no search, no optimisation.
    Random,
    /// Best of `groups` random groups.
    Heuristic,
    /// Best group, then gradient descent on the consistency loss.
    HeuristicOptimized,
}

impl InferenceMode {
    pub const ALL: [InferenceMode; 3] = [
        InferenceMode::Random,
        InferenceMode::Heuristic,
        InferenceMode::HeuristicOptimized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InferenceMode::Random => "no-heuris",
            InferenceMode::Heuristic => "heuris",
            InferenceMode::HeuristicOptimized => "heuris+bp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    /// Loss after the step (unchanged if it was rejected).
    pub consis: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InferenceTrace {
    /// Consistency loss of every sampled group.
    pub group_losses: Vec<f64>,
    pub chosen_group: usize,
    pub initial: Vec<LatentInput>,
    pub initial_consis: f64,
    pub steps: Vec<TraceStep>,
    pub latents: Vec<LatentInput>,
    pub final_consis: f64,
}

impl InferenceTrace {
    pub const CSV_HEADER: &'static str = "step,consis,accepted";

    pub fn accepted_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.accepted).count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        writeln!(out, "0,{:.12e},1", self.initial_consis)?;
        for s in &self.steps {
            writeln!(out, "{},{:.12e},{}", s.step, s.consis, u8::from(s.accepted))?;
        }
        Ok(())
    }
}

fn check_images(model: &Model, images: &[&Image]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::TooFewViews(0));
    }
    let px = model.config.image_pixels();
    if let Some(bad) = images.iter().find(|i| i.pixels.len() != px) {
        return Err(Error::shape(
            "reconstruct",
            format!("image has {} pixels, model expects {px}", bad.pixels.len()),
        ));
    }
    Ok(())
}

fn require_conditional(params: &ModelParams) -> Result<()> {
    if params.kind != GeneratorKind::Conditional {
        return Err(Error::InvalidArgument("latent optimisation needs a conditional generator".into()));
    }
    Ok(())
}

/// Consistency loss of the shapes generated from `images` with `latents`
/// (0 for a single view).
pub fn group_consistency(model: &Model, params: &ModelParams, images: &[&Image], latents: &[LatentInput]) -> Result<f64> {
    let refs: Vec<&LatentInput> = latents.iter().collect();
    let clouds = model.generate_batch(params, images, Some(&refs))?;
    if clouds.len() < 2 {
        return Ok(0.0);
    }
    consistency_loss(&clouds)
}

/// Samples `cfg.groups` independent latent groups and returns the one with
/// the lowest consistency loss, its index, and every group's loss. Ties go
/// to the earlier group.
pub fn heuristic_init<R: Rng + ?Sized>(
    model: &Model,
    params: &ModelParams,
    images: &[&Image],
    cfg: &InferenceConfig,
    rng: &mut R,
) -> Result<(Vec<LatentInput>, usize, Vec<f64>)> {
    let groups: Vec<Vec<LatentInput>> = (0..cfg.groups)
        .map(|_| {
            images
                .iter()
                .map(|_| LatentInput::sample(model.config.latent_dim, rng))
                .collect()
        })
        .collect();
    select_group(model, params, images, groups)
}

/// The lowest-loss group among explicit candidates.
pub fn select_group(
    model: &Model,
    params: &ModelParams,
    images: &[&Image],
    groups: Vec<Vec<LatentInput>>,
) -> Result<(Vec<LatentInput>, usize, Vec<f64>)> {
    require_conditional(params)?;
    check_images(model, images)?;
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no latent groups".into()));
    }
    let losses = groups
        .iter()
        .map(|g| group_consistency(model, params, images, g))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = i;
        }
    }
    let chosen = groups.into_iter().nth(best).expect("index in range");
    Ok((chosen, best, losses))
}

/// Consistency loss and its gradient with respect to the stacked latents.
fn loss_and_gradient(model: &Model, params: &ModelParams, images: &Tensor, r: &Tensor) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let gen = params.generator.bind(&mut tape, false);
    let dec = params.decoder.bind(&mut tape, false);
    let iv = tape.constant(images.clone());
    let rv = tape.leaf(r.clone());
    let out = model.generator_forward(&mut tape, &gen, &dec, iv, Some(rv))?;
    let loss = consistency_loss_var(&mut tape, &out.clouds)?;
    let value = tape.scalar_value(loss);
    let grad = tape.backward(loss)?.wrt(rv);
    Ok((value, grad))
}

fn loss_only(model: &Model, params: &ModelParams, images: &Tensor, r: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let gen = params.generator.bind(&mut tape, false);
    let dec = params.decoder.bind(&mut tape, false);
    let iv = tape.constant(images.clone());
    let rv = tape.constant(r.clone());
    let out = model.generator_forward(&mut tape, &gen, &dec, iv, Some(rv))?;
    let loss = consistency_loss_var(&mut tape, &out.clouds)?;
    Ok(tape.scalar_value(loss))
}

fn project_norms(r: &mut Tensor, norms: &[f64]) {
    let cols = r.shape()[1];
    for (row, &target) in r.data_mut().chunks_mut(cols).zip(norms) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v *= target / n);
        }
    }
}

fn stack_images(images: &[&Image]) -> Result<Tensor> {
    let px = images[0].pixels.len();
    Tensor::matrix(images.len(), px, images.iter().flat_map(|i| i.pixels.iter().copied()).collect())
}

fn stack_latents(latents: &[LatentInput]) -> Result<Tensor> {
    let d = latents[0].dim();
    Tensor::matrix(latents.len(), d, latents.iter().flat_map(|r| r.0.iter().copied()).collect())
}

fn unstack_latents(t: &Tensor) -> Vec<LatentInput> {
    let (rows, _) = t.dims2().expect("latent matrix");
    (0..rows).map(|i| LatentInput(t.row(i).to_vec())).collect()
}

/// Gradient descent with backtracking on the consistency loss over the
/// latent inputs; `params` is never modified. A step is accepted only if
/// the loss does not increase; after `max_halvings` failed halvings the
/// search stops. Always returns the best latents found.
pub fn optimize_latents(
    model: &Model,
    params: &ModelParams,
    images: &[&Image],
    init: &[LatentInput],
    cfg: &InferenceConfig,
) -> Result<(Vec<LatentInput>, InferenceTrace)> {
    cfg.validate()?;
    require_conditional(params)?;
    check_images(model, images)?;
    if init.len() != images.len() {
        return Err(Error::SizeMismatch {
            left: images.len(),
            right: init.len(),
        });
    }
    let checksum = params.to_param_set().checksum();
    let mut trace = InferenceTrace {
        initial: init.to_vec(),
        latents: init.to_vec(),
        ..InferenceTrace::default()
    };
    if images.len() < 2 {
        return Ok((init.to_vec(), trace));
    }
    let imgs = stack_images(images)?;
    let mut r = stack_latents(init)?;
    let norms: Vec<f64> = init.iter().map(|l| l.0.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let (mut loss, mut grad) = loss_and_gradient(model, params, &imgs, &r)?;
    trace.initial_consis = loss;
    let mut history = vec![loss];
    for step in 1..=cfg.opt_steps {
        if loss == 0.0 || grad.data().iter().all(|&g| g == 0.0) {
            break;
        }
        let mut lr = cfg.opt_lr;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let mut trial = r.clone();
            for (t, g) in trial.data_mut().iter_mut().zip(grad.data()) {
                *t -= lr * g;
            }
            if cfg.keep_norm {
                project_norms(&mut trial, &norms);
            }
            let l = loss_only(model, params, &imgs, &trial)?;
            if l.is_finite() && l <= loss {
                accepted = Some((trial, l));
                break;
            }
            lr *= 0.5;
        }
        let Some((trial, l)) = accepted else {
            trace.steps.push(TraceStep {
                step,
                consis: loss,
                accepted: false,
            });
            break;
        };
        r = trial;
        let (nl, ng) = loss_and_gradient(model, params, &imgs, &r)?;
        debug_assert_eq!(nl, l);
        loss = nl;
        grad = ng;
        history.push(loss);
        trace.steps.push(TraceStep {
            step,
            consis: loss,
            accepted: true,
        });
        let w = cfg.convergence_window;
        if history.len() > w {
            let before = history[history.len() - 1 - w];
            if before <= 0.0 || (before - loss) / before < cfg.convergence_tol {
                break;
            }
        }
    }
    debug_assert_eq!(params.to_param_set().checksum(), checksum, "generator parameters changed");
    if params.to_param_set().checksum() != checksum {
        return Err(Error::InvalidArgument("generator parameters changed during inference".into()));
    }
    let latents = unstack_latents(&r);
    trace.latents = latents.clone();
    trace.final_consis = loss;
    Ok((latents, trace))
}

/// Output of a multi-view reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// One cloud per input view.
    pub per_view: Vec<PointCloud>,
    /// Concatenation of `per_view`.
    pub cloud: PointCloud,
    pub trace: InferenceTrace,
}

/// Reconstruction from uncalibrated views of one object. Deterministic
/// generators simply concatenate their per-view outputs.
pub fn reconstruct(model: &Model, params: &ModelParams, images: &[&Image], cfg: &InferenceConfig) -> Result<Reconstruction> {
    reconstruct_with_mode(model, params, images, cfg, InferenceMode::HeuristicOptimized)
}

pub fn reconstruct_with_mode(
    model: &Model,
    params: &ModelParams,
    images: &[&Image],
    cfg: &InferenceConfig,
    mode: InferenceMode,
) -> Result<Reconstruction> {
    cfg.validate()?;
    check_images(model, images)?;
    if params.kind == GeneratorKind::Deterministic {
        let per_view = model.generate_batch(params, images, None)?;
        let consis = if per_view.len() > 1 { consistency_loss(&per_view)? } else { 0.0 };
        return Ok(Reconstruction {
            cloud: PointCloud::concat(&per_view),
            per_view,
            trace: InferenceTrace {
                initial_consis: consis,
                final_consis: consis,
                ..InferenceTrace::default()
            },
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (latents, trace) = match mode {
        InferenceMode::Random => {
            let group: Vec<LatentInput> = images
                .iter()
                .map(|_| LatentInput::sample(model.config.latent_dim, &mut rng))
                .collect();
            let l = group_consistency(model, params, images, &group)?;
            let trace = InferenceTrace {
                group_losses: vec![l],
                initial: group.clone(),
                initial_consis: l,
                latents: group.clone(),
                final_consis: l,
                ..InferenceTrace::default()
            };
            (group, trace)
        }
        InferenceMode::Heuristic | InferenceMode::HeuristicOptimized => {
            let (group, chosen, losses) = heuristic_init(model, params, images, cfg, &mut rng)?;
            let l = losses[chosen];
            if mode == InferenceMode::Heuristic || images.len() < 2 {
                let trace = InferenceTrace {
                    group_losses: losses,
                    chosen_group: chosen,
                    initial: group.clone(),
                    initial_consis: l,
                    latents: group.clone(),
                    final_consis: l,
                    ..InferenceTrace::default()
                };
                (group, trace)
            } else {
                let (latents, mut trace) = optimize_latents(model, params, images, &group, cfg)?;
                trace.group_losses = losses;
                trace.chosen_group = chosen;
                (latents, trace)
            }
        }
    };
    let refs: Vec<&LatentInput> = latents.iter().collect();
    let per_view = model.generate_batch(params, images, Some(&refs))?;
    Ok(Reconstruction {
        cloud: PointCloud::concat(&per_view),
        per_view,
        trace,
    })
}
