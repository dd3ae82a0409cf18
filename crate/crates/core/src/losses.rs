//! Training and inference objectives.
//!
//! Every loss comes in two forms: a tape builder (`*_var`) used for
//! training and latent optimization, and a plain value function. Discrete
//! choices (view-based sampling indices, nearest neighbours, EMD matchings,
//! FPS subsets) are computed from the forward values and held fixed, so
//! gradients flow through the coordinates of the selected points only.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::{Camera, PointCloud};
use crate::metrics::{self, chamfer_total, emd, fps, fps_start};
use crate::model::{cloud_to_tensor, tensor_to_cloud, LatentInput, Model, ModelParams};
use crate::render::view_based_sample;

/// Weights of the combined objective and the diversity margin scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Diversity margin scale (α).
    pub alpha: f64,
    /// Diversity weight (β).
    pub beta: f64,
    /// Adversarial weight (γ).
    pub gamma: f64,
    /// Gradient-penalty weight (λ).
    pub lambda: f64,
}

impl LossWeights {
    /// Single-view stage: α₁ = 0.2, β₁ = 10, γ = 0.1, λ = 10.
    pub const STAGE1: LossWeights = LossWeights {
        alpha: 0.2,
        beta: 10.0,
        gamma: 0.1,
        lambda: 10.0,
    };

    /// Multi-view finetuning: α₂ = 0.1, β₂ = 1, γ = 0.1, λ = 10.
    pub const STAGE2: LossWeights = LossWeights {
        alpha: 0.1,
        beta: 1.0,
        gamma: 0.1,
        lambda: 10.0,
    };

    /// Highly diverse variant (diversity on concatenated clouds): α = 15, β = 0.5.
    pub const HIGHLY_DIVERSE: LossWeights = LossWeights {
        alpha: 15.0,
        beta: 0.5,
        gamma: 0.1,
        lambda: 10.0,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.lambda];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }

    /// Moves the diversity weights from a `reference_points`-point,
    /// `reference_latent_dim` setting to another one. The margin ‖r1 − r2‖
    /// grows like √dim and EMD is summed over points, so α is scaled to keep
    /// the per-point spread that satisfies the hinge; β is divided by the same
    /// factor to keep the per-point gradient β·α·∂EMD of an active hinge.
    pub fn rescale_diversity(self, points: usize, latent_dim: usize, reference_points: usize, reference_latent_dim: usize) -> Self {
        let scale = (reference_points as f64 / points as f64) * (latent_dim as f64 / reference_latent_dim as f64).sqrt();
        Self {
            alpha: self.alpha * scale,
            beta: self.beta / scale,
            ..self
        }
    }

    /// `rescale_diversity` from the published 2048-point, 128-dim setting.
    pub fn at_scale(self, points: usize, latent_dim: usize) -> Self {
        self.rescale_diversity(points, latent_dim, 2048, 128)
    }
}

/// Values of each term of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub front: f64,
    pub div: f64,
    pub gan: f64,
    pub consis: f64,
    pub total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "iter,front,div,gan,total,wall_ms";

    pub fn csv_row(&self, iter: usize, wall_ms: u128) -> String {
        format!(
            "{iter},{:.12e},{:.12e},{:.12e},{:.12e},{wall_ms}",
            self.front, self.div, self.gan, self.total
        )
    }
}

/// `front + β·div + γ·gan`.
pub fn combined_loss(front: f64, div: f64, gan: f64, weights: &LossWeights) -> LossReport {
    LossReport {
        front,
        div,
        gan,
        consis: 0.0,
        total: front + weights.beta * div + weights.gamma * gan,
    }
}

/// Metric used by the front constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontMetric {
    Chamfer,
    Emd,
}

impl std::str::FromStr for FrontMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cd" | "chamfer" => Ok(FrontMetric::Chamfer),
            "emd" => Ok(FrontMetric::Emd),
            other => Err(Error::InvalidArgument(format!("unknown front metric {other}"))),
        }
    }
}

fn value_cloud(tape: &Tape, v: Var) -> Result<PointCloud> {
    tensor_to_cloud(tape.value(v))
}

/// First-order Chamfer distance (both directions summed) between `n × 3`
/// and `m × 3` vars.
pub fn chamfer_var(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sqdist_matrix(a, b)?;
    let (ab, _) = tape.reduce_min_with_index(d, 1)?;
    let (ba, _) = tape.reduce_min_with_index(d, 0)?;
    let ab = tape.sqrt(ab);
    let ba = tape.sqrt(ba);
    let s1 = tape.reduce_sum(ab);
    let s2 = tape.reduce_sum(ba);
    tape.add(s1, s2)
}

/// EMD (squared cost) between equal-size clouds, matching frozen at the
/// forward optimum.
pub fn emd_var(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (ca, cb) = (value_cloud(tape, a)?, value_cloud(tape, b)?);
    let m = emd(&ca, &cb)?;
    let matched = tape.gather(b, &m.assignment)?;
    let diff = tape.sub(a, matched)?;
    let sq = tape.square(diff);
    Ok(tape.reduce_sum(sq))
}

/// Front-constraint loss: the metric between the view-based sample of the
/// prediction and a precomputed ground-truth front part.
pub fn front_loss_var(
    tape: &mut Tape,
    pred: Var,
    gt_front: &PointCloud,
    cam: &Camera,
    metric: FrontMetric,
) -> Result<Var> {
    if gt_front.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let pred_cloud = value_cloud(tape, pred)?;
    let front = view_based_sample(&pred_cloud, cam).front_indices;
    if front.is_empty() {
        return Err(Error::EmptyFront);
    }
    match metric {
        FrontMetric::Chamfer => {
            let sampled = tape.gather(pred, &front)?;
            let gt = tape.constant(cloud_to_tensor(gt_front));
            chamfer_var(tape, sampled, gt)
        }
        FrontMetric::Emd => {
            let pred_front = pred_cloud.select(&front);
            let (pred_idx, gt_cloud) = equalize_front(&pred_front, gt_front)?;
            let idx: Vec<usize> = pred_idx.iter().map(|&i| front[i]).collect();
            let sampled = tape.gather(pred, &idx)?;
            let gt = tape.constant(cloud_to_tensor(&gt_cloud));
            emd_var(tape, sampled, gt)
        }
    }
}

/// Indices into `pred_front` and the (possibly downsampled) ground truth
/// with equal counts.
fn equalize_front(pred_front: &PointCloud, gt_front: &PointCloud) -> Result<(Vec<usize>, PointCloud)> {
    let (np, ng) = (pred_front.len(), gt_front.len());
    if np > ng {
        Ok((fps(pred_front, ng, fps_start(pred_front)?)?, gt_front.clone()))
    } else if ng > np {
        let idx = fps(gt_front, np, fps_start(gt_front)?)?;
        Ok(((0..np).collect(), gt_front.select(&idx)))
    } else {
        Ok(((0..np).collect(), gt_front.clone()))
    }
}

/// Value form of the front loss; the ground-truth front part is the
/// view-based sample of `gt`.
pub fn front_loss(pred: &PointCloud, gt: &PointCloud, cam: &Camera, metric: FrontMetric) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let gt_front = gt.select(&view_based_sample(gt, cam).front_indices);
    if gt_front.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut tape = Tape::new();
    let p = tape.constant(cloud_to_tensor(pred));
    let l = front_loss_var(&mut tape, p, &gt_front, cam, metric)?;
    Ok(tape.scalar_value(l))
}

/// `max(0, ‖r₁ − r₂‖ − α·EMD(S₁, S₂))` on the tape.
pub fn diversity_loss_var(
    tape: &mut Tape,
    r1: &LatentInput,
    r2: &LatentInput,
    s1: Var,
    s2: Var,
    alpha: f64,
) -> Result<Var> {
    let (n1, n2) = (tape.shape(s1)[0], tape.shape(s2)[0]);
    if n1 != n2 {
        return Err(Error::SizeMismatch { left: n1, right: n2 });
    }
    let margin = r1.distance(r2);
    let e = emd_var(tape, s1, s2)?;
    let scaled = tape.scale(e, -alpha);
    let hinge = tape.add_scalar(scaled, margin);
    Ok(tape.relu(hinge))
}

pub fn diversity_loss(
    r1: &LatentInput,
    r2: &LatentInput,
    s1: &PointCloud,
    s2: &PointCloud,
    alpha: f64,
) -> Result<f64> {
    if s1.len() != s2.len() {
        return Err(Error::SizeMismatch {
            left: s1.len(),
            right: s2.len(),
        });
    }
    let cost = emd(s1, s2)?.cost;
    Ok((r1.distance(r2) - alpha * cost).max(0.0))
}

/// Mean pairwise Chamfer distance over all unordered pairs of shapes.
pub fn consistency_loss_var(tape: &mut Tape, shapes: &[Var]) -> Result<Var> {
    let n = shapes.len();
    if n < 2 {
        return Err(Error::TooFewViews(n));
    }
    let mut terms = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let cd = chamfer_var(tape, shapes[i], shapes[j])?;
            terms.push(tape.reshape(cd, &[1])?);
        }
    }
    // Summed in value order so that the loss does not depend on view order.
    terms.sort_by(|&a, &b| tape.scalar_value(a).total_cmp(&tape.scalar_value(b)));
    let all = tape.concat(&terms, 0)?;
    Ok(tape.mean(all))
}

pub fn consistency_loss(shapes: &[PointCloud]) -> Result<f64> {
    let n = shapes.len();
    if n < 2 {
        return Err(Error::TooFewViews(n));
    }
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.push(chamfer_total(&shapes[i], &shapes[j])?);
        }
    }
    pairs.sort_by(f64::total_cmp);
    Ok(2.0 * pairs.iter().sum::<f64>() / (n * (n - 1)) as f64)
}

/// Adversarial terms evaluated on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanTerms {
    /// `−E[D(z_fake)]`, minimized by the generator.
    pub generator_term: f64,
    /// `−E[D(z_fake)] + E[D(z_real)] − λ·E[(‖∇D(ẑ)‖ − 1)²]`, ascended by the critic.
    pub critic_term: f64,
    /// `λ·E[(‖∇D(ẑ)‖ − 1)²]`.
    pub penalty: f64,
}

/// Latent-space WGAN-GP terms for a batch of fake latents and real latents.
///
/// Fake row `k` is interpolated with real row `k · |real| / |fake|`, so each
/// image's latents pair with the encoding of its own ground-truth shape
/// when fakes are laid out image-major.
pub fn gan_terms(
    model: &Model,
    critic: &crate::autodiff::ParamSet,
    z_fake: &Tensor,
    z_real: &Tensor,
    interpolation: &[f64],
    lambda: f64,
) -> Result<GanTerms> {
    let (nf, _) = z_fake.dims2().ok_or_else(|| Error::shape("gan_terms", "z_fake must be a matrix"))?;
    let (nr, _) = z_real.dims2().ok_or_else(|| Error::shape("gan_terms", "z_real must be a matrix"))?;
    if nf == 0 || nr == 0 {
        return Err(Error::InvalidArgument("empty GAN batch".into()));
    }
    let mut tape = Tape::new();
    let cb = critic.bind(&mut tape, false);
    let fake = tape.constant(z_fake.clone());
    let real = tape.constant(z_real.clone());
    let df = model.critic_forward(&mut tape, &cb, fake)?;
    let dr = model.critic_forward(&mut tape, &cb, real)?;
    let mean_fake = tape.mean(df);
    let mean_real = tape.mean(dr);
    let zhat = tape.constant(interpolate_latents(z_fake, z_real, interpolation)?);
    let gp = model.gradient_penalty(&mut tape, &cb, zhat)?;
    let (f, r, p) = (tape.scalar_value(mean_fake), tape.scalar_value(mean_real), tape.scalar_value(gp));
    Ok(GanTerms {
        generator_term: -f,
        critic_term: -f + r - lambda * p,
        penalty: lambda * p,
    })
}

/// `ẑ_k = ε_k·z_real[pair(k)] + (1 − ε_k)·z_fake[k]`.
pub fn interpolate_latents(z_fake: &Tensor, z_real: &Tensor, eps: &[f64]) -> Result<Tensor> {
    let (nf, d) = z_fake.dims2().ok_or_else(|| Error::shape("interpolate", "z_fake must be a matrix"))?;
    let (nr, d2) = z_real.dims2().ok_or_else(|| Error::shape("interpolate", "z_real must be a matrix"))?;
    if d != d2 || eps.len() != nf {
        return Err(Error::shape("interpolate", format!("fake {nf}x{d}, real {nr}x{d2}, {} weights", eps.len())));
    }
    let mut out = Vec::with_capacity(nf * d);
    for (k, &e) in eps.iter().enumerate() {
        let real = z_real.row(k * nr / nf);
        let fake = z_fake.row(k);
        out.extend(real.iter().zip(fake).map(|(r, f)| e * r + (1.0 - e) * f));
    }
    Tensor::matrix(nf, d, out)
}

/// Draws one interpolation weight `ε ~ U(0, 1)` per fake sample.
pub fn sample_interpolation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>()).collect()
}

/// Value form of the adversarial terms: encodes the batch with the current
/// generator and the real shapes with `E_S`.
pub fn gan_loss<R: Rng + ?Sized>(
    model: &Model,
    params: &ModelParams,
    images: &[&crate::model::Image],
    noises: &[&LatentInput],
    real_shapes: &[&PointCloud],
    lambda: f64,
    rng: &mut R,
) -> Result<GanTerms> {
    if images.is_empty() || real_shapes.is_empty() {
        return Err(Error::InvalidArgument("empty GAN batch".into()));
    }
    let d = model.config.shape_latent;
    let mut tape = Tape::new();
    let gen = params.generator.bind(&mut tape, false);
    let px = model.config.image_pixels();
    let img = Tensor::matrix(
        images.len(),
        px,
        images.iter().flat_map(|i| i.pixels.iter().copied()).collect(),
    )?;
    let iv = tape.constant(img);
    let nv = match params.kind {
        crate::model::GeneratorKind::Conditional => {
            let nd = model.config.latent_dim;
            let t = Tensor::matrix(noises.len(), nd, noises.iter().flat_map(|r| r.0.iter().copied()).collect())?;
            Some(tape.constant(t))
        }
        crate::model::GeneratorKind::Deterministic => None,
    };
    let z = model.encode_image(&mut tape, &gen, iv, nv)?;
    let z_fake = tape.value(z).clone();
    let mut real = Vec::with_capacity(real_shapes.len() * d);
    for s in real_shapes {
        real.extend(model.encode_shape(&params.encoder, s)?);
    }
    let z_real = Tensor::matrix(real_shapes.len(), d, real)?;
    let eps = sample_interpolation(z_fake.dims2().expect("latent matrix").0, rng);
    gan_terms(model, &params.critic, &z_fake, &z_real, &eps, lambda)
}

/// Pixel-wise depth loss on rendered maps with the pixel assignment held
/// fixed: `Σ_pixels (depth_pred − depth_gt)²`. Only used to contrast with
/// the front constraint; its gradient lies along each camera's optical axis.
pub fn projection_depth_loss_var(
    tape: &mut Tape,
    pred: Var,
    gt: &PointCloud,
    cam: &Camera,
) -> Result<Var> {
    let pred_cloud = value_cloud(tape, pred)?;
    let pred_map = crate::render::render_depth(&pred_cloud, cam);
    let gt_map = crate::render::render_depth(gt, cam);
    let mut idx = Vec::new();
    let mut target = Vec::new();
    for (p, g) in pred_map.pixels.iter().zip(&gt_map.pixels) {
        if let (Some(p), Some(g)) = (p, g) {
            idx.push(p.contributor);
            target.push(g.depth);
        }
    }
    if idx.is_empty() {
        return Err(Error::EmptyFront);
    }
    let r = cam.rotation();
    let t = cam.translation();
    // Camera-space depth is the third row of R·p + t.
    let axis = tape.constant(Tensor::matrix(3, 1, r.0[2].to_vec())?);
    let pts = tape.gather(pred, &idx)?;
    let depth = tape.matmul(pts, axis)?;
    let depth = tape.add_scalar(depth, t.z);
    let target = tape.constant(Tensor::matrix(target.len(), 1, target)?);
    let diff = tape.sub(depth, target)?;
    let sq = tape.square(diff);
    Ok(tape.reduce_sum(sq))
}

/// Chamfer of the full clouds, for comparison with the front loss.
pub fn full_chamfer(pred: &PointCloud, gt: &PointCloud) -> Result<f64> {
    metrics::chamfer_total(pred, gt)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{finite_difference, relative_error};
    use crate::geom::Point3;
    use crate::model::ModelConfig;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|&a| Point3::from_array(a)).collect()).unwrap()
    }

    fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)))
                .collect(),
        )
        .unwrap()
    }

    fn front_camera() -> Camera {
        Camera::look_at(Point3::new(0.0, 0.0, 3.0), Point3::ORIGIN, 8.0, (8, 8)).unwrap()
    }

    #[test]
    fn combined_loss_arithmetic() {
        let w = LossWeights {
            alpha: 0.2,
            beta: 10.0,
            gamma: 0.1,
            lambda: 10.0,
        };
        let r = combined_loss(1.0, 2.0, 3.0, &w);
        assert!((r.total - 21.3).abs() < 1e-12);
        let r = combined_loss(0.7, 2.0, 3.0, &LossWeights { beta: 0.0, gamma: 0.0, ..w });
        assert_eq!(r.total, 0.7);
        assert_eq!(combined_loss(0.0, 0.0, 0.0, &w).total, 0.0);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::STAGE1.validate().is_ok());
        assert!(LossWeights { beta: -1.0, ..LossWeights::STAGE1 }.validate().is_err());
    }

    #[test]
    fn alpha_rescaling() {
        assert_eq!(LossWeights::STAGE1.at_scale(2048, 128), LossWeights::STAGE1);
        // 0.2 · (2048 / 64) · √(16 / 128) = 6.4 / √8.
        let a = LossWeights::STAGE1.at_scale(64, 16).alpha;
        assert!((a - 6.4 / 8f64.sqrt()).abs() < 1e-12);
        // A margin of √(2·dim) met by a uniform per-point squared offset m
        // needs α·N·m = √(2·dim): m must come out equal at both scales.
        let m = |w: LossWeights, n: usize, d: usize| (2.0 * d as f64).sqrt() / (w.alpha * n as f64);
        let big = m(LossWeights::STAGE2, 2048, 128);
        let small = m(LossWeights::STAGE2.at_scale(64, 16), 64, 16);
        assert!((big - small).abs() < 1e-12 * big);
        let w = LossWeights::STAGE1.at_scale(64, 16);
        assert!((w.alpha * w.beta - 2.0).abs() < 1e-12);
    }

    #[test]
    fn front_loss_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = random_cloud(&mut rng, 40);
        for metric in [FrontMetric::Chamfer, FrontMetric::Emd] {
            assert_eq!(front_loss(&gt, &gt, &front_camera(), metric).unwrap(), 0.0);
        }
    }

    #[test]
    fn front_loss_ignores_hidden_back() {
        // A plate facing the camera, one point per pixel, plus points hidden
        // directly behind plate points. Moving the hidden points farther back
        // leaves the front part untouched.
        let cam = front_camera();
        let mut plate = Vec::new();
        for row in 0..8 {
            for col in 0..8 {
                plate.push(crate::render::unproject_pixel(col, row, 2.5, &cam));
            }
        }
        let on_ray = |extra: f64| -> Vec<Point3> {
            plate
                .iter()
                .step_by(3)
                .map(|&p| {
                    let c = cam.center();
                    let dir = (p - c).normalized();
                    p + dir * extra
                })
                .collect()
        };
        let gt = PointCloud::new([plate.clone(), on_ray(0.2)].concat()).unwrap();
        let pred = PointCloud::new([plate.clone(), on_ray(0.6)].concat()).unwrap();
        for metric in [FrontMetric::Chamfer, FrontMetric::Emd] {
            assert_eq!(front_loss(&pred, &gt, &cam, metric).unwrap(), 0.0);
        }
        assert!(full_chamfer(&pred, &gt).unwrap() > 0.0);
    }

    #[test]
    fn front_loss_matches_composed_pipeline() {
        let cam = Camera::look_at(Point3::new(1.0, 0.8, 2.6), Point3::ORIGIN, 6.0, (6, 6)).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pred = random_cloud(&mut rng, 30);
            let gt = random_cloud(&mut rng, 30);
            let pf = pred.select(&view_based_sample(&pred, &cam).front_indices);
            let gf = gt.select(&view_based_sample(&gt, &cam).front_indices);
            let expect = metrics::chamfer_total(&pf, &gf).unwrap();
            let got = front_loss(&pred, &gt, &cam, FrontMetric::Chamfer).unwrap();
            assert!((got - expect).abs() < 1e-12);

            let (pe, ge) = metrics::equalize_counts(&pf, &gf).unwrap();
            let expect_emd = emd(&pe, &ge).unwrap().cost;
            let got_emd = front_loss(&pred, &gt, &cam, FrontMetric::Emd).unwrap();
            assert!((got_emd - expect_emd).abs() < 1e-12);
        }
    }

    #[test]
    fn front_loss_empty_front() {
        let cam = front_camera();
        let gt = cloud(&[[0.0, 0.0, 0.0]]);
        let pred = cloud(&[[0.0, 0.0, 10.0]]);
        assert!(matches!(front_loss(&pred, &gt, &cam, FrontMetric::Chamfer), Err(Error::EmptyFront)));
    }

    #[test]
    fn front_loss_gradients_leave_the_view_axis() {
        let cam = Camera::look_at(Point3::new(0.0, 0.0, 3.0), Point3::ORIGIN, 16.0, (16, 16)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pred = random_cloud(&mut rng, 30);
        let gt = random_cloud(&mut rng, 30);
        let gt_front = gt.select(&view_based_sample(&gt, &cam).front_indices);

        let mut tape = Tape::new();
        let p = tape.leaf(cloud_to_tensor(&pred));
        let l = front_loss_var(&mut tape, p, &gt_front, &cam, FrontMetric::Chamfer).unwrap();
        let g = tape.backward(l).unwrap().wrt(p);
        let lateral = g.data().chunks(3).any(|c| {
            let gc = cam.rotation().apply(Point3::new(c[0], c[1], c[2]));
            gc.x.abs() > 1e-6 && gc.y.abs() > 1e-6
        });
        assert!(lateral);

        let mut tape = Tape::new();
        let p = tape.leaf(cloud_to_tensor(&pred));
        let l = projection_depth_loss_var(&mut tape, p, &gt, &cam).unwrap();
        let g = tape.backward(l).unwrap().wrt(p);
        let mut any = false;
        for c in g.data().chunks(3) {
            let gc = cam.rotation().apply(Point3::new(c[0], c[1], c[2]));
            assert!(gc.x.abs() < 1e-12 && gc.y.abs() < 1e-12);
            any |= gc.z.abs() > 0.0;
        }
        assert!(any);
    }

    #[test]
    fn diversity_examples() {
        let r1 = LatentInput(vec![0.0, 0.0]);
        let r2 = LatentInput(vec![1.0, 0.0]);
        let s = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(diversity_loss(&r1, &r1, &s, &s, 0.2).unwrap(), 0.0);
        assert_eq!(diversity_loss(&r1, &r2, &s, &s, 0.2).unwrap(), 1.0);

        // Each point moves 1 along y: EMD = 2, so α·EMD covers ‖r1 − r2‖ = 1.
        let s2 = cloud(&[[0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]);
        assert_eq!(emd(&s, &s2).unwrap().cost, 2.0);
        assert_eq!(diversity_loss(&r1, &r2, &s, &s2, 1.0).unwrap(), 0.0);
        let mut tape = Tape::new();
        let a = tape.leaf(cloud_to_tensor(&s));
        let b = tape.leaf(cloud_to_tensor(&s2));
        let l = diversity_loss_var(&mut tape, &r1, &r2, a, b, 1.0).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.wrt(a).data().iter().all(|&v| v == 0.0));
        assert!(g.wrt(b).data().iter().all(|&v| v == 0.0));

        let short = cloud(&[[0.0, 0.0, 0.0]]);
        assert!(matches!(diversity_loss(&r1, &r2, &s, &short, 1.0), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn consistency_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_cloud(&mut rng, 10);
        assert_eq!(consistency_loss(&[s.clone(), s.clone(), s.clone()]).unwrap(), 0.0);
        let t = random_cloud(&mut rng, 10);
        assert_eq!(consistency_loss(&[s.clone(), t.clone()]).unwrap(), chamfer_total(&s, &t).unwrap());
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        let c = cloud(&[[2.0, 0.0, 0.0]]);
        assert!((consistency_loss(&[a.clone(), b, c]).unwrap() - 8.0 / 3.0).abs() < 1e-15);
        assert!(matches!(consistency_loss(&[a]), Err(Error::TooFewViews(1))));
    }

    #[test]
    fn consistency_var_matches_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shapes: Vec<PointCloud> = (0..4).map(|_| random_cloud(&mut rng, 12)).collect();
        let mut tape = Tape::new();
        let vars: Vec<Var> = shapes.iter().map(|s| tape.constant(cloud_to_tensor(s))).collect();
        let l = consistency_loss_var(&mut tape, &vars).unwrap();
        assert!((tape.scalar_value(l) - consistency_loss(&shapes).unwrap()).abs() < 1e-12);
    }

    fn small_model(critic_hidden: usize) -> Model {
        Model::new(ModelConfig {
            image_size: 4,
            points: 6,
            latent_dim: 3,
            shape_latent: 4,
            image_hidden: 5,
            image_feature: 4,
            noise_hidden: 4,
            fuse_hidden: 5,
            decoder_hidden: 6,
            encoder_hidden: 5,
            critic_hidden,
        })
        .unwrap()
    }

    fn rand_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn gan_zero_critic() {
        let m = small_model(5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let critic = m.init_critic(&mut rng).zeros_like();
        let zf = rand_matrix(&mut rng, 6, 4);
        let zr = rand_matrix(&mut rng, 2, 4);
        let eps = sample_interpolation(6, &mut rng);
        let t = gan_terms(&m, &critic, &zf, &zr, &eps, 10.0).unwrap();
        assert_eq!(t.generator_term, 0.0);
        assert_eq!(t.penalty, 10.0);
        assert_eq!(t.critic_term, -10.0);
    }

    #[test]
    fn gan_linear_critic_without_penalty() {
        let m = small_model(0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut critic = m.init_critic(&mut rng);
        let w = vec![0.5, -1.0, 0.25, 2.0];
        *critic.get_mut("critic.fc2.w").unwrap() = Tensor::matrix(4, 1, w.clone()).unwrap();
        *critic.get_mut("critic.fc2.b").unwrap() = Tensor::vector(vec![0.3]);
        let zf = rand_matrix(&mut rng, 6, 4);
        let zr = rand_matrix(&mut rng, 3, 4);
        let eps = sample_interpolation(6, &mut rng);
        let t = gan_terms(&m, &critic, &zf, &zr, &eps, 0.0).unwrap();
        let mean = |z: &Tensor| -> Vec<f64> {
            let (r, c) = z.dims2().unwrap();
            (0..c).map(|j| (0..r).map(|i| z.data()[i * c + j]).sum::<f64>() / r as f64).collect()
        };
        let (mr, mf) = (mean(&zr), mean(&zf));
        let expect: f64 = w.iter().enumerate().map(|(j, wj)| wj * (mr[j] - mf[j])).sum();
        assert!((t.critic_term - expect).abs() < 1e-12);
        // Unit-norm w makes the penalty vanish; here ‖w‖ ≠ 1 so it does not.
        let t10 = gan_terms(&m, &critic, &zf, &zr, &eps, 10.0).unwrap();
        let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((t10.penalty - 10.0 * (wn - 1.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn interpolation_pairs_fakes_with_their_shape() {
        let zf = Tensor::matrix(4, 1, vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let zr = Tensor::matrix(2, 1, vec![10.0, 20.0]).unwrap();
        let z = interpolate_latents(&zf, &zr, &[1.0, 1.0, 0.5, 0.0]).unwrap();
        assert_eq!(z.data(), &[10.0, 10.0, 10.0, 0.0]);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let cam = Camera::look_at(Point3::new(0.3, 0.5, 2.8), Point3::ORIGIN, 5.0, (5, 5)).unwrap();
        let mut worst: f64 = 0.0;
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let a = random_cloud(&mut rng, 8);
            let b = random_cloud(&mut rng, 8);
            let gt_front = b.select(&view_based_sample(&b, &cam).front_indices);
            let r1 = LatentInput::sample(3, &mut rng);
            let r2 = LatentInput::sample(3, &mut rng);

            let cases: Vec<Box<dyn Fn(&mut Tape, Var) -> Var>> = vec![
                Box::new(|t, x| {
                    let other = t.constant(cloud_to_tensor(&b));
                    chamfer_var(t, x, other).unwrap()
                }),
                Box::new(|t, x| {
                    let other = t.constant(cloud_to_tensor(&b));
                    emd_var(t, x, other).unwrap()
                }),
                Box::new(|t, x| front_loss_var(t, x, &gt_front, &cam, FrontMetric::Chamfer).unwrap()),
                Box::new(|t, x| {
                    let other = t.constant(cloud_to_tensor(&b));
                    diversity_loss_var(t, &r1, &r2, x, other, 0.05).unwrap()
                }),
                Box::new(|t, x| {
                    let other = t.constant(cloud_to_tensor(&b));
                    consistency_loss_var(t, &[x, other, x]).unwrap()
                }),
            ];
            for (k, case) in cases.iter().enumerate() {
                let mut tape = Tape::new();
                let x = tape.leaf(cloud_to_tensor(&a));
                let l = case(&mut tape, x);
                let g = tape.backward(l).unwrap().wrt(x);
                let numeric = finite_difference(&a.to_flat(), 1e-6, |p| {
                    let mut t = Tape::new();
                    let x = t.constant(Tensor::matrix(8, 3, p.to_vec()).unwrap());
                    let l = case(&mut t, x);
                    t.scalar_value(l)
                });
                let err = relative_error(g.data(), &numeric, 1e-6);
                worst = worst.max(err);
                assert!(err < 1e-4, "case {k} seed {seed}: {err}");
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn gan_loss_value_form() {
        let m = small_model(5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = m.init(crate::model::GeneratorKind::Conditional, &mut rng);
        let img = crate::model::Image::new(4, vec![0.5; 16]).unwrap();
        let r = LatentInput::sample(3, &mut rng);
        let shape = random_cloud(&mut rng, 6);
        let t = gan_loss(&m, &params, &[&img, &img], &[&r, &r], &[&shape], 10.0, &mut rng).unwrap();
        assert!(t.generator_term.is_finite() && t.critic_term.is_finite() && t.penalty >= 0.0);
    }
}
