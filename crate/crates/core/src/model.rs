//! Networks: the conditional generator `f(I, r; θ)`, its deterministic
//! counterpart `f_d(I)`, the latent-space critic and the point-cloud
//! autoencoder whose decoder is shared (frozen) by both generators.
//!
//! All networks are small dense MLPs. Parameters live in [`ParamSet`]s under
//! the prefixes `gen.`, `dec.`, `enc.` and `critic.`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Bound, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geom::PointCloud;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Input images are `image_size × image_size`.
    pub image_size: usize,
    /// Points per generated cloud.
    pub points: usize,
    /// Dimension of the random input `r`.
    pub latent_dim: usize,
    /// Dimension of the shape latent `z` shared by the autoencoder.
    pub shape_latent: usize,
    pub image_hidden: usize,
    pub image_feature: usize,
    pub noise_hidden: usize,
    pub fuse_hidden: usize,
    pub decoder_hidden: usize,
    pub encoder_hidden: usize,
    /// Hidden width of the critic; 0 selects a linear critic `D(z) = wᵀz + b`.
    pub critic_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 16,
            points: 64,
            latent_dim: 16,
            shape_latent: 32,
            image_hidden: 96,
            image_feature: 48,
            noise_hidden: 32,
            fuse_hidden: 96,
            decoder_hidden: 128,
            encoder_hidden: 64,
            critic_hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn image_pixels(&self) -> usize {
        self.image_size * self.image_size
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.image_size,
            self.points,
            self.latent_dim,
            self.shape_latent,
            self.image_hidden,
            self.image_feature,
            self.noise_hidden,
            self.fuse_hidden,
            self.decoder_hidden,
            self.encoder_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Single-channel input image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub size: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(size: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::shape(
                "Image::new",
                format!("{} pixels for a {size}x{size} image", pixels.len()),
            ));
        }
        Ok(Self { size, pixels })
    }
}

/// The random conditioning vector `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentInput(pub Vec<f64>);

impl LatentInput {
    pub fn sample<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        LatentInput((0..dim).map(|_| StandardNormal.sample(rng)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn distance(&self, other: &LatentInput) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("glorot shape")
}

fn add_dense<R: Rng + ?Sized>(p: &mut ParamSet, rng: &mut R, name: &str, fan_in: usize, fan_out: usize) {
    p.insert(format!("{name}.w"), glorot(rng, fan_in, fan_out));
    p.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

/// `x · W + b` using the bound parameters `<name>.w` / `<name>.b`.
pub fn dense(tape: &mut Tape, params: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = params.get(&format!("{name}.w"));
    let b = params.get(&format!("{name}.b"));
    let h = tape.matmul(x, w)?;
    tape.add_row(h, b)
}

/// Splits a `B × 3N` decoder output into `B` clouds of shape `N × 3`.
fn split_clouds(tape: &mut Tape, flat: Var, points: usize) -> Result<Vec<Var>> {
    let rows = tape.shape(flat)[0];
    (0..rows)
        .map(|k| {
            let row = tape.gather(flat, &[k])?;
            tape.reshape(row, &[points, 3])
        })
        .collect()
}

/// Converts a `N × 3` tensor into a cloud.
pub fn tensor_to_cloud(t: &Tensor) -> Result<PointCloud> {
    PointCloud::from_flat(t.data())
}

pub fn cloud_to_tensor(pc: &PointCloud) -> Tensor {
    Tensor::matrix(pc.len(), 3, pc.to_flat()).expect("cloud shape")
}

/// Whether the generator takes a random input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Conditional,
    Deterministic,
}

impl GeneratorKind {
    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::Conditional => "conditional",
            GeneratorKind::Deterministic => "deterministic",
        }
    }
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditional" => Ok(GeneratorKind::Conditional),
            "deterministic" => Ok(GeneratorKind::Deterministic),
            other => Err(Error::InvalidArgument(format!("unknown generator kind {other}"))),
        }
    }
}

/// Every trainable tensor of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: GeneratorKind,
    /// Image encoder, noise embedder and fusion layers (`E_I`).
    pub generator: ParamSet,
    /// Shape decoder transferred from the autoencoder; frozen while training
    /// the generator.
    pub decoder: ParamSet,
    /// Shape encoder `E_S`.
    pub encoder: ParamSet,
    pub critic: ParamSet,
}

/// Outputs of a batched generator forward pass.
#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    /// `B × shape_latent` pre-decoder latents `E_I(I, r)`.
    pub latent: Var,
    /// One `N × 3` cloud per batch row.
    pub clouds: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn init_autoencoder<R: Rng + ?Sized>(&self, rng: &mut R) -> (ParamSet, ParamSet) {
        let c = &self.config;
        let mut enc = ParamSet::new();
        add_dense(&mut enc, rng, "enc.pt1", 3, c.encoder_hidden);
        add_dense(&mut enc, rng, "enc.pt2", c.encoder_hidden, c.encoder_hidden);
        add_dense(&mut enc, rng, "enc.out", c.encoder_hidden, c.shape_latent);
        let mut dec = ParamSet::new();
        add_dense(&mut dec, rng, "dec.fc1", c.shape_latent, c.decoder_hidden);
        add_dense(&mut dec, rng, "dec.fc2", c.decoder_hidden, 3 * c.points);
        (enc, dec)
    }

    pub fn init_generator<R: Rng + ?Sized>(&self, kind: GeneratorKind, rng: &mut R) -> ParamSet {
        let c = &self.config;
        let mut g = ParamSet::new();
        add_dense(&mut g, rng, "gen.img1", c.image_pixels(), c.image_hidden);
        add_dense(&mut g, rng, "gen.img2", c.image_hidden, c.image_feature);
        let fuse_in = match kind {
            GeneratorKind::Conditional => {
                add_dense(&mut g, rng, "gen.noise1", c.latent_dim, c.noise_hidden);
                add_dense(&mut g, rng, "gen.noise2", c.noise_hidden, c.noise_hidden);
                c.image_feature + c.noise_hidden
            }
            GeneratorKind::Deterministic => c.image_feature,
        };
        add_dense(&mut g, rng, "gen.fuse1", fuse_in, c.fuse_hidden);
        add_dense(&mut g, rng, "gen.fuse2", c.fuse_hidden, c.shape_latent);
        g
    }

    pub fn init_critic<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let c = &self.config;
        let mut p = ParamSet::new();
        if c.critic_hidden == 0 {
            add_dense(&mut p, rng, "critic.fc2", c.shape_latent, 1);
        } else {
            add_dense(&mut p, rng, "critic.fc1", c.shape_latent, c.critic_hidden);
            add_dense(&mut p, rng, "critic.fc2", c.critic_hidden, 1);
        }
        p
    }

    /// Fresh parameters for every network.
    pub fn init<R: Rng + ?Sized>(&self, kind: GeneratorKind, rng: &mut R) -> ModelParams {
        let (encoder, decoder) = self.init_autoencoder(rng);
        let generator = self.init_generator(kind, rng);
        let critic = self.init_critic(rng);
        ModelParams {
            kind,
            generator,
            decoder,
            encoder,
            critic,
        }
    }

    /// `B × shape_latent` latents from `B × pixels` images and, for the
    /// conditional generator, `B × latent_dim` noise.
    pub fn encode_image(
        &self,
        tape: &mut Tape,
        gen: &Bound,
        images: Var,
        noise: Option<Var>,
    ) -> Result<Var> {
        let c = &self.config;
        let s = tape.shape(images).to_vec();
        if s.len() != 2 || s[1] != c.image_pixels() {
            return Err(Error::shape(
                "encode_image",
                format!("images {s:?}, expected [B, {}]", c.image_pixels()),
            ));
        }
        let h = dense(tape, gen, "gen.img1", images)?;
        let h = tape.tanh(h);
        let zi = dense(tape, gen, "gen.img2", h)?;
        let zi = tape.tanh(zi);
        let fused = match noise {
            Some(r) => {
                let rs = tape.shape(r).to_vec();
                if rs != [s[0], c.latent_dim] {
                    return Err(Error::shape(
                        "encode_image",
                        format!("noise {rs:?}, expected [{}, {}]", s[0], c.latent_dim),
                    ));
                }
                let e = dense(tape, gen, "gen.noise1", r)?;
                let e = tape.tanh(e);
                let zr = dense(tape, gen, "gen.noise2", e)?;
                let zr = tape.tanh(zr);
                tape.concat(&[zi, zr], 1)?
            }
            None => zi,
        };
        let f = dense(tape, gen, "gen.fuse1", fused)?;
        let f = tape.tanh(f);
        dense(tape, gen, "gen.fuse2", f)
    }

    /// `B × shape_latent` → `B` clouds.
    pub fn decode_latent(&self, tape: &mut Tape, dec: &Bound, z: Var) -> Result<Vec<Var>> {
        let h = dense(tape, dec, "dec.fc1", z)?;
        let h = tape.relu(h);
        let flat = dense(tape, dec, "dec.fc2", h)?;
        split_clouds(tape, flat, self.config.points)
    }

    pub fn generator_forward(
        &self,
        tape: &mut Tape,
        gen: &Bound,
        dec: &Bound,
        images: Var,
        noise: Option<Var>,
    ) -> Result<GeneratorOutput> {
        let latent = self.encode_image(tape, gen, images, noise)?;
        let clouds = self.decode_latent(tape, dec, latent)?;
        Ok(GeneratorOutput { latent, clouds })
    }

    /// Shape latent of one `N × 3` cloud: shared per-point MLP, max pooling
    /// over points, then a linear head. Returns a `1 × shape_latent` var.
    pub fn encode_shape_var(&self, tape: &mut Tape, enc: &Bound, cloud: Var) -> Result<Var> {
        let s = tape.shape(cloud).to_vec();
        if s.len() != 2 || s[1] != 3 {
            return Err(Error::shape("encode_shape", format!("cloud shape {s:?}")));
        }
        let h = dense(tape, enc, "enc.pt1", cloud)?;
        let h = tape.relu(h);
        let h = dense(tape, enc, "enc.pt2", h)?;
        let h = tape.relu(h);
        let (pooled, _) = tape.reduce_max_with_index(h, 0)?;
        let pooled = tape.reshape(pooled, &[1, self.config.encoder_hidden])?;
        dense(tape, enc, "enc.out", pooled)
    }

    /// Critic scores `B × 1` for `B × shape_latent` latents.
    pub fn critic_forward(&self, tape: &mut Tape, critic: &Bound, z: Var) -> Result<Var> {
        if self.config.critic_hidden == 0 {
            return dense(tape, critic, "critic.fc2", z);
        }
        let h = dense(tape, critic, "critic.fc1", z)?;
        let h = tape.tanh(h);
        dense(tape, critic, "critic.fc2", h)
    }

    /// Per-row input gradients `∇_z D(z)` of the critic, built from tape ops
    /// so that they are themselves differentiable with respect to the critic
    /// parameters: `((1 − h²) ⊙ w₂) · W₁ᵀ` with `h = tanh(z W₁ + b₁)`.
    pub fn critic_input_gradient(&self, tape: &mut Tape, critic: &Bound, z: Var) -> Result<Var> {
        if self.config.critic_hidden == 0 {
            let rows = tape.shape(z)[0];
            let ones = tape.constant(Tensor::full(&[rows, 1], 1.0));
            let wt = tape.transpose(critic.get("critic.fc2.w"))?;
            return tape.matmul(ones, wt);
        }
        let h = dense(tape, critic, "critic.fc1", z)?;
        let h = tape.tanh(h);
        let h2 = tape.square(h);
        let minus = tape.scale(h2, -1.0);
        let dh = tape.add_scalar(minus, 1.0);
        let w2 = critic.get("critic.fc2.w");
        let w2 = tape.reshape(w2, &[self.config.critic_hidden])?;
        let back = tape.mul_row(dh, w2)?;
        let w1t = tape.transpose(critic.get("critic.fc1.w"))?;
        tape.matmul(back, w1t)
    }

    /// Mean gradient penalty `E[(‖∇_ẑ D(ẑ)‖₂ − 1)²]` over the rows of `zhat`.
    pub fn gradient_penalty(&self, tape: &mut Tape, critic: &Bound, zhat: Var) -> Result<Var> {
        let g = self.critic_input_gradient(tape, critic, zhat)?;
        let g2 = tape.square(g);
        let sq = tape.sum_axis(g2, 1)?;
        let norm = tape.sqrt(sq);
        let centered = tape.add_scalar(norm, -1.0);
        let pen = tape.square(centered);
        Ok(tape.mean(pen))
    }

    fn image_tensor(&self, images: &[&Image]) -> Result<Tensor> {
        let px = self.config.image_pixels();
        let mut data = Vec::with_capacity(images.len() * px);
        for im in images {
            if im.pixels.len() != px {
                return Err(Error::shape(
                    "generate",
                    format!("image has {} pixels, model expects {px}", im.pixels.len()),
                ));
            }
            data.extend_from_slice(&im.pixels);
        }
        Tensor::matrix(images.len(), px, data)
    }

    fn noise_tensor(&self, noises: &[&LatentInput]) -> Result<Tensor> {
        let d = self.config.latent_dim;
        let mut data = Vec::with_capacity(noises.len() * d);
        for r in noises {
            if r.dim() != d {
                return Err(Error::shape(
                    "generate",
                    format!("latent input has dimension {}, model expects {d}", r.dim()),
                ));
            }
            data.extend_from_slice(&r.0);
        }
        Tensor::matrix(noises.len(), d, data)
    }

    /// Batched evaluation of `f(I_k, r_k)`; `noises` must be `None` exactly
    /// for deterministic models.
    pub fn generate_batch(
        &self,
        params: &ModelParams,
        images: &[&Image],
        noises: Option<&[&LatentInput]>,
    ) -> Result<Vec<PointCloud>> {
        let mut tape = Tape::new();
        let gen = params.generator.bind(&mut tape, false);
        let dec = params.decoder.bind(&mut tape, false);
        let iv = tape.constant(self.image_tensor(images)?);
        let nv = match (params.kind, noises) {
            (GeneratorKind::Conditional, Some(n)) => {
                if n.len() != images.len() {
                    return Err(Error::SizeMismatch {
                        left: images.len(),
                        right: n.len(),
                    });
                }
                Some(tape.constant(self.noise_tensor(n)?))
            }
            (GeneratorKind::Deterministic, None) => None,
            (GeneratorKind::Conditional, None) => {
                return Err(Error::InvalidArgument("conditional generator needs latent inputs".into()))
            }
            (GeneratorKind::Deterministic, Some(_)) => {
                return Err(Error::InvalidArgument("deterministic generator takes no latent input".into()))
            }
        };
        let out = self.generator_forward(&mut tape, &gen, &dec, iv, nv)?;
        out.clouds
            .iter()
            .map(|&c| tensor_to_cloud(tape.value(c)))
            .collect()
    }

    /// `S = f(I, r; θ)`.
    pub fn generate(&self, params: &ModelParams, image: &Image, r: &LatentInput) -> Result<PointCloud> {
        Ok(self
            .generate_batch(params, &[image], Some(&[r]))?
            .pop()
            .expect("one output per input"))
    }

    /// `S = f_d(I; θ_d)`.
    pub fn generate_deterministic(&self, params: &ModelParams, image: &Image) -> Result<PointCloud> {
        Ok(self
            .generate_batch(params, &[image], None)?
            .pop()
            .expect("one output per input"))
    }

    /// `E_S(S)`.
    pub fn encode_shape(&self, encoder: &ParamSet, cloud: &PointCloud) -> Result<Vec<f64>> {
        if cloud.len() != self.config.points {
            return Err(Error::SizeMismatch {
                left: cloud.len(),
                right: self.config.points,
            });
        }
        let mut tape = Tape::new();
        let enc = encoder.bind(&mut tape, false);
        let c = tape.constant(cloud_to_tensor(cloud));
        let z = self.encode_shape_var(&mut tape, &enc, c)?;
        Ok(tape.value(z).data().to_vec())
    }

    /// Decoder half of the autoencoder.
    pub fn decode_shape(&self, decoder: &ParamSet, latent: &[f64]) -> Result<PointCloud> {
        if latent.len() != self.config.shape_latent {
            return Err(Error::SizeMismatch {
                left: latent.len(),
                right: self.config.shape_latent,
            });
        }
        let mut tape = Tape::new();
        let dec = decoder.bind(&mut tape, false);
        let z = tape.constant(Tensor::matrix(1, latent.len(), latent.to_vec())?);
        let clouds = self.decode_latent(&mut tape, &dec, z)?;
        tensor_to_cloud(tape.value(clouds[0]))
    }

    /// `D(z)` for a single latent.
    pub fn critic_score(&self, critic: &ParamSet, z: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let cb = critic.bind(&mut tape, false);
        let zv = tape.constant(Tensor::matrix(1, z.len(), z.to_vec())?);
        let s = self.critic_forward(&mut tape, &cb, zv)?;
        Ok(tape.value(s).item())
    }
}

impl ModelParams {
    /// All tensors in one set, for checkpointing.
    pub fn to_param_set(&self) -> ParamSet {
        let mut all = ParamSet::new();
        all.merge(&self.generator);
        all.merge(&self.decoder);
        all.merge(&self.encoder);
        all.merge(&self.critic);
        all
    }

    pub fn from_param_set(kind: GeneratorKind, all: &ParamSet) -> Self {
        Self {
            kind,
            generator: all.subset("gen."),
            decoder: all.subset("dec."),
            encoder: all.subset("enc."),
            critic: all.subset("critic."),
        }
    }

    /// Generator kind recovered from the presence of the noise embedder.
    pub fn from_checkpoint(all: &ParamSet) -> Self {
        let kind = if all.get("gen.noise1.w").is_some() {
            GeneratorKind::Conditional
        } else {
            GeneratorKind::Deterministic
        };
        Self::from_param_set(kind, all)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{finite_difference, relative_error};
    use crate::geom::Point3;

    fn small() -> Model {
        Model::new(ModelConfig {
            image_size: 4,
            points: 8,
            latent_dim: 3,
            shape_latent: 5,
            image_hidden: 6,
            image_feature: 4,
            noise_hidden: 4,
            fuse_hidden: 6,
            decoder_hidden: 7,
            encoder_hidden: 6,
            critic_hidden: 5,
        })
        .unwrap()
    }

    fn image(rng: &mut impl Rng, size: usize) -> Image {
        Image::new(size, (0..size * size).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    fn zeroed(p: &ParamSet) -> ParamSet {
        p.zeros_like()
    }

    #[test]
    fn generate_is_deterministic() {
        let m = small();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = m.init(GeneratorKind::Conditional, &mut rng);
        let im = image(&mut rng, 4);
        let r = LatentInput::sample(3, &mut rng);
        let a = m.generate(&params, &im, &r).unwrap();
        let b = m.generate(&params, &im, &r).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
    }

    #[test]
    fn zero_weights_give_bias_cloud() {
        let m = small();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = m.init(GeneratorKind::Conditional, &mut rng);
        params.generator = zeroed(&params.generator);
        params.decoder = zeroed(&params.decoder);
        let bias: Vec<f64> = (0..24).map(|k| k as f64 * 0.1).collect();
        *params.decoder.get_mut("dec.fc2.b").unwrap() = Tensor::vector(bias.clone());
        let r = LatentInput::sample(3, &mut rng);
        let out = m.generate(&params, &image(&mut rng, 4), &r).unwrap();
        assert_eq!(out.to_flat(), bias);

        let mut det = m.init(GeneratorKind::Deterministic, &mut rng);
        det.generator = zeroed(&det.generator);
        det.decoder = zeroed(&det.decoder);
        let a = m.generate_deterministic(&det, &image(&mut rng, 4)).unwrap();
        let b = m.generate_deterministic(&det, &image(&mut rng, 4)).unwrap();
        assert_eq!(a, b);
        assert!(a.points().iter().all(|p| *p == Point3::ORIGIN));
    }

    #[test]
    fn shape_errors() {
        let m = small();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = m.init(GeneratorKind::Conditional, &mut rng);
        let wrong = Image::new(5, vec![0.0; 25]).unwrap();
        let r = LatentInput::sample(3, &mut rng);
        assert!(matches!(m.generate(&params, &wrong, &r), Err(Error::ShapeMismatch { .. })));
        let bad_r = LatentInput::sample(4, &mut rng);
        assert!(matches!(m.generate(&params, &image(&mut rng, 4), &bad_r), Err(Error::ShapeMismatch { .. })));
        let cloud = PointCloud::new(vec![Point3::ORIGIN; 7]).unwrap();
        assert!(matches!(m.encode_shape(&params.encoder, &cloud), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn shape_encoding_is_permutation_invariant() {
        let m = small();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = m.init(GeneratorKind::Conditional, &mut rng);
        let pts: Vec<Point3> = (0..8)
            .map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let a = PointCloud::new(pts.clone()).unwrap();
        let mut rev = pts;
        rev.reverse();
        let b = PointCloud::new(rev).unwrap();
        assert_eq!(m.encode_shape(&params.encoder, &a).unwrap(), m.encode_shape(&params.encoder, &b).unwrap());
        let zero = PointCloud::new(vec![Point3::ORIGIN; 8]).unwrap();
        assert!(m.encode_shape(&params.encoder, &zero).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn critic_zero_and_linear() {
        let m = small();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let critic = m.init_critic(&mut rng);
        let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(m.critic_score(&zeroed(&critic), &z).unwrap(), 0.0);

        let mut c = zeroed(&critic);
        *c.get_mut("critic.fc2.b").unwrap() = Tensor::vector(vec![0.75]);
        assert_eq!(m.critic_score(&c, &z).unwrap(), 0.75);

        let lin = Model::new(ModelConfig { critic_hidden: 0, ..m.config.clone() }).unwrap();
        let mut lc = lin.init_critic(&mut rng);
        let w = vec![0.5, -1.0, 0.25, 2.0, -0.125];
        *lc.get_mut("critic.fc2.w").unwrap() = Tensor::matrix(5, 1, w.clone()).unwrap();
        *lc.get_mut("critic.fc2.b").unwrap() = Tensor::vector(vec![0.375]);
        let expect = w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + 0.375;
        assert_eq!(lin.critic_score(&lc, &z).unwrap(), expect);
        let mut tape = Tape::new();
        let cb = lc.bind(&mut tape, false);
        let zv = tape.constant(Tensor::matrix(2, 5, [z.clone(), z.clone()].concat()).unwrap());
        let g = lin.critic_input_gradient(&mut tape, &cb, zv).unwrap();
        assert_eq!(tape.value(g).data(), [w.clone(), w].concat().as_slice());
    }

    #[test]
    fn critic_input_gradient_matches_backward_and_fd() {
        let m = small();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let critic = m.init_critic(&mut rng);
            let z: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let zt = Tensor::matrix(3, 5, z.clone()).unwrap();

            let mut tape = Tape::new();
            let cb = critic.bind(&mut tape, false);
            let zv = tape.constant(zt.clone());
            let g = m.critic_input_gradient(&mut tape, &cb, zv).unwrap();
            let analytic = tape.value(g).clone();

            let via_backward = crate::autodiff::input_gradient(&zt, |t, zv| {
                let cb = critic.bind(t, false);
                let s = m.critic_forward(t, &cb, zv)?;
                Ok(t.reduce_sum(s))
            })
            .unwrap();
            assert!(relative_error(analytic.data(), via_backward.data(), 1e-9) < 1e-12);

            let numeric = finite_difference(&z, 1e-5, |p| {
                (0..3).map(|r| m.critic_score(&critic, &p[r * 5..(r + 1) * 5]).unwrap()).sum()
            });
            assert!(relative_error(analytic.data(), &numeric, 1e-6) < 1e-4);
        }
    }

    #[test]
    fn gradient_penalty_parameter_gradient_matches_fd() {
        let m = small();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let critic = m.init_critic(&mut rng);
            let zt = Tensor::matrix(4, 5, (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let penalty = |c: &ParamSet| {
                let mut t = Tape::new();
                let cb = c.bind(&mut t, false);
                let zv = t.constant(zt.clone());
                let p = m.gradient_penalty(&mut t, &cb, zv).unwrap();
                t.value(p).item()
            };
            let mut tape = Tape::new();
            let cb = critic.bind(&mut tape, true);
            let zv = tape.constant(zt.clone());
            let p = m.gradient_penalty(&mut tape, &cb, zv).unwrap();
            let grads = cb.collect(&tape.backward(p).unwrap());
            for (name, g) in grads.iter() {
                let base = critic.expect(name).clone();
                let numeric = finite_difference(base.data(), 1e-5, |x| {
                    let mut c = critic.clone();
                    *c.get_mut(name).unwrap() = Tensor::new(base.shape().to_vec(), x.to_vec()).unwrap();
                    penalty(&c)
                });
                let err = relative_error(g.data(), &numeric, 1e-6);
                assert!(err < 1e-4, "{name}: {err}");
            }
        }
    }

    #[test]
    fn checkpoint_split_round_trip() {
        let m = small();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for kind in [GeneratorKind::Conditional, GeneratorKind::Deterministic] {
            let p = m.init(kind, &mut rng);
            let back = ModelParams::from_checkpoint(&p.to_param_set());
            assert_eq!(back, p);
        }
    }
}
