//! Plain-text run configuration: `[section]` headers and `key = value`
//! lines, `#` comments. Unknown sections or keys, duplicates and bad values
//! are errors that carry the offending line.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::infer::InferenceConfig;
use crate::losses::{FrontMetric, LossWeights};
use crate::model::{GeneratorKind, ModelConfig};
use crate::synthdata::{DataConfig, Family};
use crate::train::{PipelineConfig, Stage, TrainConfig};

/// Diversity and adversarial weights under their published names.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Treat α/β as given for 2048 points and a 128-dim latent input and
    /// rescale them to the model's dimensions.
    pub rescale: bool,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        let (s1, s2) = (LossWeights::STAGE1, LossWeights::STAGE2);
        Self {
            alpha1: s1.alpha,
            beta1: s1.beta,
            alpha2: s2.alpha,
            beta2: s2.beta,
            gamma: s1.gamma,
            lambda: s1.lambda,
            rescale: true,
        }
    }
}

impl ObjectiveWeights {
    fn resolve(&self, alpha: f64, beta: f64, model: &ModelConfig) -> LossWeights {
        let w = LossWeights {
            alpha,
            beta,
            gamma: self.gamma,
            lambda: self.lambda,
        };
        if self.rescale {
            w.at_scale(model.points, model.latent_dim)
        } else {
            w
        }
    }

    pub fn stage1(&self, model: &ModelConfig) -> LossWeights {
        self.resolve(self.alpha1, self.beta1, model)
    }

    pub fn stage2(&self, model: &ModelConfig) -> LossWeights {
        self.resolve(self.alpha2, self.beta2, model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub views: usize,
    pub episodes: usize,
    pub diversity_k: usize,
    pub sweep: Vec<usize>,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            views: 8,
            episodes: 200,
            diversity_k: 10,
            sweep: vec![1, 2, 4, 8],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub kind: GeneratorKind,
    /// Stage schedules; their weights are replaced by `weights` on resolve.
    pub pipeline: PipelineConfig,
    pub weights: ObjectiveWeights,
    pub inference: InferenceConfig,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        let data = DataConfig::default();
        let model = ModelConfig {
            points: data.points,
            image_size: data.image_size,
            ..ModelConfig::default()
        };
        Self {
            data,
            model,
            kind: GeneratorKind::Conditional,
            pipeline: PipelineConfig::desk(GeneratorKind::Conditional),
            weights: ObjectiveWeights::default(),
            inference: InferenceConfig::default(),
            eval: EvalSettings::default(),
        }
    }

    /// The pipeline with resolved weights and generator kind.
    pub fn resolved_pipeline(&self) -> PipelineConfig {
        let mut p = self.pipeline.clone();
        p.kind = self.kind;
        p.single_view.weights = self.weights.stage1(&self.model);
        if let Some(mv) = p.multi_view.as_mut() {
            mv.weights = self.weights.stage2(&self.model);
        }
        p
    }

    /// Applies one seed to training, inference and evaluation. The corpus
    /// keeps its own seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.pipeline.seed = seed;
        self.pipeline.autoencoder.seed = seed;
        self.pipeline.single_view.seed = seed;
        if let Some(mv) = self.pipeline.multi_view.as_mut() {
            mv.seed = seed;
        }
        self.inference.seed = seed;
        self.eval.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.ring.validate()?;
        let p = self.resolved_pipeline();
        p.autoencoder.validate()?;
        p.single_view.validate()?;
        if let Some(mv) = &p.multi_view {
            mv.validate()?;
        }
        self.inference.validate()?;
        if self.eval.views == 0 || self.eval.views > self.data.ring.view_count {
            return Err(Error::InvalidArgument(format!(
                "eval views {} must be in 1..={}",
                self.eval.views, self.data.ring.view_count
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    /// Parses `text` on top of [`RunConfig::desk`]. `path` is only used in
    /// diagnostics.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let doc = Document::parse(text, path)?;
        let mut cfg = RunConfig::desk();
        if let Some(entry) = doc.find("train", "preset") {
            match entry.value.as_str() {
                "desk" => {}
                "paper" => {
                    cfg.pipeline.autoencoder = TrainConfig::paper(Stage::Autoencoder);
                    cfg.pipeline.single_view = TrainConfig::paper(Stage::SingleView);
                    cfg.pipeline.multi_view = Some(TrainConfig::paper(Stage::MultiView));
                }
                other => return Err(doc.error(entry.line, format!("unknown preset '{other}' (desk, paper)"))),
            }
        }
        let mut stage2_enabled = cfg.pipeline.multi_view.is_some();
        let mut stage2 = cfg
            .pipeline
            .multi_view
            .clone()
            .unwrap_or_else(|| TrainConfig::desk(Stage::MultiView));
        for section in &doc.sections {
            for e in &section.entries {
                let v = Value { doc: &doc, entry: e };
                let c = &mut cfg;
                match (section.name.as_str(), e.key.as_str()) {
                    ("data", "shapes") => c.data.shapes = v.parse()?,
                    ("data", "points") => c.data.points = v.parse()?,
                    ("data", "families") => c.data.families = v.list()?,
                    ("data", "image_size") => c.data.image_size = v.parse()?,
                    ("data", "views") => c.data.ring.view_count = v.parse()?,
                    ("data", "elevation_min") => c.data.ring.longitudinal_range.0 = v.parse()?,
                    ("data", "elevation_max") => c.data.ring.longitudinal_range.1 = v.parse()?,
                    ("data", "radius") => c.data.ring.radius = v.parse()?,
                    ("data", "focal") => c.data.ring.focal = v.parse()?,
                    ("data", "resolution") => {
                        let r: usize = v.parse()?;
                        c.data.ring.resolution = (r, r);
                    }
                    ("data", "random_phase") => c.data.ring.random_phase = v.parse()?,
                    ("data", "ring_seed") => c.data.ring.seed = v.parse()?,
                    ("data", "seed") => c.data.seed = v.parse()?,
                    ("model", "kind") => c.kind = v.parse()?,
                    ("model", "latent_dim") => c.model.latent_dim = v.parse()?,
                    ("model", "shape_latent") => c.model.shape_latent = v.parse()?,
                    ("model", "image_hidden") => c.model.image_hidden = v.parse()?,
                    ("model", "image_feature") => c.model.image_feature = v.parse()?,
                    ("model", "noise_hidden") => c.model.noise_hidden = v.parse()?,
                    ("model", "fuse_hidden") => c.model.fuse_hidden = v.parse()?,
                    ("model", "decoder_hidden") => c.model.decoder_hidden = v.parse()?,
                    ("model", "encoder_hidden") => c.model.encoder_hidden = v.parse()?,
                    ("model", "critic_hidden") => c.model.critic_hidden = v.parse()?,
                    ("train", "preset") => {}
                    ("train", "seed") => {
                        let s: u64 = v.parse()?;
                        c.pipeline.seed = s;
                        c.pipeline.autoencoder.seed = s;
                        c.pipeline.single_view.seed = s;
                        stage2.seed = s;
                    }
                    ("train", "gamma") => c.weights.gamma = v.parse()?,
                    ("train", "lambda") => c.weights.lambda = v.parse()?,
                    ("train", "rescale_diversity") => c.weights.rescale = v.parse()?,
                    ("train", "timing") => {
                        let t: bool = v.parse()?;
                        c.pipeline.autoencoder.timing = t;
                        c.pipeline.single_view.timing = t;
                        stage2.timing = t;
                    }
                    ("train", "stage1_init") => c.pipeline.stage1_init = v.parse()?,
                    ("autoencoder", "iterations") => c.pipeline.autoencoder.iterations = v.parse()?,
                    ("autoencoder", "batch") => c.pipeline.autoencoder.batch_shapes = v.parse()?,
                    ("autoencoder", "lr") => c.pipeline.autoencoder.lr = v.parse()?,
                    ("autoencoder", "metric") => c.pipeline.autoencoder.metric = v.parse()?,
                    ("stage1", "iterations") => c.pipeline.single_view.iterations = v.parse()?,
                    ("stage1", "batch") => c.pipeline.single_view.batch_shapes = v.parse()?,
                    ("stage1", "noises") => c.pipeline.single_view.noises_per_view = v.parse()?,
                    ("stage1", "lr") => c.pipeline.single_view.lr = v.parse()?,
                    ("stage1", "metric") => c.pipeline.single_view.metric = v.parse()?,
                    ("stage1", "critic_steps") => c.pipeline.single_view.critic_steps = v.parse()?,
                    ("stage1", "alpha1") => c.weights.alpha1 = v.parse()?,
                    ("stage1", "beta1") => c.weights.beta1 = v.parse()?,
                    ("stage2", "enabled") => stage2_enabled = v.parse()?,
                    ("stage2", "iterations") => stage2.iterations = v.parse()?,
                    ("stage2", "shapes") => stage2.batch_shapes = v.parse()?,
                    ("stage2", "views") => stage2.views_per_shape = v.parse()?,
                    ("stage2", "noises") => stage2.noises_per_view = v.parse()?,
                    ("stage2", "lr") => stage2.lr = v.parse()?,
                    ("stage2", "metric") => stage2.metric = v.parse()?,
                    ("stage2", "critic_steps") => stage2.critic_steps = v.parse()?,
                    ("stage2", "concat_diversity") => stage2.concat_diversity = v.parse()?,
                    ("stage2", "alpha2") => c.weights.alpha2 = v.parse()?,
                    ("stage2", "beta2") => c.weights.beta2 = v.parse()?,
                    ("inference", "groups") => c.inference.groups = v.parse()?,
                    ("inference", "opt_steps") => c.inference.opt_steps = v.parse()?,
                    ("inference", "opt_lr") => c.inference.opt_lr = v.parse()?,
                    ("inference", "convergence_tol") => c.inference.convergence_tol = v.parse()?,
                    ("inference", "convergence_window") => c.inference.convergence_window = v.parse()?,
                    ("inference", "max_halvings") => c.inference.max_halvings = v.parse()?,
                    ("inference", "keep_norm") => c.inference.keep_norm = v.parse()?,
                    ("inference", "seed") => c.inference.seed = v.parse()?,
                    ("eval", "views") => c.eval.views = v.parse()?,
                    ("eval", "episodes") => c.eval.episodes = v.parse()?,
                    ("eval", "diversity_k") => c.eval.diversity_k = v.parse()?,
                    ("eval", "sweep") => c.eval.sweep = v.list()?,
                    ("eval", "seed") => c.eval.seed = v.parse()?,
                    (s, k) => return Err(doc.error(e.line, format!("unknown key '{k}' in [{s}]"))),
                }
            }
        }
        cfg.pipeline.multi_view = stage2_enabled.then_some(stage2);
        cfg.pipeline.kind = cfg.kind;
        cfg.model.points = cfg.data.points;
        cfg.model.image_size = cfg.data.image_size;
        cfg.validate().map_err(|e| match e {
            Error::Config { .. } => e,
            other => doc.error(0, other.to_string()),
        })?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let d = &self.data;
        let m = &self.model;
        let p = &self.pipeline;
        let w = &self.weights;
        let families: Vec<&str> = d.families.iter().map(|f| f.name()).collect();
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "[data]");
        let _ = writeln!(s, "shapes = {}", d.shapes);
        let _ = writeln!(s, "points = {}", d.points);
        let _ = writeln!(s, "families = {}", families.join(","));
        let _ = writeln!(s, "image_size = {}", d.image_size);
        let _ = writeln!(s, "views = {}", d.ring.view_count);
        let _ = writeln!(s, "elevation_min = {:?}", d.ring.longitudinal_range.0);
        let _ = writeln!(s, "elevation_max = {:?}", d.ring.longitudinal_range.1);
        let _ = writeln!(s, "radius = {:?}", d.ring.radius);
        let _ = writeln!(s, "focal = {:?}", d.ring.focal);
        let _ = writeln!(s, "resolution = {}", d.ring.resolution.0);
        let _ = writeln!(s, "random_phase = {}", d.ring.random_phase);
        let _ = writeln!(s, "ring_seed = {}", d.ring.seed);
        let _ = writeln!(s, "seed = {}", d.seed);
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "kind = {}", self.kind.name());
        let _ = writeln!(s, "latent_dim = {}", m.latent_dim);
        let _ = writeln!(s, "shape_latent = {}", m.shape_latent);
        let _ = writeln!(s, "image_hidden = {}", m.image_hidden);
        let _ = writeln!(s, "image_feature = {}", m.image_feature);
        let _ = writeln!(s, "noise_hidden = {}", m.noise_hidden);
        let _ = writeln!(s, "fuse_hidden = {}", m.fuse_hidden);
        let _ = writeln!(s, "decoder_hidden = {}", m.decoder_hidden);
        let _ = writeln!(s, "encoder_hidden = {}", m.encoder_hidden);
        let _ = writeln!(s, "critic_hidden = {}", m.critic_hidden);
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "seed = {}", p.seed);
        let _ = writeln!(s, "gamma = {:?}", w.gamma);
        let _ = writeln!(s, "lambda = {:?}", w.lambda);
        let _ = writeln!(s, "rescale_diversity = {}", w.rescale);
        let _ = writeln!(s, "timing = {}", p.single_view.timing);
        let _ = writeln!(s, "stage1_init = {}", p.stage1_init);
        let a = &p.autoencoder;
        let _ = writeln!(s, "\n[autoencoder]");
        let _ = writeln!(s, "iterations = {}", a.iterations);
        let _ = writeln!(s, "batch = {}", a.batch_shapes);
        let _ = writeln!(s, "lr = {:?}", a.lr);
        let _ = writeln!(s, "metric = {}", metric_name(a.metric));
        let t = &p.single_view;
        let _ = writeln!(s, "\n[stage1]");
        let _ = writeln!(s, "iterations = {}", t.iterations);
        let _ = writeln!(s, "batch = {}", t.batch_shapes);
        let _ = writeln!(s, "noises = {}", t.noises_per_view);
        let _ = writeln!(s, "lr = {:?}", t.lr);
        let _ = writeln!(s, "metric = {}", metric_name(t.metric));
        let _ = writeln!(s, "critic_steps = {}", t.critic_steps);
        let _ = writeln!(s, "alpha1 = {:?}", w.alpha1);
        let _ = writeln!(s, "beta1 = {:?}", w.beta1);
        let _ = writeln!(s, "\n[stage2]");
        let _ = writeln!(s, "enabled = {}", p.multi_view.is_some());
        if let Some(t) = &p.multi_view {
            let _ = writeln!(s, "iterations = {}", t.iterations);
            let _ = writeln!(s, "shapes = {}", t.batch_shapes);
            let _ = writeln!(s, "views = {}", t.views_per_shape);
            let _ = writeln!(s, "noises = {}", t.noises_per_view);
            let _ = writeln!(s, "lr = {:?}", t.lr);
            let _ = writeln!(s, "metric = {}", metric_name(t.metric));
            let _ = writeln!(s, "critic_steps = {}", t.critic_steps);
            let _ = writeln!(s, "concat_diversity = {}", t.concat_diversity);
        }
        let _ = writeln!(s, "alpha2 = {:?}", w.alpha2);
        let _ = writeln!(s, "beta2 = {:?}", w.beta2);
        let i = &self.inference;
        let _ = writeln!(s, "\n[inference]");
        let _ = writeln!(s, "groups = {}", i.groups);
        let _ = writeln!(s, "opt_steps = {}", i.opt_steps);
        let _ = writeln!(s, "opt_lr = {:?}", i.opt_lr);
        let _ = writeln!(s, "convergence_tol = {:?}", i.convergence_tol);
        let _ = writeln!(s, "convergence_window = {}", i.convergence_window);
        let _ = writeln!(s, "max_halvings = {}", i.max_halvings);
        let _ = writeln!(s, "keep_norm = {}", i.keep_norm);
        let _ = writeln!(s, "seed = {}", i.seed);
        let e = &self.eval;
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "views = {}", e.views);
        let _ = writeln!(s, "episodes = {}", e.episodes);
        let _ = writeln!(s, "diversity_k = {}", e.diversity_k);
        let _ = writeln!(s, "sweep = {}", list(&e.sweep));
        let _ = writeln!(s, "seed = {}", e.seed);
        s
    }
}

fn metric_name(m: FrontMetric) -> &'static str {
    match m {
        FrontMetric::Chamfer => "cd",
        FrontMetric::Emd => "emd",
    }
}

#[derive(Debug)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug)]
struct Section {
    name: String,
    entries: Vec<Entry>,
}

const SECTIONS: [&str; 8] = ["data", "model", "train", "autoencoder", "stage1", "stage2", "inference", "eval"];

struct Document {
    path: PathBuf,
    sections: Vec<Section>,
}

impl Document {
    fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut doc = Document {
            path: path.to_path_buf(),
            sections: Vec::new(),
        };
        let mut seen_sections = BTreeSet::new();
        let mut seen_keys = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| doc.error(line, "unterminated section header"))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(doc.error(line, format!("unknown section [{name}]")));
                }
                if !seen_sections.insert(name.to_string()) {
                    return Err(doc.error(line, format!("section [{name}] appears twice")));
                }
                doc.sections.push(Section {
                    name: name.to_string(),
                    entries: Vec::new(),
                });
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| doc.error(line, "expected 'key = value' or '[section]'"))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(doc.error(line, "empty key"));
            }
            let Some(section) = doc.sections.last_mut() else {
                return Err(doc.error(line, format!("key '{k}' outside any section")));
            };
            if !seen_keys.insert((section.name.clone(), k.to_string())) {
                let name = section.name.clone();
                return Err(doc.error(line, format!("duplicate key '{k}' in [{name}]")));
            }
            section.entries.push(Entry {
                key: k.to_string(),
                value: v.to_string(),
                line,
            });
        }
        Ok(doc)
    }

    fn find(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections
            .iter()
            .filter(|s| s.name == section)
            .flat_map(|s| &s.entries)
            .find(|e| e.key == key)
    }

    fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Config {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }
}

struct Value<'a> {
    doc: &'a Document,
    entry: &'a Entry,
}

impl Value<'_> {
    fn parse<T: FromStr>(&self) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.entry.value.parse::<T>().map_err(|e| {
            self.doc
                .error(self.entry.line, format!("{}: invalid value '{}': {e}", self.entry.key, self.entry.value))
        })
    }

    fn list<T: FromStr>(&self) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.entry
            .value
            .split(',')
            .map(|t| {
                t.trim().parse::<T>().map_err(|e| {
                    self.doc
                        .error(self.entry.line, format!("{}: invalid item '{}': {e}", self.entry.key, t.trim()))
                })
            })
            .collect()
    }
}

/// Families accepted by the `families` key.
pub fn family_names() -> Vec<&'static str> {
    Family::ALL.iter().map(|f| f.name()).collect()
}
