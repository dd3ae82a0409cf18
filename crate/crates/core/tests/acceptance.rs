//! Acceptance gate. Prints one PASS/FAIL line per criterion.
//!
//! Exact checks (metric oracles, gradients, view sampling, partial
//! supervision, determinism, fixed point) fail the target. The desk-corpus
//! trend lines are reported without failing it; see the README.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mvshape::autodiff::{finite_difference, relative_error, ParamSet, Tape, Tensor, Var};
use mvshape::eval::{
    corpus_diversity, correlate, evaluate_records, summarize, views_sweep, write_eval_csv, EvalConfig, EvalSummary,
    Provenance,
};
use mvshape::geom::{Camera, Point3, PointCloud};
use mvshape::infer::{optimize_latents, InferenceConfig, InferenceMode};
use mvshape::losses::{
    consistency_loss, consistency_loss_var, diversity_loss_var, front_loss, front_loss_var, full_chamfer, FrontMetric,
    LossWeights,
};
use mvshape::metrics::{chamfer, chamfer_total, emd, REPORT_SCALE};
use mvshape::model::{cloud_to_tensor, GeneratorKind, Image, LatentInput, Model, ModelConfig, ModelParams};
use mvshape::render::{front_part, render_depth, splat_target, unproject_pixel, view_based_sample};
use mvshape::synthdata::{generate_corpus, DataConfig, DatasetRecord, Split};
use mvshape::train::{
    init_with_autoencoder, pretrain_autoencoder, reconstruction_error, train_multi_view, train_pipeline,
    train_single_view, PipelineConfig, Stage, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Default)]
struct Gate {
    fatal_failures: Vec<String>,
    trend_failures: Vec<String>,
}

impl Gate {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.fatal_failures.push(id.to_string());
        }
    }

    fn trend(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.trend_failures.push(id.to_string());
        }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| Point3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)))
            .collect(),
    )
    .unwrap()
}

fn random_camera(rng: &mut impl Rng, focal: f64, res: (usize, usize)) -> Camera {
    let az: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let el: f64 = rng.gen_range(-1.0..1.0);
    let r: f64 = rng.gen_range(2.0..4.0);
    let eye = Point3::new(r * el.cos() * az.sin(), r * el.sin(), r * el.cos() * az.cos());
    Camera::look_at(eye, Point3::ORIGIN, focal, res).unwrap()
}

// ---------------------------------------------------------------- 1

fn brute_chamfer(a: &[Point3], b: &[Point3]) -> (f64, f64) {
    let directed = |from: &[Point3], to: &[Point3]| -> f64 {
        let mut sum = 0.0;
        for p in from {
            let mut best = f64::INFINITY;
            for q in to {
                let (dx, dy, dz) = (p.x - q.x, p.y - q.y, p.z - q.z);
                best = best.min((dx * dx + dy * dy + dz * dz).sqrt());
            }
            sum += best;
        }
        sum
    };
    (directed(a, b), directed(b, a))
}

/// Minimum over all n! bijections, by Heap's algorithm.
fn brute_emd(a: &[Point3], b: &[Point3]) -> f64 {
    let n = a.len();
    let cost = |perm: &[usize]| -> f64 {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| {
                let (dx, dy, dz) = (a[i].x - b[j].x, a[i].y - b[j].y, a[i].z - b[j].z);
                dx * dx + dy * dy + dz * dz
            })
            .sum()
    };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = cost(&perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn metric_oracles(gate: &mut Gate) {
    let start = Instant::now();
    let mut mismatches = 0;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n1, n2) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let a = random_cloud(&mut rng, n1);
        let b = random_cloud(&mut rng, n2);
        if chamfer(&a, &b).unwrap() != brute_chamfer(a.points(), b.points()) {
            mismatches += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let n = rng.gen_range(1..=7);
        let a = random_cloud(&mut rng, n);
        let b = random_cloud(&mut rng, n);
        worst = worst.max((emd(&a, &b).unwrap().cost - brute_emd(a.points(), b.points())).abs());
    }
    let elapsed = start.elapsed();
    gate.check(
        "1 metric oracles",
        mismatches == 0 && worst <= 1e-9 && elapsed < Duration::from_secs(60),
        format!(
            "chamfer mismatches {mismatches}/1000, emd max |err| {worst:.2e} over 200 pairs, {}",
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- 2

fn flatten(p: &ParamSet) -> Vec<f64> {
    p.iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
}

fn unflatten(template: &ParamSet, flat: &[f64]) -> ParamSet {
    let mut out = ParamSet::new();
    let mut at = 0;
    for (name, t) in template.iter() {
        let n = t.numel();
        out.insert(name.clone(), Tensor::new(t.shape().to_vec(), flat[at..at + n].to_vec()).unwrap());
        at += n;
    }
    out
}

fn small_model() -> Model {
    Model::new(ModelConfig {
        image_size: 4,
        points: 6,
        latent_dim: 3,
        shape_latent: 4,
        image_hidden: 6,
        image_feature: 4,
        noise_hidden: 3,
        fuse_hidden: 6,
        decoder_hidden: 6,
        encoder_hidden: 4,
        critic_hidden: 4,
    })
    .unwrap()
}

/// Worst relative error between the tape gradient of `loss` at `x` and
/// central differences, over `seeds` random instances.
fn cloud_gradient_check(
    seeds: u64,
    base: u64,
    mut instance: impl FnMut(&mut ChaCha8Rng) -> (PointCloud, Box<dyn Fn(&mut Tape, Var) -> Var>),
) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(base + seed);
        let (x0, loss) = instance(&mut rng);
        let n = x0.len();
        let mut tape = Tape::new();
        let x = tape.leaf(cloud_to_tensor(&x0));
        let l = loss(&mut tape, x);
        let g = tape.backward(l).unwrap().wrt(x);
        let numeric = finite_difference(&x0.to_flat(), 1e-6, |p| {
            let mut t = Tape::new();
            let x = t.constant(Tensor::matrix(n, 3, p.to_vec()).unwrap());
            let l = loss(&mut t, x);
            t.scalar_value(l)
        });
        worst = worst.max(relative_error(g.data(), &numeric, 1e-6));
    }
    worst
}

fn gan_generator_term(model: &Model, params: &ModelParams, gen: &ParamSet, images: &Tensor, noise: &Tensor) -> (f64, ParamSet) {
    let mut t = Tape::new();
    let gb = gen.bind(&mut t, true);
    let cb = params.critic.bind(&mut t, false);
    let iv = t.constant(images.clone());
    let nv = t.constant(noise.clone());
    let z = model.encode_image(&mut t, &gb, iv, Some(nv)).unwrap();
    let scores = model.critic_forward(&mut t, &cb, z).unwrap();
    let mean = t.mean(scores);
    let term = t.scale(mean, -1.0);
    let grads = gb.collect(&t.backward(term).unwrap());
    (t.scalar_value(term), grads)
}

fn gradient_suite(gate: &mut Gate) {
    let start = Instant::now();
    let front = |metric: FrontMetric| {
        move |rng: &mut ChaCha8Rng| -> (PointCloud, Box<dyn Fn(&mut Tape, Var) -> Var>) {
            let cam = random_camera(rng, 5.0, (5, 5));
            let a = random_cloud(rng, 10);
            let b = random_cloud(rng, 10);
            let gt_front = front_part(&b, &cam);
            (a, Box::new(move |t, x| front_loss_var(t, x, &gt_front, &cam, metric).unwrap()))
        }
    };
    let front_cd = cloud_gradient_check(100, 20_000, front(FrontMetric::Chamfer));
    let front_emd = cloud_gradient_check(100, 21_000, front(FrontMetric::Emd));
    let mut active = 0;
    let div = cloud_gradient_check(100, 22_000, |rng| {
        let a = random_cloud(rng, 8);
        let b = random_cloud(rng, 8);
        let r1 = LatentInput::sample(3, rng);
        let r2 = LatentInput::sample(3, rng);
        let alpha = rng.gen_range(0.01..0.1);
        let e = emd(&a, &b).unwrap().cost;
        if r1.distance(&r2) > alpha * e {
            active += 1;
        }
        (
            a,
            Box::new(move |t, x| {
                let other = t.constant(cloud_to_tensor(&b));
                diversity_loss_var(t, &r1, &r2, x, other, alpha).unwrap()
            }),
        )
    });
    let consis = cloud_gradient_check(100, 23_000, |rng| {
        let a = random_cloud(rng, 8);
        let others: Vec<PointCloud> = (0..rng.gen_range(1..4)).map(|_| random_cloud(rng, 8)).collect();
        (
            a,
            Box::new(move |t, x| {
                let mut shapes = vec![x];
                shapes.extend(others.iter().map(|o| t.constant(cloud_to_tensor(o))));
                consistency_loss_var(t, &shapes).unwrap()
            }),
        )
    });

    let model = small_model();
    let mut gan: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(24_000 + seed);
        let params = model.init(GeneratorKind::Conditional, &mut rng);
        let rows = 3;
        let images = Tensor::matrix(rows, 16, (0..rows * 16).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let noise = Tensor::matrix(rows, 3, (0..rows * 3).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let (_, grads) = gan_generator_term(&model, &params, &params.generator, &images, &noise);
        let numeric = finite_difference(&flatten(&params.generator), 1e-6, |flat| {
            gan_generator_term(&model, &params, &unflatten(&params.generator, flat), &images, &noise).0
        });
        gan = gan.max(relative_error(&flatten(&grads), &numeric, 1e-6));
    }
    let elapsed = start.elapsed();
    let worst = front_cd.max(front_emd).max(div).max(consis).max(gan);
    gate.check(
        "2 gradient suite",
        worst < 1e-4 && active > 50 && elapsed < Duration::from_secs(120),
        format!(
            "max rel err: front/cd {front_cd:.1e}, front/emd {front_emd:.1e}, diversity {div:.1e} \
             ({active}/100 active hinges), consistency {consis:.1e}, gan generator {gan:.1e}; {}",
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- 3

fn view_sampling(gate: &mut Gate) {
    let mut contributor_mismatch = 0;
    let mut rerender_mismatch = 0;
    let mut occluded = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(30_000 + seed);
        let res = (rng.gen_range(3..12), rng.gen_range(3..12));
        let focal = rng.gen_range(3.0..12.0);
        let cam = random_camera(&mut rng, focal, res);
        let n = rng.gen_range(1..120);
        let pc = random_cloud(&mut rng, n);
        let map = render_depth(&pc, &cam);

        // Brute force: every pixel scans every point.
        let targets: Vec<Option<(usize, f64)>> = pc.points().iter().map(|&p| splat_target(p, &cam)).collect();
        for pix in 0..res.0 * res.1 {
            let mut best: Option<(usize, f64)> = None;
            for (i, t) in targets.iter().enumerate() {
                if let Some((tp, d)) = *t {
                    if tp == pix && best.map_or(true, |(_, bd)| d < bd) {
                        best = Some((i, d));
                    }
                }
            }
            let got = map.pixels[pix].map(|s| (s.contributor, s.depth));
            if got != best {
                contributor_mismatch += 1;
            }
        }
        let sample = view_based_sample(&pc, &cam);
        occluded += sample.back_indices.len();
        if !render_depth(&front_part(&pc, &cam), &cam).same_depths(&map) {
            rerender_mismatch += 1;
        }
    }
    gate.check(
        "3 view-based sampling",
        contributor_mismatch == 0 && rerender_mismatch == 0 && occluded > 0,
        format!(
            "contributor mismatches {contributor_mismatch}, front re-render mismatches {rerender_mismatch} \
             over 100 cloud/camera pairs ({occluded} occluded points)"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn partial_supervision(gate: &mut Gate) {
    let cam = Camera::look_at(Point3::new(0.0, 0.0, 3.0), Point3::ORIGIN, 8.0, (8, 8)).unwrap();
    let mut plate = Vec::new();
    for row in 0..8 {
        for col in 0..8 {
            plate.push(unproject_pixel(col, row, 2.5, &cam));
        }
    }
    // Hidden points on the rays of every third plate point; the prediction
    // pushes them farther back.
    let behind = |extra: f64| -> Vec<Point3> {
        plate
            .iter()
            .step_by(3)
            .map(|&p| p + (p - cam.center()).normalized() * extra)
            .collect()
    };
    let gt = PointCloud::new([plate.clone(), behind(0.2)].concat()).unwrap();
    let pred = PointCloud::new([plate.clone(), behind(0.6)].concat()).unwrap();
    let fl_cd = front_loss(&pred, &gt, &cam, FrontMetric::Chamfer).unwrap();
    let fl_emd = front_loss(&pred, &gt, &cam, FrontMetric::Emd).unwrap();
    let full = full_chamfer(&pred, &gt).unwrap();
    gate.check(
        "4 partial-supervision signature",
        fl_cd == 0.0 && fl_emd == 0.0 && full > 0.0,
        format!("front loss cd {fl_cd}, emd {fl_emd}; full-cloud CD {full:.4}"),
    )
}

// ---------------------------------------------------------------- 6

fn tiny_data() -> DataConfig {
    let mut d = DataConfig {
        shapes: 10,
        points: 16,
        image_size: 8,
        ..DataConfig::default()
    };
    d.ring.view_count = 4;
    d.ring.resolution = (8, 8);
    d.ring.focal = 8.0;
    d
}

fn tiny_model() -> Model {
    Model::new(ModelConfig {
        image_size: 8,
        points: 16,
        latent_dim: 3,
        shape_latent: 4,
        image_hidden: 8,
        image_feature: 4,
        noise_hidden: 4,
        fuse_hidden: 8,
        decoder_hidden: 8,
        encoder_hidden: 4,
        critic_hidden: 4,
    })
    .unwrap()
}

fn tiny_run(seed: u64) -> (Vec<u8>, String, Vec<u8>) {
    let corpus = generate_corpus(&tiny_data()).unwrap();
    let model = tiny_model();
    let mut cfg = PipelineConfig::desk(GeneratorKind::Conditional);
    cfg.seed = seed;
    cfg.autoencoder.iterations = 20;
    cfg.autoencoder.batch_shapes = 4;
    cfg.single_view.iterations = 8;
    cfg.single_view.batch_shapes = 2;
    cfg.single_view.noises_per_view = 2;
    cfg.single_view.seed = seed;
    let mv = cfg.multi_view.as_mut().unwrap();
    mv.iterations = 4;
    mv.batch_shapes = 1;
    mv.views_per_shape = 2;
    mv.noises_per_view = 2;
    mv.seed = seed;
    let (params, logs) = train_pipeline(&model, &corpus, &cfg).unwrap();
    let log_text = [
        logs.autoencoder.to_csv(),
        logs.single_view.to_csv(),
        logs.multi_view.unwrap().to_csv(),
    ]
    .concat();
    let test: Vec<&DatasetRecord> = corpus.iter().filter(|r| r.split == Split::Test).collect();
    let eval = EvalConfig {
        n_views: 3,
        inference: InferenceConfig {
            opt_steps: 10,
            ..InferenceConfig::default()
        },
        seed,
        ..EvalConfig::default()
    };
    let rows = evaluate_records(&model, &params, &test, &eval).unwrap();
    let mut csv = Vec::new();
    write_eval_csv(&rows, &Provenance::new("tiny", seed), &mut csv).unwrap();
    (params.to_param_set().to_checkpoint_bytes(), log_text, csv)
}

fn determinism(gate: &mut Gate) {
    let a = tiny_run(3);
    let b = tiny_run(3);
    let c = tiny_run(4);
    gate.check(
        "6 determinism",
        a == b && a.0 != c.0,
        format!(
            "checkpoint identical {}, logs identical {}, metric csv identical {}; other seed differs {}",
            a.0 == b.0,
            a.1 == b.1,
            a.2 == b.2,
            a.0 != c.0
        ),
    )
}

// ---------------------------------------------------------------- 7

fn fixed_point(gate: &mut Gate) {
    let model = tiny_model();
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let params = model.init(GeneratorKind::Conditional, &mut rng);
    let image = Image::new(8, (0..64).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let r = LatentInput::sample(3, &mut rng);
    let images = vec![&image; 4];
    let init = vec![r.clone(); 4];
    let (latents, trace) = optimize_latents(&model, &params, &images, &init, &InferenceConfig::default()).unwrap();
    let shape = random_cloud(&mut rng, 16);
    let direct = consistency_loss(&vec![shape; 4]).unwrap();
    let pass = direct == 0.0 && trace.initial_consis == 0.0 && trace.accepted_steps() == 0 && latents == init;
    gate.check(
        "7 consistency fixed point",
        pass,
        format!(
            "identical shapes loss {direct}, optimizer initial loss {}, accepted steps {}",
            trace.initial_consis,
            trace.accepted_steps()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn cd100(s: &EvalSummary) -> f64 {
    s.mean_cd * REPORT_SCALE
}

struct Desk {
    corpus: Vec<DatasetRecord>,
    model: Model,
}

impl Desk {
    fn test(&self) -> Vec<&DatasetRecord> {
        self.corpus.iter().filter(|r| r.split == Split::Test).collect()
    }

    fn train(&self) -> Vec<&DatasetRecord> {
        self.corpus.iter().filter(|r| r.split == Split::Train).collect()
    }

    fn eval(&self, params: &ModelParams, mode: InferenceMode, n_views: usize, seed: u64) -> EvalSummary {
        let cfg = EvalConfig {
            n_views,
            mode,
            inference: InferenceConfig {
                seed,
                ..InferenceConfig::default()
            },
            seed,
        };
        summarize(&evaluate_records(&self.model, params, &self.test(), &cfg).unwrap())
    }
}

fn single_view_cfg(beta: f64, seed: u64, model: &Model) -> TrainConfig {
    let mut cfg = TrainConfig::desk(Stage::SingleView);
    cfg.weights = LossWeights { beta, ..LossWeights::STAGE1 }.at_scale(model.config.points, model.config.latent_dim);
    cfg.seed = seed;
    cfg
}

fn trends(gate: &mut Gate) {
    let start = Instant::now();
    let desk = Desk {
        corpus: generate_corpus(&DataConfig::default()).unwrap(),
        model: Model::new(ModelConfig::default()).unwrap(),
    };
    let model = &desk.model;
    let (enc, dec, _) = pretrain_autoencoder(model, &desk.corpus, &TrainConfig::desk(Stage::Autoencoder)).unwrap();

    // Round trip of the frozen autoencoder against the nearest other
    // training shape, which is what plain retrieval would achieve.
    let train = desk.train();
    let per_point = model.config.points as f64;
    let ae = reconstruction_error(model, &enc, &dec, &train).unwrap() / per_point * REPORT_SCALE;
    let retrieval = train
        .iter()
        .enumerate()
        .map(|(i, a)| {
            train
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| chamfer_total(&a.cloud, &b.cloud).unwrap())
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / train.len() as f64
        / per_point
        * REPORT_SCALE;
    gate.trend(
        "5.0 autoencoder round trip",
        ae < retrieval,
        format!("train CD x100 {ae:.2} < nearest-other-shape bound {retrieval:.2}"),
    );

    // a: stage-1 models at β ∈ {0, 1, 10}; the β = 10 model seeds the
    // seed-0 conditional pipeline below.
    let mut stage1 = Vec::new();
    let mut diversity = Vec::new();
    for beta in [0.0, 1.0, 10.0] {
        let mut params = init_with_autoencoder(model, GeneratorKind::Conditional, &enc, &dec, 0);
        train_single_view(model, &mut params, &desk.corpus, &single_view_cfg(beta, 0, model)).unwrap();
        diversity.push(corpus_diversity(model, &params, &desk.test(), 10, 0).unwrap());
        stage1.push(params);
    }
    gate.trend(
        "5a diversity monotone in beta",
        diversity[0] < diversity[1] && diversity[1] < diversity[2],
        format!(
            "corpus diversity at beta 0 / 1 / 10: {:.3} / {:.3} / {:.3}",
            diversity[0], diversity[1], diversity[2]
        ),
    );

    // b, c: three seeds of each generator over the shared autoencoder.
    let mut rows = Vec::new();
    let mut conditional_seed0 = None;
    for seed in 0..3u64 {
        let mut cond = if seed == 0 {
            stage1[2].clone()
        } else {
            let mut p = init_with_autoencoder(model, GeneratorKind::Conditional, &enc, &dec, seed);
            train_single_view(model, &mut p, &desk.corpus, &single_view_cfg(10.0, seed, model)).unwrap();
            p
        };
        let mut mv = TrainConfig::desk(Stage::MultiView);
        mv.seed = seed;
        train_multi_view(model, &mut cond, &desk.corpus, &mv).unwrap();

        let mut det_cfg = PipelineConfig::desk(GeneratorKind::Deterministic);
        det_cfg.seed = seed;
        det_cfg.single_view.seed = seed;
        det_cfg.multi_view.as_mut().unwrap().seed = seed;
        let mut det = init_with_autoencoder(model, GeneratorKind::Deterministic, &enc, &dec, seed);
        train_single_view(model, &mut det, &desk.corpus, &det_cfg.single_view).unwrap();
        train_multi_view(model, &mut det, &desk.corpus, det_cfg.multi_view.as_ref().unwrap()).unwrap();

        let random = cd100(&desk.eval(&cond, InferenceMode::Random, 8, seed));
        let heuristic = cd100(&desk.eval(&cond, InferenceMode::Heuristic, 8, seed));
        let optimized = cd100(&desk.eval(&cond, InferenceMode::HeuristicOptimized, 8, seed));
        let deterministic = cd100(&desk.eval(&det, InferenceMode::HeuristicOptimized, 8, seed));
        println!(
            "     seed {seed}: CD x100 random {random:.3}, heuristic {heuristic:.3}, heuristic+opt {optimized:.3}, \
             deterministic {deterministic:.3}"
        );
        rows.push((random, heuristic, optimized, deterministic));
        if seed == 0 {
            conditional_seed0 = Some(cond);
        }
    }
    let list = |f: &dyn Fn(&(f64, f64, f64, f64)) -> f64| {
        rows.iter().map(|r| format!("{:.3}", f(r))).collect::<Vec<_>>().join(" / ")
    };
    gate.trend(
        "5b random > heuristic",
        rows.iter().all(|r| r.0 > r.1),
        format!("per seed {} vs {}", list(&|r| r.0), list(&|r| r.1)),
    );
    gate.trend(
        "5b heuristic > heuristic+optimization",
        rows.iter().all(|r| r.1 > r.2),
        format!("per seed {} vs {}", list(&|r| r.1), list(&|r| r.2)),
    );
    gate.trend(
        "5c conditional <= deterministic at 8 views",
        rows.iter().all(|r| r.2 <= r.3),
        format!("per seed {} vs {}", list(&|r| r.2), list(&|r| r.3)),
    );

    let cond = conditional_seed0.unwrap();
    let eval = EvalConfig::default();
    let sweep = views_sweep(model, &cond, &desk.test(), &[1, 2, 4, 8], &eval).unwrap();
    let cds: Vec<f64> = sweep.iter().map(|(_, s)| cd100(s)).collect();
    gate.trend(
        "5d views sweep non-increasing",
        cds.windows(2).all(|w| w[1] <= w[0]),
        format!(
            "CD x100 at 1 / 2 / 4 / 8 views: {}",
            cds.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>().join(" / ")
        ),
    );

    let report = correlate(model, &cond, &desk.test(), 200, 8, &InferenceConfig::default(), 0).unwrap();
    let r = report.r;
    gate.trend(
        "5e consistency/CD correlation positive",
        r.is_some_and(|r| r > 0.0),
        format!("pearson r over 200 episodes {}", r.map_or("NA".into(), |r| format!("{r:.3}"))),
    );

    let elapsed = start.elapsed();
    gate.trend(
        "5 desk runtime",
        elapsed < Duration::from_secs(30 * 60),
        format!("{} (budget 30 min)", secs(elapsed)),
    );
}

fn main() -> ExitCode {
    let mut gate = Gate::default();
    metric_oracles(&mut gate);
    gradient_suite(&mut gate);
    view_sampling(&mut gate);
    partial_supervision(&mut gate);
    determinism(&mut gate);
    fixed_point(&mut gate);
    if std::env::var_os("MVSHAPE_SKIP_TRENDS").is_some() {
        println!("SKIP 5 desk trends (MVSHAPE_SKIP_TRENDS set)");
    } else {
        trends(&mut gate);
    }
    println!(
        "acceptance: {} exact-check failure(s) {:?}; {} trend failure(s) {:?}",
        gate.fatal_failures.len(),
        gate.fatal_failures,
        gate.trend_failures.len(),
        gate.trend_failures
    );
    if gate.fatal_failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
