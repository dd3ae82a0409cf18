use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mvshape::autodiff::ParamSet;
use mvshape::config::RunConfig;
use mvshape::eval::{
    correlate, corpus_diversity, diversity, evaluate_records, format_r, paired_delta, summarize, views_sweep,
    write_eval_csv, write_sweep_csv, EvalConfig, Provenance,
};
use mvshape::infer::reconstruct;
use mvshape::io::{read_camera, read_ply, write_ply, PlyEncoding};
use mvshape::metrics::{MetricReport, REPORT_SCALE};
use mvshape::model::{Image, Model, ModelParams};
use mvshape::render::{render_depth, write_pgm};
use mvshape::synthdata::{build_dataset, generate_corpus, image_depth_range, load_dataset, DatasetRecord, Split};
use mvshape::train::train_pipeline;
use mvshape::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser, Debug)]
#[command(name = "mvshape", version, about = "Conditional point-set generation and multi-view reconstruction")]
struct Cli {
    /// Run configuration (`[section]` / `key = value`); desk defaults if absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for training, inference and evaluation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "mvshape-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the procedural corpus.
    GenData,
    /// Train the autoencoder and both generator stages.
    Train {
        /// Dataset directory; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Reconstruct one test shape from several views.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Shape id; the first test shape when absent.
        #[arg(long)]
        shape: Option<String>,
        #[arg(long)]
        views: Option<usize>,
    },
    /// Reconstruct every test shape and write per-shape metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        views: Option<usize>,
        /// Second checkpoint evaluated on the same episodes.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Depth-render a point cloud.
    Render {
        ply: PathBuf,
        camera: PathBuf,
        /// Output PGM file.
        output: PathBuf,
    },
    /// Consistency loss over k predictions for one image or every test image.
    Diversity {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        shape: Option<String>,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Consistency loss against reconstruction error over many episodes.
    Correlate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        views: Option<usize>,
    },
    /// Mean reconstruction error for each number of input views.
    ViewsSweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) | Error::BadSpec(_) | Error::TooFewViews(_) => EXIT_CONFIG,
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::Io(_) | Error::Format { .. } => EXIT_IO,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

struct Context {
    cfg: RunConfig,
    provenance: Provenance,
    out: PathBuf,
}

impl Context {
    fn create(&self, name: &str) -> mvshape::Result<BufWriter<File>> {
        fs::create_dir_all(&self.out)?;
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn model(&self) -> mvshape::Result<Model> {
        Model::new(self.cfg.model.clone())
    }

    fn corpus(&self, data: Option<&Path>) -> mvshape::Result<Vec<DatasetRecord>> {
        match data {
            Some(dir) => load_dataset(dir),
            None => generate_corpus(&self.cfg.data),
        }
    }

    fn load_params(&self, model: &Model, path: &Path) -> mvshape::Result<ModelParams> {
        let all = ParamSet::read_checkpoint(BufReader::new(File::open(path)?))?;
        let params = ModelParams::from_checkpoint(&all);
        let expected = model.init(params.kind, &mut ChaCha8Rng::seed_from_u64(0)).to_param_set();
        for (name, t) in expected.iter() {
            match all.get(name) {
                Some(found) if found.shape() == t.shape() => {}
                Some(found) => {
                    return Err(Error::InvalidArgument(format!(
                        "checkpoint tensor {name} has shape {:?}, the configured model expects {:?}",
                        found.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::InvalidArgument(format!("checkpoint lacks tensor {name}"))),
            }
        }
        Ok(params)
    }
}

fn test_records(corpus: &[DatasetRecord]) -> Vec<&DatasetRecord> {
    corpus.iter().filter(|r| r.split == Split::Test).collect()
}

fn run(cli: Cli) -> mvshape::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::desk(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let provenance = Provenance::new(&cfg.to_text(), cfg.pipeline.seed);
    let ctx = Context {
        cfg,
        provenance,
        out: cli.out,
    };
    match cli.command {
        Command::GenData => gen_data(&ctx),
        Command::Train { data } => train(&ctx, data.as_deref()),
        Command::Infer {
            checkpoint,
            data,
            shape,
            views,
        } => infer(&ctx, &checkpoint, data.as_deref(), shape.as_deref(), views),
        Command::Eval {
            checkpoint,
            data,
            views,
            compare,
        } => eval(&ctx, &checkpoint, data.as_deref(), views, compare.as_deref()),
        Command::Render { ply, camera, output } => render(&ply, &camera, &output, &ctx),
        Command::Diversity {
            checkpoint,
            data,
            shape,
            view,
            k,
        } => diversity_cmd(&ctx, &checkpoint, data.as_deref(), shape.as_deref(), view, k),
        Command::Correlate {
            checkpoint,
            data,
            episodes,
            views,
        } => correlate_cmd(&ctx, &checkpoint, data.as_deref(), episodes, views),
        Command::ViewsSweep { checkpoint, data } => sweep_cmd(&ctx, &checkpoint, data.as_deref()),
    }
}

fn write_provenance(ctx: &Context) -> mvshape::Result<()> {
    let mut f = ctx.create("config.cfg")?;
    writeln!(f, "{}", ctx.provenance.header())?;
    f.write_all(ctx.cfg.to_text().as_bytes())?;
    Ok(())
}

fn gen_data(ctx: &Context) -> mvshape::Result<()> {
    let entries = build_dataset(&ctx.cfg.data, &ctx.out)?;
    write_provenance(ctx)?;
    let test = entries.iter().filter(|e| e.split == Split::Test).count();
    println!(
        "wrote {} shapes ({} train, {test} test) to {}",
        entries.len(),
        entries.len() - test,
        ctx.out.display()
    );
    Ok(())
}

fn train(ctx: &Context, data: Option<&Path>) -> mvshape::Result<()> {
    let model = ctx.model()?;
    let corpus = ctx.corpus(data)?;
    let (params, logs) = train_pipeline(&model, &corpus, &ctx.cfg.resolved_pipeline())?;
    params.to_param_set().write_checkpoint(ctx.create("checkpoint.bin")?)?;
    write_provenance(ctx)?;
    let mut logs_out = vec![("autoencoder.csv", &logs.autoencoder), ("stage1.csv", &logs.single_view)];
    if let Some(l) = &logs.multi_view {
        logs_out.push(("stage2.csv", l));
    }
    for (name, log) in logs_out {
        let mut f = ctx.create(name)?;
        writeln!(f, "{}", ctx.provenance.header())?;
        log.write_csv(&mut f)?;
    }
    let last = logs.multi_view.as_ref().unwrap_or(&logs.single_view).last();
    if let Some(r) = last {
        println!("final front {:.6} div {:.6} gan {:.6} total {:.6}", r.front, r.div, r.gan, r.total);
    }
    println!("checkpoint written to {}", ctx.out.join("checkpoint.bin").display());
    Ok(())
}

fn infer(
    ctx: &Context,
    checkpoint: &Path,
    data: Option<&Path>,
    shape: Option<&str>,
    views: Option<usize>,
) -> mvshape::Result<()> {
    let model = ctx.model()?;
    let params = ctx.load_params(&model, checkpoint)?;
    let corpus = ctx.corpus(data)?;
    let record = match shape {
        Some(id) => corpus
            .iter()
            .find(|r| r.shape_id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("no shape '{id}' in the dataset")))?,
        None => *test_records(&corpus)
            .first()
            .ok_or_else(|| Error::InvalidArgument("the dataset has no test shapes".into()))?,
    };
    let n = views.unwrap_or(ctx.cfg.eval.views);
    if n == 0 || n > record.views.len() {
        return Err(Error::InvalidArgument(format!("--views must be in 1..={}", record.views.len())));
    }
    let images: Vec<&Image> = record.views[..n].iter().map(|v| &v.image).collect();
    let rec = reconstruct(&model, &params, &images, &ctx.cfg.inference)?;
    let report = MetricReport::evaluate(&rec.cloud, &record.cloud)?;

    let mut ply = Vec::new();
    write_ply(&rec.cloud, PlyEncoding::Ascii, &mut ply)?;
    let text = String::from_utf8(ply).expect("ascii PLY");
    let comment = format!("comment {}", ctx.provenance.header().trim_start_matches("# "));
    let ply = text.replacen("format ascii 1.0\n", &format!("format ascii 1.0\n{comment}\n"), 1);
    ctx.create("reconstruction.ply")?.write_all(ply.as_bytes())?;

    let mut trace = ctx.create("trace.csv")?;
    writeln!(trace, "{}", ctx.provenance.header())?;
    rec.trace.write_csv(&mut trace)?;

    let mut summary = ctx.create("summary.txt")?;
    writeln!(summary, "{}", ctx.provenance.header())?;
    writeln!(summary, "shape_id = {}", record.shape_id)?;
    writeln!(summary, "n_views = {n}")?;
    writeln!(summary, "chosen_group = {}", rec.trace.chosen_group)?;
    writeln!(summary, "accepted_steps = {}", rec.trace.accepted_steps())?;
    writeln!(summary, "init_consis = {:.9}", rec.trace.initial_consis)?;
    writeln!(summary, "final_consis = {:.9}", rec.trace.final_consis)?;
    writeln!(summary, "cd_x100 = {:.9}", report.cd * REPORT_SCALE)?;
    writeln!(summary, "fps_cd_x100 = {:.9}", report.fps_cd * REPORT_SCALE)?;
    println!(
        "{}: {n} views, consistency {:.6} -> {:.6}, CD x100 {:.4}",
        record.shape_id,
        rec.trace.initial_consis,
        rec.trace.final_consis,
        report.cd * REPORT_SCALE
    );
    Ok(())
}

fn eval_config(ctx: &Context, views: Option<usize>) -> EvalConfig {
    EvalConfig {
        n_views: views.unwrap_or(ctx.cfg.eval.views),
        inference: ctx.cfg.inference.clone(),
        seed: ctx.cfg.eval.seed,
        ..EvalConfig::default()
    }
}

fn eval(
    ctx: &Context,
    checkpoint: &Path,
    data: Option<&Path>,
    views: Option<usize>,
    compare: Option<&Path>,
) -> mvshape::Result<()> {
    let model = ctx.model()?;
    let params = ctx.load_params(&model, checkpoint)?;
    let corpus = ctx.corpus(data)?;
    let test = test_records(&corpus);
    let ecfg = eval_config(ctx, views);
    let rows = evaluate_records(&model, &params, &test, &ecfg)?;
    write_eval_csv(&rows, &ctx.provenance, ctx.create("metrics.csv")?)?;
    let s = summarize(&rows);
    println!(
        "{} test shapes, {} views: mean CD x100 {:.4}, FPS-CD x100 {:.4}",
        s.count,
        ecfg.n_views,
        s.mean_cd * REPORT_SCALE,
        s.mean_fps_cd * REPORT_SCALE
    );
    if let Some(other) = compare {
        let second = ctx.load_params(&model, other)?;
        let rows2 = evaluate_records(&model, &second, &test, &ecfg)?;
        write_eval_csv(&rows2, &ctx.provenance, ctx.create("metrics_compare.csv")?)?;
        let d = paired_delta(&rows, &rows2)?;
        let labels = (params.kind.name(), second.kind.name());
        let labels = if labels.0 == labels.1 { ("first", "second") } else { labels };
        d.write(labels, &ctx.provenance, ctx.create("delta.txt")?)?;
        println!(
            "{} {:.4} vs {} {:.4} (delta {:+.4})",
            labels.0,
            d.mean_first * REPORT_SCALE,
            labels.1,
            d.mean_second * REPORT_SCALE,
            d.delta * REPORT_SCALE
        );
    }
    Ok(())
}

fn render(ply: &Path, camera: &Path, output: &Path, ctx: &Context) -> mvshape::Result<()> {
    let cloud = read_ply(BufReader::new(File::open(ply)?))?;
    let cam = read_camera(File::open(camera)?)?;
    let map = render_depth(&cloud, &cam);
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_pgm(&map, image_depth_range(&ctx.cfg.data.ring), BufWriter::new(File::create(output)?))?;
    println!("{} of {} pixels covered", map.filled(), map.width * map.height);
    Ok(())
}

fn diversity_cmd(
    ctx: &Context,
    checkpoint: &Path,
    data: Option<&Path>,
    shape: Option<&str>,
    view: usize,
    k: Option<usize>,
) -> mvshape::Result<()> {
    let model = ctx.model()?;
    let params = ctx.load_params(&model, checkpoint)?;
    let corpus = ctx.corpus(data)?;
    let k = k.unwrap_or(ctx.cfg.eval.diversity_k);
    let value = match shape {
        Some(id) => {
            let rec = corpus
                .iter()
                .find(|r| r.shape_id == id)
                .ok_or_else(|| Error::InvalidArgument(format!("no shape '{id}' in the dataset")))?;
            let v = rec
                .views
                .get(view)
                .ok_or_else(|| Error::InvalidArgument(format!("{id} has no view {view}")))?;
            diversity(&model, &params, &v.image, k, &mut ChaCha8Rng::seed_from_u64(ctx.cfg.eval.seed))?
        }
        None => corpus_diversity(&model, &params, &test_records(&corpus), k, ctx.cfg.eval.seed)?,
    };
    let mut f = ctx.create("diversity.csv")?;
    writeln!(f, "{}", ctx.provenance.header())?;
    writeln!(f, "scope,k,diversity")?;
    writeln!(f, "{},{k},{value:.9}", shape.unwrap_or("test-split"))?;
    println!("diversity (k = {k}) {value:.6}");
    Ok(())
}

fn correlate_cmd(
    ctx: &Context,
    checkpoint: &Path,
    data: Option<&Path>,
    episodes: Option<usize>,
    views: Option<usize>,
) -> mvshape::Result<()> {
    let model = ctx.model()?;
    let params = ctx.load_params(&model, checkpoint)?;
    let corpus = ctx.corpus(data)?;
    let rep = correlate(
        &model,
        &params,
        &test_records(&corpus),
        episodes.unwrap_or(ctx.cfg.eval.episodes),
        views.unwrap_or(ctx.cfg.eval.views),
        &ctx.cfg.inference,
        ctx.cfg.eval.seed,
    )?;
    rep.write_scatter(&ctx.provenance, ctx.create("correlation.csv")?)?;
    rep.write_summary(&ctx.provenance, ctx.create("initialization.csv")?)?;
    println!("pearson r = {}", format_r(rep.r));
    for (m, v) in &rep.mode_means {
        println!("{:>10}  mean CD x100 {:.4}", m.name(), v * REPORT_SCALE);
    }
    Ok(())
}

fn sweep_cmd(ctx: &Context, checkpoint: &Path, data: Option<&Path>) -> mvshape::Result<()> {
    let model = ctx.model()?;
    let params = ctx.load_params(&model, checkpoint)?;
    let corpus = ctx.corpus(data)?;
    let sweep = views_sweep(
        &model,
        &params,
        &test_records(&corpus),
        &ctx.cfg.eval.sweep,
        &eval_config(ctx, None),
    )?;
    write_sweep_csv(&sweep, &ctx.provenance, ctx.create("views_sweep.csv")?)?;
    for (n, s) in &sweep {
        println!("{n} views: mean CD x100 {:.4}", s.mean_cd * REPORT_SCALE);
    }
    Ok(())
}
