//! Command-line front end: `simda <subcommand> [flags]`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use simda_core::diffusion::SamplerConfig;
use simda_core::evalbench::{bench_attention, frame_consistency, frechet_distance, text_video_similarity, FeatureSet, Report, VideoFeatureExtractor};
use simda_core::pipelines::{
    adapt_train_t2v, downsample_box, generate_t2v, load_model, one_shot_edit, pretrain_base, save_model, superres_apply, superres_train,
    validation_loss, write_generation, Corpus, ModelKind, RunConfig, SrTask, TrainOutcome, SR_FACTOR,
};
use simda_core::toyworld::dataset::write_dataset;
use simda_core::toyworld::ppm::{read_ppm, write_frames};
use simda_core::toyworld::{parse_caption, synth_video};
use simda_core::{Error, Result, Tensor};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "simda", version, about = "Toy text-to-video diffusion with frozen-base adapters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the 2D base denoiser on single frames.
    PretrainBase(Flags),
    /// Inflate a base checkpoint and train its adapters on clips.
    Train(Flags),
    /// Sample a clip for a caption.
    Generate(Flags),
    /// One-shot edit of a synthetic clip towards a new caption.
    Edit(Flags),
    /// Train the 4x upsampler, or apply it when --ckpt is given.
    Superres(Flags),
    /// Attention cost benchmark.
    Bench(Flags),
    /// Sample clips and report quality metrics.
    Eval(Flags),
}

#[derive(Args, Debug, Clone)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    caption: Option<String>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    ddim_steps: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Directory of low-resolution PPM frames for `superres`.
    #[arg(long)]
    input: Option<PathBuf>,
}

/// Runs the tool on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => EXIT_USAGE,
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Resolved configuration plus the flat key/value view recorded in reports.
struct Ctx {
    cfg: RunConfig,
    kv: BTreeMap<String, String>,
    flags: Flags,
    commit: String,
}

impl Ctx {
    fn new(flags: Flags, command: &str) -> Result<Self> {
        if flags.threads == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        let mut kv = match &flags.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                simda_core::pipelines::config::parse_kv(&text, simda_core::pipelines::config::KEYS)?
            }
            None => BTreeMap::new(),
        };
        let mut over = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.insert(k.to_string(), v);
            }
        };
        over("ddim_steps", flags.ddim_steps.map(|v| v.to_string()));
        over("eta", flags.eta.map(|v| v.to_string()));
        if let Some(s) = flags.seed {
            over("seed", Some(s.to_string()));
        }
        if let Some(s) = flags.steps {
            let key = if command == "edit" { "edit_steps" } else { "steps" };
            over(key, Some(s.to_string()));
        }
        if let Some(f) = flags.frames {
            over("frames", Some(f.to_string()));
        }
        let mut cfg = RunConfig::default();
        for (k, v) in &kv {
            cfg.apply(k, v)?;
        }
        if let Some(s) = flags.seed {
            cfg.sampler.seed = s;
        }
        cfg.validate()?;
        std::fs::create_dir_all(&flags.out_dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", flags.out_dir.display())))?;
        Ok(Self {
            cfg,
            kv,
            flags,
            commit: commit_id(),
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.flags.out_dir.join(name)
    }

    fn ckpt(&self, command: &str) -> Result<&Path> {
        self.flags
            .ckpt
            .as_deref()
            .ok_or_else(|| Error::Config(format!("`{command}` needs --ckpt")))
    }

    fn caption(&self, command: &str) -> Result<String> {
        let c = self
            .flags
            .caption
            .clone()
            .ok_or_else(|| Error::Config(format!("`{command}` needs --caption")))?;
        parse_caption(&c)?;
        Ok(c)
    }

    fn sampler(&self) -> SamplerConfig {
        self.cfg.sampler.clone()
    }

    fn report(&self, file: &str, metric: &str, value: Value) -> Result<()> {
        let mut config: serde_json::Map<String, Value> = self.kv.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
        config.insert("threads".into(), json!(self.flags.threads));
        Report {
            metric: metric.to_string(),
            value,
            config: Value::Object(config),
            commit: self.commit.clone(),
            seed: self.cfg.train.seed,
        }
        .write(&self.out(file))
    }
}

fn commit_id() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::PretrainBase(f) => cmd_pretrain(Ctx::new(f, "pretrain-base")?),
        Command::Train(f) => cmd_train(Ctx::new(f, "train")?),
        Command::Generate(f) => cmd_generate(Ctx::new(f, "generate")?),
        Command::Edit(f) => cmd_edit(Ctx::new(f, "edit")?),
        Command::Superres(f) => cmd_superres(Ctx::new(f, "superres")?),
        Command::Bench(f) => cmd_bench(Ctx::new(f, "bench")?),
        Command::Eval(f) => cmd_eval(Ctx::new(f, "eval")?),
    }
}

fn ckpt_saver<'a>(ctx: &'a Ctx, kind: ModelKind, stem: &'a str) -> impl FnMut(usize, &simda_core::denoiser::Denoiser<f32>) -> Result<()> + 'a {
    move |step, model| save_model(model, kind, &ctx.out(&format!("{stem}_step{step:06}.ckpt")))
}

fn dump_corpus(ctx: &Ctx) -> Result<()> {
    if ctx.cfg.data.dump_data {
        let d = &ctx.cfg.data;
        let corpus = Corpus::new(d)?;
        write_dataset(&ctx.out("data"), &corpus.clips, d.frames, d.height, d.width)?;
    }
    Ok(())
}

fn finish_training(ctx: &Ctx, out: &TrainOutcome, kind: ModelKind, name: &str) -> Result<()> {
    out.log.write_csv(&ctx.out("loss.csv"))?;
    save_model(&out.model, kind, &ctx.out(name))?;
    let b = &out.budget;
    ctx.report(
        "budget.json",
        "parameter_budget",
        json!({"trainable": b.trainable, "frozen": b.frozen, "total": b.total, "trainable_fraction": b.fraction}),
    )?;
    ctx.report(
        "train_loss.json",
        "train_loss",
        json!({"first100_mean": out.log.head_mean(100), "last100_mean": out.log.tail_mean(100), "steps": out.log.records.len()}),
    )?;
    if !out.validation.is_empty() {
        let v: Vec<Value> = out.validation.iter().map(|(s, l)| json!({"step": s, "loss": l})).collect();
        ctx.report("validation.json", "validation_loss", Value::Array(v))?;
    }
    println!("{}", ctx.out(name).display());
    Ok(())
}

fn cmd_pretrain(ctx: Ctx) -> Result<()> {
    dump_corpus(&ctx)?;
    let mut hook = ckpt_saver(&ctx, ModelKind::Image, "base");
    let out = pretrain_base(&ctx.cfg, &mut hook)?;
    finish_training(&ctx, &out, ModelKind::Image, "base.ckpt")
}

fn load_kind(path: &Path, want: ModelKind) -> Result<simda_core::denoiser::Denoiser<f32>> {
    let (kind, model) = load_model(path)?;
    if kind != want {
        return Err(Error::Usage(format!("{} holds a {kind:?} model, expected {want:?}", path.display())));
    }
    Ok(model)
}

fn cmd_train(ctx: Ctx) -> Result<()> {
    let base = load_kind(ctx.ckpt("train")?, ModelKind::Image)?;
    dump_corpus(&ctx)?;
    let mut hook = ckpt_saver(&ctx, ModelKind::Video, "video");
    let out = adapt_train_t2v(&base, &ctx.cfg, &mut hook)?;
    finish_training(&ctx, &out, ModelKind::Video, "video.ckpt")
}

fn cmd_generate(ctx: Ctx) -> Result<()> {
    let path = ctx.ckpt("generate")?;
    let caption = ctx.caption("generate")?;
    let (kind, model) = load_model(path)?;
    if kind == ModelKind::SuperRes {
        return Err(Error::Usage("generate needs an image or video checkpoint".into()));
    }
    let sampler = ctx.sampler();
    let pixels = generate_t2v(&model, &caption, ctx.cfg.data.frames, &ctx.cfg, &sampler)?;
    write_generation(&ctx.flags.out_dir, &pixels, &caption, &sampler)?;
    Ok(())
}

fn cmd_edit(ctx: Ctx) -> Result<()> {
    let model = load_kind(ctx.ckpt("edit")?, ModelKind::Video)?;
    let edited = ctx.caption("edit")?;
    let c = &ctx.cfg;
    let spec = parse_caption(&c.edit_source)?;
    let clip = synth_video(&spec, c.data.frames, c.data.height, c.data.width, c.edit_clip_seed)?;
    let out = one_shot_edit(&model, &clip.pixels, &c.edit_source, &edited, c, c.edit_steps)?;
    write_frames(&ctx.out("source"), "frame_", &clip.pixels)?;
    write_frames(&ctx.out("reconstruction"), "frame_", &out.reconstruction)?;
    write_frames(&ctx.out("edited"), "frame_", &out.edited)?;
    out.log.write_csv(&ctx.out("loss.csv"))?;
    save_model(&out.model, ModelKind::Video, &ctx.out("edit.ckpt"))?;
    let mae = simda_core::pipelines::mean_abs_diff(&out.reconstruction, &clip.pixels)?;
    ctx.report(
        "edit.json",
        "edit_reconstruction_mae",
        json!({"mae": mae, "source": c.edit_source, "edited": edited, "steps": c.edit_steps}),
    )
}

fn read_clip(dir: &Path) -> Result<Tensor<f32>> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Config(format!("no .ppm frames in {}", dir.display())));
    }
    let frames: Vec<Tensor<f32>> = names
        .iter()
        .map(|p| {
            let f = read_ppm(p)?;
            let s = f.shape().to_vec();
            f.reshape(&[1, s[0], s[1], s[2]])
        })
        .collect::<Result<_>>()?;
    Tensor::concat(&frames, 0)
}

fn cmd_superres(ctx: Ctx) -> Result<()> {
    let Some(path) = ctx.flags.ckpt.clone() else {
        let mut hook = ckpt_saver(&ctx, ModelKind::SuperRes, "superres");
        let out = superres_train(&ctx.cfg, SrTask::Upscale, &mut hook)?;
        return finish_training(&ctx, &out, ModelKind::SuperRes, "superres.ckpt");
    };
    let model = load_kind(&path, ModelKind::SuperRes)?;
    let caption = ctx.caption("superres")?;
    let low = match &ctx.flags.input {
        Some(dir) => read_clip(dir)?,
        None => {
            let d = &ctx.cfg.data;
            let clip = synth_video(&parse_caption(&caption)?, d.frames, d.height, d.width, ctx.sampler().seed)?;
            downsample_box(&clip.pixels, SR_FACTOR)?
        }
    };
    let high = superres_apply(&model, &low, &caption, &ctx.cfg, &ctx.sampler())?;
    write_frames(&ctx.out("low"), "frame_", &low)?;
    write_frames(&ctx.out("high"), "frame_", &high)?;
    Ok(())
}

fn cmd_bench(ctx: Ctx) -> Result<()> {
    let b = &ctx.cfg.bench;
    let rows = bench_attention(&b.lengths, b.tokens, b.dim, b.repeats, ctx.cfg.model.shift, ctx.cfg.train.seed)?;
    let value = serde_json::to_value(&rows).map_err(|e| Error::Config(e.to_string()))?;
    ctx.report("bench.json", "attention_cost", value)
}

fn cmd_eval(ctx: Ctx) -> Result<()> {
    let model = load_kind(ctx.ckpt("eval")?, ModelKind::Video)?;
    let c = &ctx.cfg;
    let val = Corpus::validation(&c.data)?;
    let n = c.eval_samples.min(val.len()).max(2);
    let extractor = VideoFeatureExtractor::new(c.data.height, c.data.width, 16, 0xfeed);
    let (mut sims, mut cons, mut real, mut fake) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let clip = val.video(i % val.len())?;
        let sampler = SamplerConfig {
            seed: c.sampler.seed.wrapping_add(i as u64),
            ..c.sampler.clone()
        };
        let gen = generate_t2v(&model, &clip.caption.text, c.data.frames, c, &sampler)?;
        sims.push(text_video_similarity(&model, &clip.caption.text, &gen)?);
        cons.push(frame_consistency(&model, &gen)?);
        real.push(extractor.features(&clip.pixels)?);
        fake.push(extractor.features(&gen)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let fd = frechet_distance(&FeatureSet::from_rows(&real)?, &FeatureSet::from_rows(&fake)?)?;
    let vl = validation_loss(&model, &val, c.train.batch_size, &c.schedule()?)?;
    ctx.report("eval_text_similarity.json", "text_video_similarity", json!(mean(&sims)))?;
    ctx.report("eval_frame_consistency.json", "frame_consistency", json!(mean(&cons)))?;
    ctx.report("eval_frechet.json", "frechet_distance", json!(fd))?;
    ctx.report("eval_validation_loss.json", "validation_loss", json!(vl))
}
