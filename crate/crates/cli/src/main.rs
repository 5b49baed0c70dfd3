use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use jala_core::config::{BackboneInit, Config};
use jala_core::eval::{collect_embeddings, evaluate_model, project_embeddings, run_sweep};
use jala_core::motion::{train_tokenizer, Tokenizer};
use jala_core::selftest;
use jala_core::training::{
    action_mse, model_from_checkpoint, posttrain_metrics_csv, pretrain_metrics_csv, tokenizer_corpus, Checkpoint, Layout, Model,
    Posttrainer, Pretrainer,
};
use jala_core::world::{make_splits, write_episodes, Splits};
use jala_core::Error;
use log::info;

#[derive(Parser)]
#[command(name = "jala", version, about = "Latent-action pretraining pipeline on a synthetic hand world")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// JSON config patched onto the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "JALA_OUT", default_value = "runs")]
    out: PathBuf,
    /// Seed of the stage this verb runs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dotted override, e.g. `pretrain.total_steps=200`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Args, Clone)]
struct TokenizerArg {
    /// Trained tokenizer (default: OUT/train-tokenizer/tokenizer.jtok).
    #[arg(long)]
    tokenizer: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Verb {
    /// Write every split of the synthetic world.
    GenData,
    /// Fit the motion tokenizer on the labeled training chunks.
    TrainTokenizer,
    Pretrain {
        #[command(flatten)]
        tok: TokenizerArg,
        /// Continue from a pretraining checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    Posttrain {
        #[command(flatten)]
        tok: TokenizerArg,
        /// Pretraining checkpoint (default: OUT/pretrain/checkpoint.jckp).
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Motion-generation metrics on one split.
    Eval {
        #[command(flatten)]
        tok: TokenizerArg,
        #[arg(long, default_value = "lab_eval")]
        split: String,
        /// Pretraining or post-training checkpoint (default: OUT/pretrain/checkpoint.jckp).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Pretrain and evaluate once per wild fraction.
    Sweep {
        #[command(flatten)]
        tok: TokenizerArg,
    },
    /// Joint 2-D projection of predictive embeddings and latent actions.
    Project {
        #[command(flatten)]
        tok: TokenizerArg,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the invariant suite.
    Selftest,
}

impl Verb {
    fn name(&self) -> &'static str {
        match self {
            Verb::GenData => "gen-data",
            Verb::TrainTokenizer => "train-tokenizer",
            Verb::Pretrain { .. } => "pretrain",
            Verb::Posttrain { .. } => "posttrain",
            Verb::Eval { .. } => "eval",
            Verb::Sweep { .. } => "sweep",
            Verb::Project { .. } => "project",
            Verb::Selftest => "selftest",
        }
    }

    fn seed_key(&self) -> Option<&'static str> {
        Some(match self {
            Verb::GenData => "world.seed",
            Verb::TrainTokenizer => "tokenizer.seed",
            Verb::Pretrain { .. } | Verb::Sweep { .. } => "pretrain.seed",
            Verb::Posttrain { .. } => "posttrain.seed",
            Verb::Eval { .. } | Verb::Project { .. } => "eval.seed",
            Verb::Selftest => return None,
        })
    }
}

enum Failure {
    Core(Error),
    Selftest(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

struct Ctx {
    config: Config,
    out: PathBuf,
    dir: PathBuf,
}

impl Ctx {
    fn write(&self, rel: &str, bytes: impl AsRef<[u8]>) -> Outcome {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    fn tokenizer(&self, arg: &TokenizerArg) -> Outcome<Tokenizer> {
        let path = arg.tokenizer.clone().unwrap_or_else(|| self.out.join("train-tokenizer/tokenizer.jtok"));
        Ok(Tokenizer::load_file(&path).map_err(|e| context(e, &path))?)
    }

    fn default_checkpoint(&self, arg: &Option<PathBuf>) -> PathBuf {
        arg.clone().unwrap_or_else(|| self.out.join("pretrain/checkpoint.jckp"))
    }
}

fn context(e: Error, path: &Path) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    }
}

fn load_checkpoint(path: &Path, expected: &str) -> Outcome<Checkpoint> {
    Ok(Checkpoint::load(path, Some(expected)).map_err(|e| context(e, path))?)
}

/// A checkpoint of either phase, checked against the matching config hash.
fn load_any_checkpoint(config: &Config, path: &Path) -> Outcome<Checkpoint> {
    let ckpt = Checkpoint::load(path, None).map_err(|e| context(e, path))?;
    let expected = if ckpt.phase == "posttrain" { config.posttrain_hash() } else { config.pretrain_hash() };
    if ckpt.config_hash != expected {
        return Err(Error::Checkpoint(format!("{} was written under a different config", path.display())).into());
    }
    Ok(ckpt)
}

fn timing_csv(rows: &[(u64, f64)]) -> String {
    let mut s = String::from("step,wall_ms\n");
    for (step, ms) in rows {
        s.push_str(&format!("{step},{ms:.3}\n"));
    }
    s
}

fn gen_data(ctx: &Ctx, splits: &Splits) -> Outcome {
    for name in Splits::NAMES {
        let mut buf = Vec::new();
        write_episodes(&mut buf, splits.named(name).expect("known split"))?;
        ctx.write(&format!("{name}.jepi"), buf)?;
    }
    let manifest = serde_json::json!({
        "config_hash": ctx.config.hash(),
        "splits": splits.ranges.iter().map(|r| {
            let eps = splits.named(&r.name).expect("known split");
            serde_json::json!({
                "name": r.name,
                "file": format!("{}.jepi", r.name),
                "first_seed": r.start,
                "count": r.count,
                "labeled": eps.iter().filter(|e| e.labeled).count(),
            })
        }).collect::<Vec<_>>(),
    });
    ctx.write("manifest.json", serde_json::to_string_pretty(&manifest).map_err(Error::from)?)?;
    info!("wrote {} splits", Splits::NAMES.len());
    Ok(())
}

fn train_tok(ctx: &Ctx, splits: &Splits) -> Outcome {
    let corpus = tokenizer_corpus(splits, &ctx.config.world)?;
    info!("fitting tokenizer on {} chunks", corpus.len());
    let (tok, report) = train_tokenizer(&corpus, &ctx.config.tokenizer)?;
    ctx.write("tokenizer.jtok", tok.to_bytes()?)?;
    let mut csv = String::from("epoch,train_loss,val_mse\n");
    for e in &report.epochs {
        csv.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_mse));
    }
    ctx.write("epochs.csv", csv)?;
    ctx.write("report.json", serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(())
}

fn pretrain(ctx: &Ctx, splits: &Splits, tok: &Tokenizer, resume: &Option<PathBuf>) -> Outcome {
    let cfg = &ctx.config;
    let mut trainer = match resume {
        Some(p) => Pretrainer::resume(cfg, tok, splits, &load_checkpoint(p, &cfg.pretrain_hash())?)?,
        None => Pretrainer::new(cfg, tok, splits)?,
    };
    let every = cfg.pretrain.checkpoint_every;
    let mut timing = Vec::new();
    while trainer.state.step < cfg.pretrain.total_steps {
        let t0 = Instant::now();
        let m = trainer.step()?.clone();
        timing.push((m.step, t0.elapsed().as_secs_f64() * 1e3));
        if m.step % 100 == 0 {
            info!("step {} loss {:.4} align {:.4} z_std {:.4}", m.step, m.total_loss, m.align, m.z_std);
        }
        if every > 0 && m.step % every == 0 {
            ctx.write(&format!("step_{:06}.jckp", m.step), trainer.checkpoint()?.to_bytes()?)?;
        }
    }
    ctx.write("checkpoint.jckp", trainer.checkpoint()?.to_bytes()?)?;
    ctx.write("metrics.csv", pretrain_metrics_csv(&cfg.pretrain_hash(), &trainer.history))?;
    ctx.write("timing.csv", timing_csv(&timing))?;
    Ok(())
}

fn posttrain(ctx: &Ctx, splits: &Splits, tok: &Tokenizer, pretrained: &Option<PathBuf>, resume: &Option<PathBuf>) -> Outcome {
    let cfg = &ctx.config;
    let layout = Layout::new(&cfg.world, tok);
    let mut trainer = match resume {
        Some(p) => Posttrainer::resume(cfg, tok, splits, &load_checkpoint(p, &cfg.posttrain_hash())?)?,
        None => {
            let base = match cfg.posttrain.init {
                BackboneInit::Pretrained => {
                    let ckpt = load_checkpoint(&ctx.default_checkpoint(pretrained), &cfg.pretrain_hash())?;
                    Some(model_from_checkpoint(cfg, &layout, &ckpt)?)
                }
                BackboneInit::Random => None,
            };
            Posttrainer::new(cfg, tok, splits, base.as_ref())?
        }
    };
    let every = cfg.posttrain.checkpoint_every;
    let mut timing = Vec::new();
    while trainer.state.step < cfg.posttrain.total_steps {
        let t0 = Instant::now();
        let m = trainer.step()?.clone();
        timing.push((m.step, t0.elapsed().as_secs_f64() * 1e3));
        if m.step % 100 == 0 {
            info!("step {} loss {:.4}", m.step, m.total_loss);
        }
        if every > 0 && m.step % every == 0 {
            ctx.write(&format!("step_{:06}.jckp", m.step), trainer.checkpoint()?.to_bytes()?)?;
        }
    }
    let ckpt = trainer.checkpoint()?;
    ctx.write("checkpoint.jckp", ckpt.to_bytes()?)?;
    ctx.write("metrics.csv", posttrain_metrics_csv(&cfg.posttrain_hash(), &trainer.history))?;
    ctx.write("timing.csv", timing_csv(&timing))?;
    let eval = layout.prepare_all(&splits.robot_eval, tok)?;
    let mse = action_mse(&trainer.state.model, &trainer.state.flow, &eval, cfg.eval.seed, 1)?;
    info!("robot_eval action mse {mse:.5}");
    ctx.write(
        "action_eval.csv",
        format!("split,metric,value,config_hash,checkpoint_id\nrobot_eval,action_mse,{mse},{},{}\n", cfg.posttrain_hash(), ckpt.id()?),
    )?;
    Ok(())
}

fn model_for(cfg: &Config, layout: &Layout, path: &Path) -> Outcome<(Model, Checkpoint)> {
    let ckpt = load_any_checkpoint(cfg, path)?;
    Ok((model_from_checkpoint(cfg, layout, &ckpt)?, ckpt))
}

fn eval(ctx: &Ctx, splits: &Splits, tok: &Tokenizer, split: &str, checkpoint: &Option<PathBuf>) -> Outcome {
    let cfg = &ctx.config;
    let episodes = splits
        .named(split)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown split `{split}`; expected one of {:?}", Splits::NAMES)))?;
    let layout = Layout::new(&cfg.world, tok);
    let (model, ckpt) = model_for(cfg, &layout, &ctx.default_checkpoint(checkpoint))?;
    let prepared = layout.prepare_all(episodes, tok)?;
    let mut report = evaluate_model(&model, &layout, &cfg.decode, &prepared, tok, &cfg.eval, split)?;
    report.config_hash = ckpt.config_hash.clone();
    report.checkpoint_id = ckpt.id()?;
    info!("{split}: mpjpe {:.5} over {} episodes ({} skipped)", report.mpjpe.mean, report.episodes, report.skipped);
    ctx.write(&format!("{split}.csv"), report.to_csv())?;
    ctx.write(&format!("{split}.json"), report.to_json())?;
    Ok(())
}

fn sweep(ctx: &Ctx, splits: &Splits, tok: &Tokenizer) -> Outcome {
    let mut summary = String::from("fraction,split,mpjpe,pa_mpjpe,mwte,mde,config_hash,checkpoint_id\n");
    let mut written = Ok(());
    run_sweep(&ctx.config, tok, splits, |p| {
        let r = &p.report;
        info!("fraction {}: wild mpjpe {:.5}", p.fraction, r.mpjpe.mean);
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.fraction, r.split, r.mpjpe.mean, r.pa_mpjpe.mean, r.mwte.mean, r.mde.mean, r.config_hash, r.checkpoint_id
        ));
        let dir = format!("fraction_{}", p.fraction);
        if written.is_ok() {
            written = ctx
                .write(&format!("{dir}/report.csv"), r.to_csv())
                .and_then(|_| ctx.write(&format!("{dir}/report.json"), r.to_json()))
                .and_then(|_| ctx.write(&format!("{dir}/metrics.csv"), pretrain_metrics_csv(&r.config_hash, &p.history)));
        }
    })?;
    written?;
    ctx.write("summary.csv", summary)?;
    Ok(())
}

fn project(ctx: &Ctx, splits: &Splits, tok: &Tokenizer, checkpoint: &Option<PathBuf>) -> Outcome {
    let cfg = &ctx.config;
    let layout = Layout::new(&cfg.world, tok);
    let (model, ckpt) = model_for(cfg, &layout, &ctx.default_checkpoint(checkpoint))?;
    let n = cfg.eval.projection_samples;
    let (mut samples, l1_lab) = collect_embeddings(&model, &layout.prepare_all(&splits.lab_eval[..n.min(splits.lab_eval.len())], tok)?, "lab", n)?;
    let (wild, l1_wild) = collect_embeddings(&model, &layout.prepare_all(&splits.wild_eval[..n.min(splits.wild_eval.len())], tok)?, "wild", n)?;
    samples.extend(wild);
    let proj = project_embeddings(&samples)?;
    if proj.rank_deficient {
        log::warn!("pooled covariance is rank deficient; fewer than two components kept");
    }
    ctx.write("projection.csv", proj.to_csv())?;
    let summary = serde_json::json!({
        "config_hash": ckpt.config_hash,
        "checkpoint_id": ckpt.id()?,
        "explained": proj.explained,
        "rank_deficient": proj.rank_deficient,
        "mean_l1": { "lab": l1_lab, "wild": l1_wild },
    });
    ctx.write("summary.json", serde_json::to_string_pretty(&summary).map_err(Error::from)?)?;
    Ok(())
}

fn run_selftest(ctx: &Ctx, quiet: bool) -> Outcome {
    let checks = selftest::run_all();
    let mut csv = String::from("check,passed,detail\n");
    for c in &checks {
        if !quiet {
            println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        csv.push_str(&format!("{},{},\"{}\"\n", c.name, c.passed, c.detail.replace('"', "'")));
    }
    ctx.write("results.csv", csv)?;
    match checks.iter().filter(|c| !c.passed).count() {
        0 => Ok(()),
        n => Err(Failure::Selftest(n)),
    }
}

fn run(cli: &Cli) -> Outcome {
    let mut overrides = cli.set.clone();
    if let (Some(seed), Some(key)) = (cli.seed, cli.verb.seed_key()) {
        overrides.push(format!("{key}={seed}"));
    }
    let config = match &cli.config {
        Some(p) => Config::load(p, &overrides)?,
        None => Config::from_json_with_overrides("{}", &overrides)?,
    };
    let ctx = Ctx { dir: cli.out.join(cli.verb.name()), out: cli.out.clone(), config };
    ctx.write("config.json", ctx.config.to_json_pretty())?;
    ctx.write("config.hash", format!("{}\n", ctx.config.hash()))?;
    if let Verb::Selftest = cli.verb {
        return run_selftest(&ctx, cli.quiet);
    }
    let splits = make_splits(&ctx.config.world)?;
    match &cli.verb {
        Verb::GenData => gen_data(&ctx, &splits),
        Verb::TrainTokenizer => train_tok(&ctx, &splits),
        Verb::Pretrain { tok, resume } => pretrain(&ctx, &splits, &ctx.tokenizer(tok)?, resume),
        Verb::Posttrain { tok, pretrained, resume } => posttrain(&ctx, &splits, &ctx.tokenizer(tok)?, pretrained, resume),
        Verb::Eval { tok, split, checkpoint } => eval(&ctx, &splits, &ctx.tokenizer(tok)?, split, checkpoint),
        Verb::Sweep { tok } => sweep(&ctx, &splits, &ctx.tokenizer(tok)?),
        Verb::Project { tok, checkpoint } => project(&ctx, &splits, &ctx.tokenizer(tok)?, checkpoint),
        Verb::Selftest => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info })
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg) = match f {
                Failure::Core(e) => (e.kind(), e.to_string()),
                Failure::Selftest(n) => ("selftest", format!("{n} checks failed")),
            };
            eprintln!("error: kind={kind} msg={}", msg.replace(['\n', '\r'], " "));
            ExitCode::FAILURE
        }
    }
}
