use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dwsformer::checkpoint::Checkpoint;
use dwsformer::data::{self, load_sequence, SplitPart, SplitSpec, SynthSpec, SPLIT_FILE};
use dwsformer::eval::{self, num_eval_windows, predict_trajectory, trajectory_file_name};
use dwsformer::pipeline;
use dwsformer::train::Trainer;
use dwsformer::{DwsformerModel, Error};

use crate::args::{Ablation, Cli, Command, Part};
use crate::run::{RunConfig, RunManifest};
use crate::CliError;

const SYNTH_RECIPE_FILE: &str = "synth.toml";

/// Resolved invocation: command, configuration, seed and output location.
struct Ctx {
    command: Command,
    config: RunConfig,
    seed: u64,
    out_dir: Option<PathBuf>,
}

impl Ctx {
    fn out_dir(&self, default: &str) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    fn manifest(&self, out_dir: &Path) -> RunManifest {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            out_dir: out_dir.to_path_buf(),
            inputs: self.command.inputs(),
            config: self.config.clone(),
            command: self.command.clone(),
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    let ctx = match &cli.from_manifest {
        Some(path) => {
            if cli.command.is_some() || cli.config.is_some() {
                return Err(CliError::Usage(
                    "--from-manifest replays a recorded run; do not pass a command or --config".into(),
                ));
            }
            let m = RunManifest::load(path)?;
            Ctx {
                command: m.command,
                config: m.config,
                seed: cli.seed.unwrap_or(m.seed),
                out_dir: cli.out_dir.or(Some(m.out_dir)),
            }
        }
        None => {
            let command = cli
                .command
                .ok_or_else(|| CliError::Usage("no command given; see --help".into()))?;
            let mut config = match &cli.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            let seed = cli.seed.unwrap_or(config.train.seed);
            config.train.seed = seed;
            if let Command::Train {
                ablation: Some(Ablation::NoMsgcu),
                ..
            }
            | Command::Inspect {
                ablation: Some(Ablation::NoMsgcu),
                ..
            } = &command
            {
                config.model.enable_msgcu = false;
            }
            Ctx {
                command,
                config,
                seed,
                out_dir: cli.out_dir,
            }
        }
    };
    ctx.config.model.validate()?;
    ctx.config.train.validate()?;
    log::debug!("{} with seed {}", ctx.command.name(), ctx.seed);
    match ctx.command.clone() {
        Command::Synth { profile, count } => synth(&ctx, profile.as_deref(), count),
        Command::Train {
            data,
            dry_run,
            resume,
            ..
        } => train(&ctx, data.as_deref(), dry_run, resume.as_deref()),
        Command::Eval { checkpoint, data, split } => evaluate(&ctx, &checkpoint, &data, split),
        Command::Predict { checkpoint, sequence } => predict(&ctx, &checkpoint, &sequence),
        Command::Inspect { checkpoint, len, .. } => inspect(&ctx, checkpoint.as_deref(), len),
    }
}

fn synth(ctx: &Ctx, profile: Option<&Path>, count: usize) -> Result<(), CliError> {
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let spec = match profile {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io {
                path: p.to_path_buf(),
                source,
            })?;
            SynthSpec::from_toml(&text)?
        }
        None => SynthSpec::RandomWalk(Default::default()),
    };
    spec.validate()?;
    let out = ctx.out_dir("data");
    ctx.manifest(&out).write(&out)?;
    let seqs = spec.generate(count, ctx.seed)?;
    let ids: Vec<String> = seqs.iter().map(|s| s.id.clone()).collect();
    let split = SplitSpec::new(&ids, ctx.seed);
    data::write_corpus(&out, &seqs, &split)?;
    let recipe = out.join(SYNTH_RECIPE_FILE);
    std::fs::write(&recipe, spec.to_toml()).map_err(|source| Error::Io { path: recipe, source })?;
    println!(
        "wrote {count} sequences to {} (train {}, val {}, test {})",
        out.display(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(())
}

fn unique_run_dir(base: &Path, seed: u64) -> PathBuf {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let stem = format!("run-{secs}-seed{seed}");
    let mut dir = base.join(&stem);
    let mut k = 1;
    while dir.exists() {
        dir = base.join(format!("{stem}-{k}"));
        k += 1;
    }
    dir
}

fn train(ctx: &Ctx, data_dir: Option<&Path>, dry_run: bool, resume: Option<&Path>) -> Result<(), CliError> {
    let cfg = &ctx.config;
    if dry_run {
        let model = DwsformerModel::<f32>::new(cfg.model.clone(), ctx.seed)?;
        println!("parameters: {}", model.count_parameters());
        println!("flops (multiply-accumulates at L={}): {}", cfg.model.window_len, model.count_flops(cfg.model.window_len)?);
        return Ok(());
    }
    let data_dir = data_dir.ok_or_else(|| CliError::Usage("train needs --data (or --dry-run)".into()))?;
    let split_path = data_dir.join(SPLIT_FILE);
    if !split_path.is_file() {
        return Err(CliError::Usage(format!("split file {} not found", split_path.display())));
    }
    let run_dir = unique_run_dir(&ctx.out_dir("runs"), ctx.seed);
    ctx.manifest(&ctx.out_dir("runs")).write(&run_dir)?;
    println!("run directory: {}", run_dir.display());

    let trainer = match resume {
        Some(path) => Trainer::resume(Checkpoint::load(path)?)?,
        None => {
            let model = DwsformerModel::<f32>::new(cfg.model.clone(), ctx.seed)?;
            let mut tc = cfg.train.clone();
            tc.seed = ctx.seed;
            Trainer::new(model, tc, None)?
        }
    };
    let len = trainer.model.config().window_len;
    let (_, prepared) = pipeline::prepare_dir(data_dir, len, trainer.config.stride_for(len))?;
    let mut trainer = trainer.with_out_dir(&run_dir)?;
    if trainer.normalizer.is_none() {
        trainer.normalizer = Some(prepared.normalizer.clone());
    }
    log::info!(
        "{} training and {} validation windows, {} parameters",
        prepared.data.train.len(),
        prepared.data.val.len(),
        trainer.model.count_parameters()
    );
    let out = trainer.run(&prepared.data)?;
    let last = out.log.last().map_or(f64::NAN, |l| l.val_loss);
    println!("final val loss: {last}");
    println!("best val loss: {} (epoch {})", out.best_val_loss, out.best_epoch);
    if let Some(p) = &out.best_checkpoint {
        println!("best checkpoint: {}", p.display());
    }
    Ok(())
}

fn part(p: Part) -> SplitPart {
    match p {
        Part::Train => SplitPart::Train,
        Part::Val => SplitPart::Val,
        Part::Test => SplitPart::Test,
    }
}

fn load_for_inference(path: &Path) -> Result<(DwsformerModel<f32>, data::Normalizer), CliError> {
    let ckpt = Checkpoint::load(path)?;
    let norm = ckpt
        .normalizer
        .ok_or_else(|| CliError::Usage(format!("checkpoint {} has no input normalisation", path.display())))?;
    Ok((ckpt.model, norm))
}

fn evaluate(ctx: &Ctx, checkpoint: &Path, data_dir: &Path, which: Part) -> Result<(), CliError> {
    let split = data::load_split(data_dir).map_err(|e| CliError::Usage(e.to_string()))?;
    let ids = split.part(part(which));
    if ids.is_empty() {
        return Err(CliError::Usage(format!("split part {which:?} of {} is empty", data_dir.display())));
    }
    let out = ctx.out_dir("eval");
    ctx.manifest(&out).write(&out)?;
    let (model, norm) = load_for_inference(checkpoint)?;
    let seqs = data::load_sequences(data_dir, ids)?;
    let results = pipeline::evaluate_all(&model, &norm, &seqs, &ctx.config.eval.options())?;
    let summary = eval::write_report(&out, &checkpoint.display().to_string(), &results)?;
    println!("sequences: {}", summary.sequences);
    println!("mean ATE (m): {}", summary.mean_ate_m);
    println!("mean RTE (m): {}", summary.mean_rte_m);
    println!("mean PDE: {}", summary.mean_pde);
    println!("mean velocity MSE: {}", summary.mean_velocity_mse);
    println!("report: {}", out.display());
    Ok(())
}

fn predict(ctx: &Ctx, checkpoint: &Path, sequence: &Path) -> Result<(), CliError> {
    let out = ctx.out_dir("predict");
    ctx.manifest(&out).write(&out)?;
    let (model, norm) = load_for_inference(checkpoint)?;
    let seq = load_sequence(sequence)?;
    let len = model.config().window_len;
    if num_eval_windows(seq.len(), len) == 0 {
        return Err(CliError::Usage(format!(
            "{} has {} samples; the model needs at least {} (window length {len} plus one)",
            sequence.display(),
            seq.len(),
            len + 1
        )));
    }
    let opts = ctx.config.eval.options();
    let path = out.join(trajectory_file_name(&seq.id));
    if seq.gt_position.is_some() && seq.gt_velocity.is_some() {
        let r = eval::evaluate_sequence(&model, &norm, &seq, &opts)?;
        eval::write_trajectory_csv(&path, &r)?;
        println!("ATE (m): {}", r.metrics.ate_m);
        let end = |t: &eval::Trajectory| *t.positions.last().unwrap();
        let (e, g) = (end(&r.estimate), r.ground_truth.at(*r.estimate.times.last().unwrap()).unwrap());
        println!("endpoint error (m): {}", (e[0] - g[0]).hypot(e[1] - g[1]));
    } else {
        let (_, traj) = predict_trajectory(&model, &norm, &seq, [0.0, 0.0], &opts)?;
        let mut s = String::from("t,est_x,est_y\n");
        for (t, p) in traj.times.iter().zip(&traj.positions) {
            let _ = writeln!(s, "{t},{},{}", p[0], p[1]);
        }
        std::fs::write(&path, s).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
    }
    println!("trajectory: {}", path.display());
    Ok(())
}

fn inspect(ctx: &Ctx, checkpoint: Option<&Path>, len: Option<usize>) -> Result<(), CliError> {
    if let Some(out) = &ctx.out_dir {
        ctx.manifest(out).write(out)?;
    }
    let model = match checkpoint {
        Some(p) => Checkpoint::load(p)?.model,
        None => DwsformerModel::<f32>::new(ctx.config.model.clone(), ctx.seed)?,
    };
    let len = len.unwrap_or(model.config().window_len);
    println!("{:<48} {:>16} {:>10}", "parameter", "shape", "count");
    for (name, p) in model.params().iter() {
        println!("{name:<48} {:>16} {:>10}", format!("{:?}", p.value.shape()), p.value.numel());
    }
    println!("total parameters: {}", model.count_parameters());
    println!();
    println!("stage shapes at L={len}:");
    for s in model.stage_shapes(len)? {
        println!("  stage {}: {} channels x {} samples", s.stage, s.channels, s.len);
    }
    println!();
    println!("multiply-accumulates at L={len}:");
    for c in model.flop_breakdown(len)? {
        println!("  {:<44} {:>12}", c.name, c.macs);
    }
    println!("total: {}", model.count_flops(len)?);
    Ok(())
}
