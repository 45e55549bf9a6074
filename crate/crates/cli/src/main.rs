use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pseudoct::data::{synthesize, write_dataset};
use pseudoct::metrics::{evaluate, write_report};
use pseudoct::networks::{load_denoiser, save_weights, DenoiserNet, Network};
use pseudoct::nn::LossKind;
use pseudoct::noise::{load_ensemble, save_ensemble};
use pseudoct::pipeline::{
    finetune_group, noise_source, prepare, pretrain_stage, run_pipeline, stage, test_groups,
    train_noise_stage, training_diff_maps, Granularity, NoiseStrategy, RunConfig, CONFIG_FILE,
    INPUT_ROW,
};
use pseudoct::selfsup::SchemeKind;
use pseudoct::{Error, Result};

#[derive(Parser)]
#[command(
    name = "pseudoct",
    version,
    about = "Self-supervised CT denoising with pseudo LDCT/NDCT pairs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset.
    Synth(SynthArgs),
    /// Pre-train a denoiser on the training subjects.
    Pretrain(PretrainArgs),
    /// Train one noise model per training subject.
    TrainNoise(TrainNoiseArgs),
    /// Fine-tune a pre-trained denoiser on the test subjects.
    Finetune(FinetuneArgs),
    /// Score denoisers on the test subjects.
    Eval(EvalArgs),
    /// Run every stage and write the comparison report.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Default,
    Desk,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting point when no config file is given.
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DataArg {
    /// Dataset directory (manifest.json plus raw slices).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneFlags {
    #[arg(long)]
    update_period: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    granularity: Option<Granularity>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    slices: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    dose: Option<f32>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArg,
    #[arg(long)]
    scheme: Option<SchemeKind>,
    /// Output weight file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainNoiseArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArg,
    /// Output directory for the ensemble.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArg,
    #[command(flatten)]
    flags: FinetuneFlags,
    /// Pre-trained denoiser weights.
    #[arg(long)]
    denoiser: PathBuf,
    /// Ensemble directory written by `train-noise`.
    #[arg(long)]
    ensemble: PathBuf,
    #[arg(long)]
    noise_strategy: Option<NoiseStrategy>,
    /// Keep the generator frozen (ablation).
    #[arg(long)]
    no_sync: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArg,
    /// `NAME=PATH`: a weight file applied to every test image, or a
    /// `finetune` output directory with one network per group.
    #[arg(long = "method", value_parser = parse_method)]
    methods: Vec<(String, PathBuf)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArg,
    #[command(flatten)]
    flags: FinetuneFlags,
    #[arg(long)]
    scheme: Option<SchemeKind>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

fn parse_method(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => {
            Ok((name.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected NAME=PATH, got '{s}'")),
    }
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match (&common.config, common.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Preset::Default) => RunConfig::default(),
        (None, Preset::Desk) => RunConfig::desk(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
    }
    Ok(cfg)
}

fn apply_data(cfg: &mut RunConfig, data: &DataArg) {
    if let Some(d) = &data.data {
        cfg.dataset = Some(d.clone());
    }
}

fn apply_finetune(cfg: &mut RunConfig, f: &FinetuneFlags) {
    if let Some(c) = f.update_period {
        cfg.finetune.update_period = c;
    }
    if let Some(s) = f.steps {
        cfg.finetune.steps = s;
    }
    if let Some(l) = f.loss {
        cfg.finetune.loss = l;
    }
    if let Some(g) = f.granularity {
        cfg.granularity = g;
    }
}

fn progress(msg: &str) {
    eprintln!("[pseudoct] {msg}");
}

fn ensure_empty(dir: &Path, force: bool) -> Result<()> {
    let non_empty = std::fs::read_dir(dir)
        .map(|mut d| d.next().is_some())
        .unwrap_or(false);
    if non_empty && !force {
        return Err(Error::Data(format!(
            "output directory {} is not empty (use --force to overwrite)",
            dir.display()
        )));
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    let s = &mut cfg.synth;
    if let Some(v) = a.subjects {
        s.subjects = v;
    }
    if let Some(v) = a.slices {
        s.slices_per_subject = v;
    }
    if let Some(v) = a.size {
        s.size = v;
    }
    if let Some(v) = a.dose {
        s.dose_factor = v;
    }
    progress(&format!(
        "synthesising {} subjects x {} slices of {}x{}",
        s.subjects, s.slices_per_subject, s.size, s.size
    ));
    let ds = synthesize(&cfg.synth)?;
    write_dataset(&a.out, &ds, a.force)?;
    progress(&format!("wrote {}", a.out.display()));
    Ok(())
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_data(&mut cfg, &a.data);
    if let Some(s) = a.scheme {
        cfg.scheme = s;
    }
    let prep = stage("data", || prepare(&cfg))?;
    progress(&format!(
        "pre-training {} on {:?}",
        cfg.scheme, prep.split.train_subjects
    ));
    let net = stage("pretrain", || pretrain_stage(&cfg, &prep, cfg.scheme))?;
    save_weights(&net, &a.out)?;
    progress(&format!("wrote {}", a.out.display()));
    Ok(())
}

fn cmd_train_noise(a: TrainNoiseArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_data(&mut cfg, &a.data);
    let prep = stage("data", || prepare(&cfg))?;
    progress(&format!(
        "training noise models for {:?}",
        prep.split.train_subjects
    ));
    let ens = stage("train-noise", || train_noise_stage(&cfg, &prep))?;
    save_ensemble(&a.out, &ens)?;
    progress(&format!("wrote {}", a.out.display()));
    Ok(())
}

const FINAL_WEIGHTS: &str = "final.pctw";

fn cmd_finetune(a: FinetuneArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_data(&mut cfg, &a.data);
    apply_finetune(&mut cfg, &a.flags);
    if let Some(s) = a.noise_strategy {
        cfg.noise_strategy = s;
    }
    let prep = stage("data", || prepare(&cfg))?;
    let base = load_denoiser(&a.denoiser)?;
    let ens = load_ensemble(&a.ensemble)?;
    let diffs = training_diff_maps(&prep)?;
    let source = noise_source(cfg.noise_strategy, &cfg, &ens, &diffs)?;
    let groups = test_groups(&cfg, &prep)?;
    cfg.save(&a.out.join(CONFIG_FILE))?;
    for (gi, g) in groups.iter().enumerate() {
        progress(&format!(
            "fine-tuning on {} ({}/{})",
            g.id,
            gi + 1,
            groups.len()
        ));
        let dir = a.out.join(&g.id);
        let net = stage("finetune", || {
            finetune_group(&cfg, &base, &source, g, gi, !a.no_sync, Some(&dir))
        })?;
        save_weights(&net, &dir.join(FINAL_WEIGHTS))?;
    }
    progress(&format!("wrote {}", a.out.display()));
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_data(&mut cfg, &a.data);
    let prep = stage("data", || prepare(&cfg))?;
    let groups = test_groups(&cfg, &prep)?;
    let mut outputs: BTreeMap<String, Vec<_>> = BTreeMap::new();
    let mut targets = Vec::new();
    let mut ids = Vec::new();
    for g in &groups {
        outputs
            .entry(INPUT_ROW.to_string())
            .or_default()
            .extend(g.ldct.iter().cloned());
        targets.extend(g.ndct.iter().cloned());
        ids.extend(g.image_ids.iter().cloned());
    }
    for (name, path) in &a.methods {
        progress(&format!("denoising with {name}"));
        let shared = if path.is_dir() {
            None
        } else {
            Some(load_denoiser(path)?)
        };
        let mut images = Vec::new();
        for g in &groups {
            let per_group: DenoiserNet;
            let net = match &shared {
                Some(n) => n,
                None => {
                    per_group = load_denoiser(&path.join(&g.id).join(FINAL_WEIGHTS))?;
                    &per_group
                }
            };
            for x in &g.ldct {
                images.push(net.forward(x)?);
            }
        }
        outputs.insert(name.clone(), images);
    }
    let report = stage("eval", || evaluate(&outputs, &targets, &ids, &cfg.ssim))?;
    write_report(&a.out, &report)?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    apply_data(&mut cfg, &a.data);
    apply_finetune(&mut cfg, &a.flags);
    if let Some(s) = a.scheme {
        cfg.scheme = s;
    }
    if let Some(out) = a.out {
        cfg.output = out;
    }
    let out = cfg.output.clone();
    ensure_empty(&out, a.force)?;
    let result = run_pipeline(&cfg, Some(&out), &mut progress)?;
    print!("{}", result.report.to_table());
    progress(&format!("wrote {}", out.display()));
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 2,
        Error::NonFinite(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::TrainNoise(a) => cmd_train_noise(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
