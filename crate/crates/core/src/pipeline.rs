//! End-to-end runs: data, pre-training, noise models, fine-tuning under every
//! noise strategy, and evaluation against the normal-dose references.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::pgm::write_pgm16;
use crate::data::{load_dataset, make_split, synthesize, Dataset, DatasetSplit, SynthConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, write_report, EvalReport, SsimConfig};
use crate::networks::{save_weights, DenoiserConfig, DenoiserNet, Network, NoiseNetConfig};
use crate::noise::{
    noise_map, save_ensemble, train_noise_model, BlendWeights, HistSampler, NoiseEnsemble,
    GAUSSIAN_STD,
};
use crate::parallel;
use crate::rng::derive;
use crate::selfsup::{
    pretrain, Checkpointer, DenoiserState, FinetuneConfig, Finetuner, N2vConfig, NoiseSource,
    PretrainScheme, SchemeKind,
};
use crate::tensor::Tensor;
use crate::train::TrainConfig;

pub const CONFIG_FILE: &str = "config.json";
pub const INPUT_ROW: &str = "LDCT input";

/// Noise used to build pseudo low-dose inputs.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseStrategy {
    #[default]
    Ensemble,
    Hist,
    Gaussian,
    ModelHist,
}

impl FromStr for NoiseStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ensemble" => Ok(NoiseStrategy::Ensemble),
            "hist" => Ok(NoiseStrategy::Hist),
            "gaussian" => Ok(NoiseStrategy::Gaussian),
            "model-hist" | "model+hist" => Ok(NoiseStrategy::ModelHist),
            _ => Err(Error::Config(format!(
                "unknown noise strategy '{s}' (expected ensemble, hist, gaussian or model-hist)"
            ))),
        }
    }
}

/// One fine-tuned row of the comparison table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    OursNoSync,
    Ours,
    Hist,
    Gaussian,
    ModelHist,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::OursNoSync,
        Strategy::Ours,
        Strategy::Hist,
        Strategy::Gaussian,
        Strategy::ModelHist,
    ];

    pub fn noise(self) -> NoiseStrategy {
        match self {
            Strategy::OursNoSync | Strategy::Ours => NoiseStrategy::Ensemble,
            Strategy::Hist => NoiseStrategy::Hist,
            Strategy::Gaussian => NoiseStrategy::Gaussian,
            Strategy::ModelHist => NoiseStrategy::ModelHist,
        }
    }

    pub fn syncs(self) -> bool {
        self != Strategy::OursNoSync
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Strategy::OursNoSync => "+Ours w/o sync",
            Strategy::Ours => "+Ours",
            Strategy::Hist => "+Hist",
            Strategy::Gaussian => "+Gaussian",
            Strategy::ModelHist => "+Model+Hist",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Strategy::OursNoSync => "ours-no-sync",
            Strategy::Ours => "ours",
            Strategy::Hist => "hist",
            Strategy::Gaussian => "gaussian",
            Strategy::ModelHist => "model-hist",
        }
    }

    pub fn row_name(self, scheme: SchemeKind) -> String {
        format!("{scheme}{}", self.suffix())
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

/// Fine-tune once per test subject on all its slices, or once per slice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    #[default]
    Subject,
    Image,
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subject" => Ok(Granularity::Subject),
            "image" => Ok(Granularity::Image),
            _ => Err(Error::Config(format!(
                "unknown granularity '{s}' (expected subject or image)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Existing dataset directory; when absent the dataset is synthesised
    /// from `synth`.
    pub dataset: Option<PathBuf>,
    pub synth: SynthConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub denoiser: DenoiserConfig,
    pub noise_net: NoiseNetConfig,
    pub scheme: SchemeKind,
    pub n2v: N2vConfig,
    pub pretrain: TrainConfig,
    pub noise_train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub granularity: Granularity,
    /// Noise for the standalone fine-tune stage.
    pub noise_strategy: NoiseStrategy,
    /// Rows produced by the pipeline besides the input and scheme rows.
    pub strategies: Vec<Strategy>,
    pub blend: BlendWeights,
    pub gaussian_std: f32,
    pub ssim: SsimConfig,
    pub output: PathBuf,
    /// Write a PGM of the first slice of every group for each method.
    pub write_images: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: None,
            synth: SynthConfig::default(),
            n_train: 3,
            n_test: 7,
            denoiser: DenoiserConfig::default(),
            noise_net: NoiseNetConfig::default(),
            scheme: SchemeKind::N2c,
            n2v: N2vConfig::default(),
            pretrain: TrainConfig::default(),
            noise_train: TrainConfig::default(),
            finetune: FinetuneConfig::default(),
            granularity: Granularity::Subject,
            noise_strategy: NoiseStrategy::Ensemble,
            strategies: Strategy::ALL.to_vec(),
            blend: BlendWeights::default(),
            gaussian_std: GAUSSIAN_STD,
            ssim: SsimConfig::default(),
            output: PathBuf::from("run"),
            write_images: true,
        }
    }
}

impl RunConfig {
    /// A smaller configuration that runs the whole pipeline in minutes on a
    /// single core: narrower networks, fewer and smaller batches.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.denoiser = DenoiserConfig {
            depth: 3,
            channels: 16,
        };
        cfg.noise_net = NoiseNetConfig {
            levels: 2,
            channels: 16,
        };
        cfg.pretrain.epochs = 12;
        cfg.pretrain.iters_per_epoch = 20;
        cfg.pretrain.batch_size = 8;
        cfg.pretrain.adam.lr = 1e-3;
        cfg.noise_train.epochs = 8;
        cfg.noise_train.iters_per_epoch = 20;
        cfg.noise_train.batch_size = 8;
        cfg.noise_train.adam.lr = 1e-3;
        cfg.finetune.steps = 60;
        cfg.finetune.batch_size = 4;
        cfg.finetune.lr = 3e-5;
        for augment in [
            &mut cfg.pretrain.augment,
            &mut cfg.noise_train.augment,
            &mut cfg.finetune.augment,
        ] {
            augment.rescale_range = (1.0, 1.0);
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.denoiser.validate()?;
        self.noise_net.validate()?;
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config(
                "need at least one training and one test subject".into(),
            ));
        }
        if self.finetune.update_period == 0 {
            return Err(Error::Config("update period must be at least 1".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

pub fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    })
}

pub type Progress<'a> = &'a mut dyn FnMut(&str);

/// The dataset with its train/test split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: Dataset,
    pub split: DatasetSplit,
}

impl Prepared {
    pub fn train_subjects(&self) -> Result<Vec<&crate::data::Subject>> {
        self.split
            .train_subjects
            .iter()
            .map(|id| self.dataset.subject(id))
            .collect()
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let dataset = match &cfg.dataset {
        Some(dir) => load_dataset(dir)?,
        None => synthesize(&cfg.synth)?,
    };
    let split = make_split(
        &dataset.subject_ids(),
        cfg.n_train,
        cfg.n_test,
        derive(cfg.seed, "split", 0),
    )?;
    Ok(Prepared { dataset, split })
}

pub fn pretrain_stage(cfg: &RunConfig, prep: &Prepared, scheme: SchemeKind) -> Result<DenoiserNet> {
    let scheme = PretrainScheme {
        kind: scheme,
        n2v: cfg.n2v,
    };
    let subjects = prep.train_subjects()?;
    let seed = derive(cfg.seed, "pretrain", scheme.kind as u64);
    Ok(pretrain(&scheme, &subjects, cfg.denoiser, &cfg.pretrain, seed)?.0)
}

/// Training-subject noise maps `Z = X - Y`, the source of histogram noise.
pub fn training_diff_maps(prep: &Prepared) -> Result<Vec<Tensor>> {
    let mut maps = Vec::new();
    for s in prep.train_subjects()? {
        for (j, pair) in s.slices.iter().enumerate() {
            let nd = pair.ndct.as_ref().ok_or_else(|| {
                Error::Data(format!(
                    "training subject '{}' slice {j} has no normal-dose image",
                    s.id
                ))
            })?;
            maps.push(noise_map(&pair.ldct, nd)?);
        }
    }
    Ok(maps)
}

pub fn train_noise_stage(cfg: &RunConfig, prep: &Prepared) -> Result<NoiseEnsemble> {
    let subjects = prep.train_subjects()?;
    let trained = parallel::map_indexed(subjects.len(), |i| {
        let s = subjects[i];
        let pairs = s
            .slices
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let nd = p.ndct.clone().ok_or_else(|| {
                    Error::Data(format!(
                        "subject '{}' slice {j} has no normal-dose image",
                        s.id
                    ))
                })?;
                Ok((p.ldct.clone(), nd))
            })
            .collect::<Result<Vec<_>>>()?;
        let seed = derive(cfg.seed, "noise-model", i as u64);
        Ok(train_noise_model(&pairs, cfg.noise_net, &cfg.noise_train, seed)?.0)
    });
    let models = trained.into_iter().collect::<Result<Vec<_>>>()?;
    NoiseEnsemble::new(models, prep.split.train_subjects.clone())
}

pub fn noise_source(
    strategy: NoiseStrategy,
    cfg: &RunConfig,
    ens: &NoiseEnsemble,
    diff_maps: &[Tensor],
) -> Result<NoiseSource> {
    Ok(match strategy {
        NoiseStrategy::Ensemble => NoiseSource::Ensemble(ens.clone()),
        NoiseStrategy::Hist => NoiseSource::Hist(HistSampler::fit(diff_maps)?),
        NoiseStrategy::Gaussian => NoiseSource::Gaussian {
            std: cfg.gaussian_std,
        },
        NoiseStrategy::ModelHist => NoiseSource::ModelHist {
            model: NoiseEnsemble::new(
                vec![ens.models()[0].clone()],
                vec![ens.subject_ids()[0].clone()],
            )?,
            sampler: HistSampler::fit(diff_maps)?,
            weights: cfg.blend,
        },
    })
}

/// Test images grouped by fine-tuning unit.
#[derive(Clone, Debug)]
pub struct TestGroup {
    pub id: String,
    pub image_ids: Vec<String>,
    pub ldct: Vec<Tensor>,
    pub ndct: Vec<Tensor>,
}

pub fn test_groups(cfg: &RunConfig, prep: &Prepared) -> Result<Vec<TestGroup>> {
    let mut groups = Vec::new();
    for id in &prep.split.test_subjects {
        let s = prep.dataset.subject(id)?;
        let mut images = Vec::new();
        for (j, pair) in s.slices.iter().enumerate() {
            let nd = pair.ndct.as_ref().ok_or_else(|| {
                Error::Data(format!(
                    "test subject '{id}' slice {j} has no normal-dose reference"
                ))
            })?;
            images.push((
                format!("{id}/slice{j:02}"),
                pair.ldct.to_tensor(),
                nd.to_tensor(),
            ));
        }
        match cfg.granularity {
            Granularity::Subject => {
                let mut g = TestGroup {
                    id: id.clone(),
                    image_ids: Vec::new(),
                    ldct: Vec::new(),
                    ndct: Vec::new(),
                };
                for (iid, x, y) in images {
                    g.image_ids.push(iid);
                    g.ldct.push(x);
                    g.ndct.push(y);
                }
                groups.push(g);
            }
            Granularity::Image => {
                for (iid, x, y) in images {
                    groups.push(TestGroup {
                        id: iid.replace('/', "_"),
                        image_ids: vec![iid],
                        ldct: vec![x],
                        ndct: vec![y],
                    });
                }
            }
        }
    }
    Ok(groups)
}

/// Fine-tune `base` on one group and return the network used for the final
/// prediction: the generator when syncing, the trainee otherwise.
pub fn finetune_group(
    cfg: &RunConfig,
    base: &DenoiserNet,
    source: &NoiseSource,
    group: &TestGroup,
    group_index: usize,
    sync: bool,
    checkpoint_dir: Option<&Path>,
) -> Result<DenoiserNet> {
    let state = DenoiserState::new(base.clone(), cfg.finetune.update_period, cfg.finetune.lr)?;
    let seed = derive(cfg.seed, "finetune", group_index as u64);
    let mut tuner = Finetuner::new(state, source, &group.ldct, &cfg.finetune, seed, sync)?;
    if let Some(dir) = checkpoint_dir {
        tuner = tuner.with_checkpoints(Checkpointer::create(dir)?);
    }
    let outcome = tuner.run()?;
    Ok(if sync {
        outcome.state.theta
    } else {
        outcome.state.theta_star
    })
}

fn denoise(net: &DenoiserNet, images: &[Tensor]) -> Result<Vec<Tensor>> {
    images.iter().map(|x| net.forward(x)).collect()
}

/// Everything after pre-training and noise-model training: fine-tune every
/// configured strategy on every test group and evaluate all rows.
pub fn finetune_eval_stage(
    cfg: &RunConfig,
    prep: &Prepared,
    scheme: SchemeKind,
    base: &DenoiserNet,
    ens: &NoiseEnsemble,
    out: Option<&Path>,
    progress: Progress<'_>,
) -> Result<(EvalReport, BTreeMap<String, Vec<Tensor>>)> {
    let groups = stage("finetune", || test_groups(cfg, prep))?;
    let diffs = stage("finetune", || training_diff_maps(prep))?;
    let mut outputs: BTreeMap<String, Vec<Tensor>> = BTreeMap::new();
    let mut targets = Vec::new();
    let mut ids = Vec::new();
    for g in &groups {
        outputs
            .entry(INPUT_ROW.to_string())
            .or_default()
            .extend(g.ldct.iter().cloned());
        outputs
            .entry(scheme.to_string())
            .or_default()
            .extend(stage("eval", || denoise(base, &g.ldct))?);
        targets.extend(g.ndct.iter().cloned());
        ids.extend(g.image_ids.iter().cloned());
    }
    for &strategy in &cfg.strategies {
        let source = stage("finetune", || {
            noise_source(strategy.noise(), cfg, ens, &diffs)
        })?;
        let row = strategy.row_name(scheme);
        for (gi, g) in groups.iter().enumerate() {
            progress(&format!(
                "fine-tuning {row} on {} ({}/{})",
                g.id,
                gi + 1,
                groups.len()
            ));
            let cp = out.map(|o| {
                o.join("finetune")
                    .join(scheme.to_string().to_lowercase())
                    .join(strategy.slug())
                    .join(&g.id)
            });
            let net = stage("finetune", || {
                finetune_group(cfg, base, &source, g, gi, strategy.syncs(), cp.as_deref())
            })?;
            outputs
                .entry(row.clone())
                .or_default()
                .extend(stage("eval", || denoise(&net, &g.ldct))?);
        }
    }
    progress("evaluating");
    let report = stage("eval", || evaluate(&outputs, &targets, &ids, &cfg.ssim))?;
    if let Some(out) = out {
        stage("eval", || {
            write_report(&out.join("eval"), &report)?;
            if cfg.write_images {
                write_images(&out.join("images"), &outputs, &groups, &targets)?;
            }
            Ok(())
        })?;
    }
    Ok((report, outputs))
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

fn write_images(
    dir: &Path,
    outputs: &BTreeMap<String, Vec<Tensor>>,
    groups: &[TestGroup],
    targets: &[Tensor],
) -> Result<()> {
    let mut first = Vec::new();
    let mut offset = 0;
    for g in groups {
        first.push((offset, g.image_ids[0].replace('/', "_")));
        offset += g.image_ids.len();
    }
    let mut sets: Vec<(String, &[Tensor])> = outputs
        .iter()
        .map(|(k, v)| (slug(k), v.as_slice()))
        .collect();
    sets.push(("ndct".into(), targets));
    for (name, images) in sets {
        let sub = dir.join(name);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (i, id) in &first {
            let t = &images[*i];
            write_pgm16(&sub.join(format!("{id}.pgm")), t.h(), t.w(), t.data())?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub split: DatasetSplit,
    pub report: EvalReport,
}

/// Run every stage for `cfg.scheme`. With `out`, the resolved config,
/// weights, fine-tuning logs, report and images are written there.
pub fn run_pipeline(
    cfg: &RunConfig,
    out: Option<&Path>,
    progress: Progress<'_>,
) -> Result<PipelineResult> {
    if let Some(out) = out {
        stage("setup", || cfg.save(&out.join(CONFIG_FILE)))?;
    }
    progress("preparing data");
    let prep = stage("data", || prepare(cfg))?;
    progress(&format!("pre-training {}", cfg.scheme));
    let base = stage("pretrain", || pretrain_stage(cfg, &prep, cfg.scheme))?;
    progress("training noise models");
    let ens = stage("train-noise", || train_noise_stage(cfg, &prep))?;
    if let Some(out) = out {
        stage("pretrain", || {
            save_weights(&base, &out.join("denoiser.pctw"))
        })?;
        stage("train-noise", || save_ensemble(&out.join("noise"), &ens))?;
    }
    let (report, _) = finetune_eval_stage(cfg, &prep, cfg.scheme, &base, &ens, out, progress)?;
    Ok(PipelineResult {
        split: prep.split,
        report,
    })
}
