//! Pseudo-pair generation and the fine-tuning loop with a periodically
//! synchronised generator copy of the denoiser.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::patches::{crop_images, random_origins};
use crate::data::{augment, AugmentSpec, PatchBatch, PatchOrigin};
use crate::error::{Error, Result};
use crate::networks::{save_weights, DenoiserNet, Network};
use crate::nn::{AdamConfig, AdamState, LossKind};
use crate::noise::{
    blend_model_hist, ensemble_noise, gaussian_noise, BlendWeights, HistSampler, NoiseEnsemble,
    NoiseMapSet,
};
use crate::parallel;
use crate::rng::derive;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub steps: usize,
    /// Steps between generator syncs (`C`).
    pub update_period: usize,
    pub loss: LossKind,
    /// Patches per step (`K`).
    pub batch_size: usize,
    pub patch: usize,
    pub lr: f32,
    pub augment: AugmentSpec,
    /// Stop once this many steps pass without a new lowest loss.
    pub early_stop_patience: Option<usize>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            update_period: 10,
            loss: LossKind::L2,
            batch_size: 16,
            patch: 64,
            lr: 1e-4,
            augment: AugmentSpec::default(),
            early_stop_patience: Some(50),
        }
    }
}

/// Generator `theta`, trainee `theta_star`, the step counter and the
/// trainee's optimiser state.
#[derive(Clone, Debug)]
pub struct DenoiserState {
    pub theta: DenoiserNet,
    pub theta_star: DenoiserNet,
    pub count: usize,
    pub update_period: usize,
    adam: AdamState,
}

impl DenoiserState {
    pub fn new(theta: DenoiserNet, update_period: usize, lr: f32) -> Result<Self> {
        if update_period == 0 {
            return Err(Error::Config("update period must be at least 1".into()));
        }
        Ok(Self {
            theta_star: theta.clone(),
            theta,
            count: 0,
            update_period,
            adam: AdamState::new(AdamConfig {
                lr,
                ..AdamConfig::default()
            }),
        })
    }

    pub fn alpha(&self) -> f32 {
        self.adam.lr()
    }

    pub fn sync(&mut self) {
        self.theta = self.theta_star.clone();
    }
}

/// A pseudo low-dose / pseudo normal-dose pair. `noise_used` is the noise as
/// realised in `x_tilde`, so `x_tilde - y_tilde == noise_used` exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoPair {
    pub x_tilde: Tensor,
    pub y_tilde: Tensor,
    pub noise_used: Tensor,
}

pub fn pseudo_pair(y_tilde: Tensor, z: &Tensor) -> Result<PseudoPair> {
    let x_tilde = y_tilde.add(z)?;
    let noise_used = x_tilde.sub(&y_tilde)?;
    Ok(PseudoPair {
        x_tilde,
        y_tilde,
        noise_used,
    })
}

pub fn generate_pseudo_pair(
    state: &DenoiserState,
    ens: &NoiseEnsemble,
    x: &Tensor,
    seed: u64,
) -> Result<PseudoPair> {
    let y_tilde = state.theta.forward(x)?;
    let z = ensemble_noise(&ens.predict_noise_set(x)?, seed)?;
    pseudo_pair(y_tilde, &z)
}

/// Where pseudo noise comes from during fine-tuning.
#[derive(Clone, Debug)]
pub enum NoiseSource {
    Ensemble(NoiseEnsemble),
    Hist(HistSampler),
    Gaussian {
        std: f32,
    },
    ModelHist {
        model: NoiseEnsemble,
        sampler: HistSampler,
        weights: BlendWeights,
    },
}

/// A noise source with its model predictions precomputed on the full
/// fine-tuning slices.
struct PreparedNoise<'a> {
    source: &'a NoiseSource,
    /// `maps[member][slice]`.
    maps: Vec<Vec<Tensor>>,
}

impl<'a> PreparedNoise<'a> {
    fn new(source: &'a NoiseSource, slices: &[Tensor]) -> Result<Self> {
        let members: &[_] = match source {
            NoiseSource::Ensemble(ens) => ens.models(),
            NoiseSource::ModelHist { model, .. } => {
                if model.len() != 1 {
                    return Err(Error::Config(format!(
                        "Model+Hist needs exactly one noise model, got {}",
                        model.len()
                    )));
                }
                model.models()
            }
            _ => &[],
        };
        let maps = members
            .iter()
            .map(|m| {
                slices
                    .iter()
                    .map(|s| m.forward(s))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { source, maps })
    }

    fn crop(&self, member: usize, origins: &[PatchOrigin], patch: usize) -> Result<Tensor> {
        let refs: Vec<&Tensor> = self.maps[member].iter().collect();
        crop_images(&refs, origins, patch)
    }

    fn sample(&self, origins: &[PatchOrigin], patch: usize, seed: u64) -> Result<Tensor> {
        let shape = [origins.len(), 1, patch, patch];
        match self.source {
            NoiseSource::Ensemble(_) => {
                let maps = (0..self.maps.len())
                    .map(|m| self.crop(m, origins, patch))
                    .collect::<Result<Vec<_>>>()?;
                ensemble_noise(&NoiseMapSet { maps }, seed)
            }
            NoiseSource::Hist(sampler) => Ok(sampler.sample(shape, seed)),
            NoiseSource::Gaussian { std } => Ok(gaussian_noise(shape, *std, seed)),
            NoiseSource::ModelHist {
                sampler, weights, ..
            } => blend_model_hist(&self.crop(0, origins, patch)?, sampler, *weights, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f32,
    pub sync: bool,
}

/// Append-only NDJSON step log plus a generator checkpoint at every sync.
pub struct Checkpointer {
    dir: PathBuf,
    log: File,
}

pub const FINETUNE_LOG: &str = "finetune_log.ndjson";

impl Checkpointer {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(FINETUNE_LOG);
        let log = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
        })
    }

    fn record(&mut self, rec: &StepRecord, theta: &DenoiserNet) -> Result<()> {
        let line = serde_json::to_string(rec)?;
        writeln!(self.log, "{line}").map_err(|e| Error::io(self.dir.join(FINETUNE_LOG), e))?;
        if rec.sync {
            save_weights(
                theta,
                &self.dir.join(format!("theta_step{:05}.pctw", rec.step)),
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub state: DenoiserState,
    /// Values of `count` at which a sync fired.
    pub syncs: Vec<usize>,
    pub log: Vec<StepRecord>,
    pub stopped_early: bool,
}

impl FinetuneOutcome {
    /// The generator parameters; with syncing disabled this is still the
    /// pre-trained network.
    pub fn theta(&self) -> &DenoiserNet {
        &self.state.theta
    }

    pub fn theta_star(&self) -> &DenoiserNet {
        &self.state.theta_star
    }
}

pub fn denoise_all(net: &DenoiserNet, slices: &[Tensor]) -> Result<Vec<Tensor>> {
    parallel::map_indexed(slices.len(), |i| net.forward(&slices[i]))
        .into_iter()
        .collect()
}

/// Step-wise driver of the fine-tuning loop.
pub struct Finetuner<'a> {
    state: DenoiserState,
    noise: PreparedNoise<'a>,
    dims: Vec<(usize, usize)>,
    y_tilde: Vec<Tensor>,
    slices: &'a [Tensor],
    cfg: FinetuneConfig,
    seed: u64,
    sync_enabled: bool,
    steps_taken: usize,
    best: f64,
    since_best: usize,
    syncs: Vec<usize>,
    log: Vec<StepRecord>,
    checkpoint: Option<Checkpointer>,
}

impl<'a> Finetuner<'a> {
    pub fn new(
        state: DenoiserState,
        source: &'a NoiseSource,
        slices: &'a [Tensor],
        cfg: &FinetuneConfig,
        seed: u64,
        sync_enabled: bool,
    ) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::Data("fine-tuning needs at least one slice".into()));
        }
        if cfg.batch_size == 0 {
            return Err(Error::Config(
                "fine-tuning batch size must be positive".into(),
            ));
        }
        for s in slices {
            if s.n() != 1 || s.c() != 1 {
                return Err(Error::Shape(format!(
                    "fine-tuning slices must be 1x1xHxW, got {:?}",
                    s.shape()
                )));
            }
        }
        let dims: Vec<(usize, usize)> = slices.iter().map(|s| (s.h(), s.w())).collect();
        random_origins(&dims, 0, cfg.patch, 0)?;
        let noise = PreparedNoise::new(source, slices)?;
        let y_tilde = denoise_all(&state.theta, slices)?;
        Ok(Self {
            state,
            noise,
            dims,
            y_tilde,
            slices,
            cfg: cfg.clone(),
            seed,
            sync_enabled,
            steps_taken: 0,
            best: f64::INFINITY,
            since_best: 0,
            syncs: Vec::new(),
            log: Vec::new(),
            checkpoint: None,
        })
    }

    pub fn with_checkpoints(mut self, checkpoint: Checkpointer) -> Self {
        self.checkpoint = Some(checkpoint);
        self
    }

    pub fn state(&self) -> &DenoiserState {
        &self.state
    }

    pub fn slices(&self) -> &[Tensor] {
        self.slices
    }

    /// Pseudo pair for one step before augmentation.
    pub fn pseudo_batch(&self, step_seed: u64) -> Result<PseudoPair> {
        let origins = random_origins(
            &self.dims,
            self.cfg.batch_size,
            self.cfg.patch,
            derive(step_seed, "crop", 0),
        )?;
        let y_refs: Vec<&Tensor> = self.y_tilde.iter().collect();
        let y = crop_images(&y_refs, &origins, self.cfg.patch)?;
        let z = self
            .noise
            .sample(&origins, self.cfg.patch, derive(step_seed, "noise", 0))?;
        pseudo_pair(y, &z)
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let step_seed = derive(self.seed, "finetune", self.steps_taken as u64);
        let pair = self.pseudo_batch(step_seed)?;
        let batch = augment(
            &PatchBatch {
                x: pair.x_tilde,
                y: pair.y_tilde,
                origins: Vec::new(),
            },
            &self.cfg.augment,
            derive(step_seed, "augment", 0),
        )?;
        let (pred, tape) = self.state.theta_star.forward_train(&batch.x)?;
        let (loss, grad) = self.cfg.loss.eval(&pred, &batch.y)?;
        let step_no = self.state.count + 1;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "fine-tuning step {step_no}: loss is {loss}"
            )));
        }
        let grads = self.state.theta_star.backward(&tape, &grad, false)?;
        self.state
            .theta_star
            .apply_adam(&grads, &mut self.state.adam)
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("fine-tuning step {step_no}: {m}")),
                other => other,
            })?;
        self.state.count = step_no;
        self.steps_taken += 1;
        let sync = self.sync_enabled && step_no % self.state.update_period == 0;
        if sync {
            self.state.sync();
            self.y_tilde = denoise_all(&self.state.theta, self.slices)?;
            self.syncs.push(step_no);
        }
        let rec = StepRecord {
            step: step_no,
            loss,
            lr: self.state.alpha(),
            sync,
        };
        if let Some(cp) = &mut self.checkpoint {
            cp.record(&rec, &self.state.theta)?;
        }
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.log.push(rec.clone());
        Ok(rec)
    }

    fn plateaued(&self) -> bool {
        self.cfg
            .early_stop_patience
            .is_some_and(|p| self.since_best >= p)
    }

    pub fn run(mut self) -> Result<FinetuneOutcome> {
        let mut stopped_early = false;
        for _ in 0..self.cfg.steps {
            self.step()?;
            if self.plateaued() {
                stopped_early = true;
                break;
            }
        }
        Ok(FinetuneOutcome {
            state: self.state,
            syncs: self.syncs,
            log: self.log,
            stopped_early,
        })
    }
}

/// Fine-tune on `slices` (each `1x1xHxW`). Returns the final state; the
/// result denoiser is `outcome.theta()`.
pub fn finetune(
    state: DenoiserState,
    source: &NoiseSource,
    slices: &[Tensor],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    Finetuner::new(state, source, slices, cfg, seed, true)?.run()
}

/// The same loop with the generator frozen at its initial parameters.
pub fn finetune_no_sync(
    state: DenoiserState,
    source: &NoiseSource,
    slices: &[Tensor],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<FinetuneOutcome> {
    Finetuner::new(state, source, slices, cfg, seed, false)?.run()
}
