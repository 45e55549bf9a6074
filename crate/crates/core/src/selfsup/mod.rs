//! Denoiser pre-training schemes and self-supervised fine-tuning on pseudo
//! image pairs.

pub mod finetune;
pub mod n2v;
pub mod pretrain;

pub use finetune::{
    denoise_all, finetune, finetune_no_sync, generate_pseudo_pair, pseudo_pair, Checkpointer,
    DenoiserState, FinetuneConfig, FinetuneOutcome, Finetuner, NoiseSource, PseudoPair, StepRecord,
    FINETUNE_LOG,
};
pub use n2v::{mask_batch, n2v_mask, N2vConfig, N2vMask};
pub use pretrain::{pretrain, scheme_pairs, PretrainScheme, SchemeKind};
