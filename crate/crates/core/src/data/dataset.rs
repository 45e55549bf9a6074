//! Paired datasets on disk: a directory of raw `u16` slices plus a JSON
//! manifest, and the synthetic generator that produces them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::slice::{decode_raw, encode_raw, load_raw_slice, CtSlice, Dose, HuWindow, RawEncoding};
use super::synth::{synth_ldct, synth_phantom, LdctNoiseModel};
use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::derive;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub subjects: usize,
    pub slices_per_subject: usize,
    pub size: usize,
    pub dose_factor: f32,
    pub noise: LdctNoiseModel,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            subjects: 10,
            slices_per_subject: 8,
            size: 128,
            dose_factor: 0.25,
            noise: LdctNoiseModel::default(),
        }
    }
}

/// Storage encoding for synthetic data: 0.1 HU per count keeps quantisation
/// well below the simulated noise level.
pub fn synthetic_encoding() -> RawEncoding {
    RawEncoding {
        slope: 0.1,
        intercept: -1024.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub ldct: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndct: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
    /// Seed of a second, independent low-dose realisation (synthetic only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt_noise_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dose_factor: Option<f32>,
    pub slices: Vec<SliceEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub encoding: RawEncoding,
    pub window: HuWindow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    pub subjects: Vec<SubjectEntry>,
}

/// Low-dose slice with its optional normal-dose reference and optional
/// second low-dose realisation of the same anatomy.
#[derive(Clone, Debug, PartialEq)]
pub struct SlicePair {
    pub ldct: CtSlice,
    pub ndct: Option<CtSlice>,
    pub ldct_alt: Option<CtSlice>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subject {
    pub id: String,
    pub slices: Vec<SlicePair>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub subjects: Vec<Subject>,
}

impl Dataset {
    pub fn subject(&self, id: &str) -> Result<&Subject> {
        self.subjects
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Data(format!("subject '{id}' not in dataset")))
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }
}

pub fn subject_id(i: usize) -> String {
    format!("subject{i:02}")
}

fn quantize(slice: CtSlice, enc: RawEncoding, window: HuWindow) -> Result<CtSlice> {
    let bytes = encode_raw(&slice.pixels, enc, window);
    let pixels = decode_raw(&bytes, slice.width, slice.height, enc, window)?;
    slice.with_pixels(pixels, slice.dose)
}

/// Generate the synthetic dataset in memory. Pixels are quantised through
/// the storage encoding so the result equals what [`load_dataset`] returns
/// after [`write_dataset`].
pub fn synthesize(cfg: &SynthConfig) -> Result<Dataset> {
    let enc = synthetic_encoding();
    let window = HuWindow::default();
    let size = cfg.size;
    let built = parallel::map_indexed(cfg.subjects, |si| -> Result<(SubjectEntry, Subject)> {
        let id = subject_id(si);
        let subject_seed = derive(cfg.seed, "subject", si as u64);
        let mut entries = Vec::with_capacity(cfg.slices_per_subject);
        let mut slices = Vec::with_capacity(cfg.slices_per_subject);
        for j in 0..cfg.slices_per_subject {
            let phantom_seed = derive(subject_seed, "phantom", j as u64);
            let noise_seed = derive(subject_seed, "noise", j as u64);
            let alt_noise_seed = derive(subject_seed, "noise-alt", j as u64);
            let ndct = synth_phantom(phantom_seed, size, &id)?;
            let ldct = synth_ldct(&ndct, cfg.dose_factor, subject_seed, noise_seed, cfg.noise)?;
            entries.push(SliceEntry {
                ldct: format!("{id}/slice{j:02}_ldct.raw"),
                ndct: Some(format!("{id}/slice{j:02}_ndct.raw")),
                phantom_seed: Some(phantom_seed),
                noise_seed: Some(noise_seed),
                alt_noise_seed: Some(alt_noise_seed),
            });
            let ndct = quantize(ndct, enc, window)?;
            slices.push(SlicePair {
                ldct: quantize(ldct, enc, window)?,
                // The second realisation is regenerated from the stored
                // normal-dose slice on load, so derive it from that here too.
                ldct_alt: Some(quantize(
                    synth_ldct(
                        &ndct,
                        cfg.dose_factor,
                        subject_seed,
                        alt_noise_seed,
                        cfg.noise,
                    )?,
                    enc,
                    window,
                )?),
                ndct: Some(ndct),
            });
        }
        Ok((
            SubjectEntry {
                id: id.clone(),
                subject_seed: Some(subject_seed),
                dose_factor: Some(cfg.dose_factor),
                slices: entries,
            },
            Subject { id, slices },
        ))
    });
    let mut manifest = Manifest {
        width: size,
        height: size,
        encoding: enc,
        window,
        synth: Some(cfg.clone()),
        subjects: Vec::new(),
    };
    let mut subjects = Vec::new();
    for b in built {
        let (entry, subject) = b?;
        manifest.subjects.push(entry);
        subjects.push(subject);
    }
    Ok(Dataset { manifest, subjects })
}

/// Write raw files and the manifest. Refuses a non-empty directory unless
/// `force` is set.
pub fn write_dataset(dir: &Path, dataset: &Dataset, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Data(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    let m = &dataset.manifest;
    for (entry, subject) in m.subjects.iter().zip(&dataset.subjects) {
        let sdir = dir.join(&entry.id);
        std::fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
        for (se, pair) in entry.slices.iter().zip(&subject.slices) {
            write_bytes(
                &dir.join(&se.ldct),
                &encode_raw(&pair.ldct.pixels, m.encoding, m.window),
            )?;
            if let (Some(path), Some(nd)) = (&se.ndct, &pair.ndct) {
                write_bytes(
                    &dir.join(path),
                    &encode_raw(&nd.pixels, m.encoding, m.window),
                )?;
            }
        }
    }
    let json = serde_json::to_string_pretty(m)?;
    write_bytes(&dir.join(MANIFEST_FILE), json.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let (w, h, enc, win) = (
        manifest.width,
        manifest.height,
        manifest.encoding,
        manifest.window,
    );
    let noise_model = manifest.synth.as_ref().map(|s| s.noise).unwrap_or_default();
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let mut slices = Vec::with_capacity(entry.slices.len());
        for se in &entry.slices {
            let path = |p: &str| -> PathBuf { dir.join(p) };
            let ldct = load_raw_slice(&path(&se.ldct), w, h, enc, win, &entry.id, Dose::Low)?;
            let ndct = se
                .ndct
                .as_deref()
                .map(|p| load_raw_slice(&path(p), w, h, enc, win, &entry.id, Dose::Normal))
                .transpose()?;
            let ldct_alt = match (
                &ndct,
                se.alt_noise_seed,
                entry.subject_seed,
                entry.dose_factor,
            ) {
                (Some(nd), Some(alt), Some(sseed), Some(dose)) => Some(quantize(
                    synth_ldct(nd, dose, sseed, alt, noise_model)?,
                    enc,
                    win,
                )?),
                _ => None,
            };
            slices.push(SlicePair {
                ldct,
                ndct,
                ldct_alt,
            });
        }
        subjects.push(Subject {
            id: entry.id.clone(),
            slices,
        });
    }
    Ok(Dataset { manifest, subjects })
}
