use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::quality::{psnr, ssim, SsimConfig};
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub method: String,
    pub image: String,
    #[serde(with = "inf_sentinel")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    #[serde(with = "inf_sentinel")]
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub images: usize,
    /// Images with identical prediction and target, left out of the PSNR
    /// statistics.
    pub psnr_inf: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub records: Vec<ImageRecord>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    /// Build rows from per-image records: population statistics, rows ordered
    /// by method name.
    pub fn from_records(records: Vec<ImageRecord>) -> Self {
        let mut groups: BTreeMap<&str, Vec<&ImageRecord>> = BTreeMap::new();
        for r in &records {
            groups.entry(&r.method).or_default().push(r);
        }
        let rows = groups
            .into_iter()
            .map(|(method, rs)| {
                let finite: Vec<f64> = rs
                    .iter()
                    .map(|r| r.psnr)
                    .filter(|p| p.is_finite())
                    .collect();
                let (psnr_mean, psnr_std) = if finite.is_empty() {
                    (f64::INFINITY, 0.0)
                } else {
                    mean_std(&finite)
                };
                let ss: Vec<f64> = rs.iter().map(|r| r.ssim).collect();
                let (ssim_mean, ssim_std) = mean_std(&ss);
                ReportRow {
                    method: method.to_string(),
                    psnr_mean,
                    psnr_std,
                    ssim_mean,
                    ssim_std,
                    images: rs.len(),
                    psnr_inf: rs.len() - finite.len(),
                }
            })
            .collect();
        Self { rows, records }
    }

    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,psnr_mean,psnr_std,ssim_mean,ssim_std\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6}",
                r.method,
                fmt_psnr(r.psnr_mean),
                r.psnr_std,
                r.ssim_mean,
                r.ssim_std
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.method.len())
            .max()
            .unwrap_or(6)
            .max(6);
        let mut out = format!(
            "{:<width$}  {:>16}  {:>16}\n",
            "method", "PSNR (std)", "SSIM (std)"
        );
        for r in &self.rows {
            let p = format!("{} ({:.2})", fmt_psnr2(r.psnr_mean), r.psnr_std);
            let s = format!("{:.4} ({:.4})", r.ssim_mean, r.ssim_std);
            let _ = writeln!(out, "{:<width$}  {p:>16}  {s:>16}", r.method);
        }
        for r in self.rows.iter().filter(|r| r.psnr_inf > 0) {
            let _ = writeln!(
                out,
                "note: {} of {} images for '{}' match the target exactly (PSNR inf) and are excluded from the PSNR mean",
                r.psnr_inf, r.images, r.method
            );
        }
        out
    }

    pub fn to_ndjson(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

fn fmt_psnr2(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.2}")
    }
}

/// Score every method's images against `targets`, pairing by position.
pub fn evaluate(
    outputs: &BTreeMap<String, Vec<Tensor>>,
    targets: &[Tensor],
    image_ids: &[String],
    cfg: &SsimConfig,
) -> Result<EvalReport> {
    if image_ids.len() != targets.len() {
        return Err(Error::Data(format!(
            "{} image ids for {} targets",
            image_ids.len(),
            targets.len()
        )));
    }
    let mut records = Vec::new();
    for (method, images) in outputs {
        if images.len() != targets.len() {
            return Err(Error::Data(format!(
                "method '{method}' has {} images for {} targets",
                images.len(),
                targets.len()
            )));
        }
        let scored = parallel::map_indexed(images.len(), |i| -> Result<ImageRecord> {
            Ok(ImageRecord {
                method: method.clone(),
                image: image_ids[i].clone(),
                psnr: psnr(&images[i], &targets[i], cfg.range)?,
                ssim: ssim(&images[i], &targets[i], cfg)?,
            })
        });
        for r in scored {
            records.push(r?);
        }
    }
    Ok(EvalReport::from_records(records))
}

/// Write `report.csv`, `report.txt` and `per_image.ndjson` into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in [
        ("report.csv", report.to_csv()),
        ("report.txt", report.to_table()),
        ("per_image.ndjson", report.to_ndjson()?),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// `f64` with infinity written as the string `"inf"`.
mod inf_sentinel {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {s:?}"
            ))),
        }
    }
}
