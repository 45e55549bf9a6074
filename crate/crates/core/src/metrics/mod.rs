//! Image quality metrics and aggregate reports.

mod quality;
mod report;

pub use quality::{gaussian_window, psnr, ssim, SsimConfig};
pub use report::{evaluate, write_report, EvalReport, ImageRecord, ReportRow};
