//! Plain-text training log.
//!
//! ```text
//! # config total_iters = 5000
//! # config ...
//! iter=100 stage=1 l1=0.041200 ssim=0.183000 obj=- total=0.077800 psnr=24.310 count=912
//! ```
//!
//! `obj` is `-` in stage 1. Values use fixed decimal places.

use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub stage: u8,
    pub l1: f64,
    /// 1 − SSIM.
    pub ssim: f64,
    pub obj: Option<f64>,
    pub total: f64,
    pub psnr: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    /// `key = value` lines of the run's config.
    pub config: Vec<String>,
    pub records: Vec<MetricsRecord>,
}

impl MetricsLog {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for line in &self.config {
            let _ = writeln!(s, "# config {line}");
        }
        for r in &self.records {
            let obj = r.obj.map_or_else(|| "-".to_string(), |o| format!("{o:.6}"));
            let _ = writeln!(
                s,
                "iter={} stage={} l1={:.6} ssim={:.6} obj={} total={:.6} psnr={:.3} count={}",
                r.iteration, r.stage, r.l1, r.ssim, obj, r.total, r.psnr, r.count
            );
        }
        s
    }

    /// Value of `key` in the echoed config.
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find_map(|line| {
            let (k, v) = line.split_once('=')?;
            (k.trim() == key).then(|| v.trim())
        })
    }
}
