use std::path::Path;

use crate::error::{Error, Result};
use crate::io::kv::{list, parse_kv, parse_error, value};
use crate::loss::LossWeights;

/// Iteration count the default milestones are expressed in.
pub const REFERENCE_ITERS: usize = 30_000;
/// Minimum gap between the last opacity reset and the start of stage 2.
pub const RESET_GAP: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_iters: usize,
    /// Last stage-1 iteration; stage 2 runs from the next one.
    pub stage2_start: usize,
    pub m_objects: usize,
    pub lambda_o: f64,
    pub lambda_ssim: f64,

    /// Position learning rate decays exponentially between these values,
    /// both multiplied by the scene extent.
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub lr_sh_dc: f64,
    pub lr_sh_rest: f64,
    pub lr_opacity: f64,
    /// Defaults to `lr_opacity` when unset.
    pub lr_instance_opacity: Option<f64>,
    pub lr_scale: f64,
    pub lr_rotation: f64,

    pub densify_from: usize,
    pub densify_interval: usize,
    pub densify_until: usize,
    /// Threshold on the mean screen-space position gradient, in NDC units.
    pub grad_threshold: f64,
    /// Clone below, split above this fraction of the scene extent.
    pub percent_dense: f64,
    pub prune_opacity_threshold: f64,
    pub opacity_reset_interval: usize,

    pub background: [f64; 3],
    pub seed: u64,
    /// Iterations between metric records.
    pub log_interval: usize,
    /// Stage-2 iterations between gradient path-separation checks.
    pub check_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iters: REFERENCE_ITERS,
            stage2_start: 20_000,
            m_objects: 3,
            lambda_o: 0.1,
            lambda_ssim: 0.2,
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_sh_dc: 2.5e-3,
            lr_sh_rest: 2.5e-3 / 20.0,
            lr_opacity: 0.05,
            lr_instance_opacity: None,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            densify_from: 500,
            densify_interval: 100,
            densify_until: 15_000,
            grad_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity_threshold: 0.005,
            opacity_reset_interval: 3_000,
            background: [0.0; 3],
            seed: 0,
            log_interval: 100,
            check_interval: 100,
        }
    }
}

fn scaled(v: usize, total: usize) -> usize {
    ((v as f64 * total as f64 / REFERENCE_ITERS as f64).round() as usize).max(1)
}

impl TrainConfig {
    /// Defaults with every milestone scaled by `total / 30 000`. Opacity
    /// resets are dropped when the scaled schedule would put one within
    /// `RESET_GAP` iterations of stage 2.
    pub fn for_iterations(total: usize) -> Self {
        let d = Self::default();
        let mut c = Self {
            total_iters: total,
            stage2_start: scaled(d.stage2_start, total),
            densify_from: scaled(d.densify_from, total),
            densify_until: scaled(d.densify_until, total),
            opacity_reset_interval: scaled(d.opacity_reset_interval, total),
            ..d
        };
        if c.last_reset().is_some_and(|last| c.stage2_start < last + RESET_GAP) {
            c.opacity_reset_interval = 0;
        }
        c
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_ssim: self.lambda_ssim,
            lambda_o: self.lambda_o,
            m_objects: self.m_objects,
        }
    }

    pub fn instance_opacity_lr(&self) -> f64 {
        self.lr_instance_opacity.unwrap_or(self.lr_opacity)
    }

    /// Stage-1 iterations at which opacity is reset.
    pub fn reset_iterations(&self) -> impl Iterator<Item = usize> + '_ {
        let r = self.opacity_reset_interval;
        let end = self.densify_until.min(self.stage2_start + 1);
        (1..).map(move |k| k * r).take_while(move |&it| r > 0 && it < end)
    }

    pub fn last_reset(&self) -> Option<usize> {
        self.reset_iterations().last()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.stage2_start && self.stage2_start < self.total_iters) {
            return Err(Error::invalid(format!(
                "stage2_start {} must lie strictly between 0 and total_iters {}",
                self.stage2_start, self.total_iters
            )));
        }
        if let Some(last) = self.last_reset() {
            if self.stage2_start < last + RESET_GAP {
                return Err(Error::invalid(format!(
                    "stage2_start {} is within {RESET_GAP} iterations of the opacity reset at {last}",
                    self.stage2_start
                )));
            }
        }
        self.loss_weights().validate()?;
        if self.densify_interval == 0 || self.log_interval == 0 || self.check_interval == 0 {
            return Err(Error::invalid("intervals must be at least 1"));
        }
        let rates = [
            self.lr_position_init,
            self.lr_position_final,
            self.lr_sh_dc,
            self.lr_sh_rest,
            self.lr_opacity,
            self.instance_opacity_lr(),
            self.lr_scale,
            self.lr_rotation,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || self.lr_position_final <= 0.0 || self.lr_position_init <= 0.0 {
            return Err(Error::invalid("learning rates must be finite and non-negative, position rates positive"));
        }
        if !(self.grad_threshold > 0.0 && self.percent_dense > 0.0 && self.prune_opacity_threshold >= 0.0) {
            return Err(Error::invalid("densification thresholds must be positive"));
        }
        Ok(())
    }

    /// Reads a config file. `total_iters`, if present, is applied first and
    /// rescales the milestone defaults; every other key then overrides.
    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let entries = parse_kv(text, path)?;
        let mut cfg = match entries.iter().find(|e| e.key == "total_iters") {
            Some(e) => Self::for_iterations(value(e, path)?),
            None => Self::default(),
        };
        for e in &entries {
            match e.key.as_str() {
                "total_iters" => {}
                "stage2_start" => cfg.stage2_start = value(e, path)?,
                "m_objects" => cfg.m_objects = value(e, path)?,
                "lambda_o" => cfg.lambda_o = value(e, path)?,
                "lambda_ssim" => cfg.lambda_ssim = value(e, path)?,
                "lr_position_init" => cfg.lr_position_init = value(e, path)?,
                "lr_position_final" => cfg.lr_position_final = value(e, path)?,
                "lr_sh_dc" => cfg.lr_sh_dc = value(e, path)?,
                "lr_sh_rest" => cfg.lr_sh_rest = value(e, path)?,
                "lr_opacity" => cfg.lr_opacity = value(e, path)?,
                "lr_instance_opacity" => cfg.lr_instance_opacity = Some(value(e, path)?),
                "lr_scale" => cfg.lr_scale = value(e, path)?,
                "lr_rotation" => cfg.lr_rotation = value(e, path)?,
                "densify_from" => cfg.densify_from = value(e, path)?,
                "densify_interval" => cfg.densify_interval = value(e, path)?,
                "densify_until" => cfg.densify_until = value(e, path)?,
                "grad_threshold" => cfg.grad_threshold = value(e, path)?,
                "percent_dense" => cfg.percent_dense = value(e, path)?,
                "prune_opacity_threshold" => cfg.prune_opacity_threshold = value(e, path)?,
                "opacity_reset_interval" => cfg.opacity_reset_interval = value(e, path)?,
                "background" => {
                    let v: Vec<f64> = list(e, path)?;
                    cfg.background = v
                        .try_into()
                        .map_err(|_| parse_error(path, e.line, "background needs three values"))?;
                }
                "seed" => cfg.seed = value(e, path)?,
                "log_interval" => cfg.log_interval = value(e, path)?,
                "check_interval" => cfg.check_interval = value(e, path)?,
                other => return Err(parse_error(path, e.line, format!("unknown key {other:?}"))),
            }
        }
        cfg.validate().map_err(|err| parse_error(path, 0, err.to_string()))?;
        Ok(cfg)
    }

    /// `key = value` lines that [`from_text`](Self::from_text) reads back
    /// to an equal config.
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("total_iters = {}", self.total_iters),
            format!("stage2_start = {}", self.stage2_start),
            format!("m_objects = {}", self.m_objects),
            format!("lambda_o = {}", self.lambda_o),
            format!("lambda_ssim = {}", self.lambda_ssim),
            format!("lr_position_init = {}", self.lr_position_init),
            format!("lr_position_final = {}", self.lr_position_final),
            format!("lr_sh_dc = {}", self.lr_sh_dc),
            format!("lr_sh_rest = {}", self.lr_sh_rest),
            format!("lr_opacity = {}", self.lr_opacity),
        ];
        if let Some(lr) = self.lr_instance_opacity {
            lines.push(format!("lr_instance_opacity = {lr}"));
        }
        lines.extend([
            format!("lr_scale = {}", self.lr_scale),
            format!("lr_rotation = {}", self.lr_rotation),
            format!("densify_from = {}", self.densify_from),
            format!("densify_interval = {}", self.densify_interval),
            format!("densify_until = {}", self.densify_until),
            format!("grad_threshold = {}", self.grad_threshold),
            format!("percent_dense = {}", self.percent_dense),
            format!("prune_opacity_threshold = {}", self.prune_opacity_threshold),
            format!("opacity_reset_interval = {}", self.opacity_reset_interval),
            format!(
                "background = {} {} {}",
                self.background[0], self.background[1], self.background[2]
            ),
            format!("seed = {}", self.seed),
            format!("log_interval = {}", self.log_interval),
            format!("check_interval = {}", self.check_interval),
        ]);
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }
}
