//! Run configuration. Precedence: command-line flag, then config file, then
//! the built-in defaults of the base system.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use scirp::instance::{GenParams, Uncertainty};
use scirp::search::{LineSearchParams, MdpSettings};
use scirp::simulate::Mode;

use crate::CliError;

/// Everything a config file may set. Relative paths are taken relative to
/// the file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub instance: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub step: Option<i64>,
    pub tail_mass: Option<f64>,
    pub epsilon: Option<f64>,
    pub zeta: Option<Vec<f64>>,
    pub ub: Option<Vec<f64>>,
    pub periods: Option<u64>,
    pub replications: Option<usize>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub grid_eta1: Option<Vec<f64>>,
    pub grid_eta2: Option<Vec<f64>>,
    pub which: Option<String>,
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub step_mult: Option<f64>,
    pub mode: Option<Mode>,
    pub n: Option<usize>,
    #[serde(rename = "T")]
    pub cycle: Option<usize>,
    pub uncertainty: Option<Uncertainty>,
    /// Generator parameters; absent fields keep the base-system defaults.
    pub gen: Option<GenParams>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::path(format!("config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.instance, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Flag value if given, else the config value.
pub fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

/// One value sets both parameters; two set `eta1` and `eta2` in order.
pub fn pair(values: Option<Vec<f64>>, default: [f64; 2], name: &str) -> Result<[f64; 2], CliError> {
    match values.as_deref() {
        None => Ok(default),
        Some([v]) => Ok([*v, *v]),
        Some([a, b]) => Ok([*a, *b]),
        Some(_) => Err(CliError::config(format!("--{name} takes one or two values"))),
    }
}

pub fn mdp_settings(step: Option<i64>, tail_mass: Option<f64>, epsilon: Option<f64>) -> Result<MdpSettings, CliError> {
    let d = MdpSettings::default();
    let s = MdpSettings {
        step: step.unwrap_or(d.step),
        tail_mass: tail_mass.unwrap_or(d.tail_mass),
        epsilon: epsilon.unwrap_or(d.epsilon),
    };
    if s.step < 1 || !(s.tail_mass > 0.0 && s.tail_mass < 1.0) || !(s.epsilon > 0.0) {
        return Err(CliError::config(format!(
            "need step >= 1, 0 < tail-mass < 1, epsilon > 0 (got {}, {}, {})",
            s.step, s.tail_mass, s.epsilon
        )));
    }
    Ok(s)
}

pub fn line_search_params(zeta: Option<Vec<f64>>, ub: Option<Vec<f64>>) -> Result<LineSearchParams, CliError> {
    let d = LineSearchParams::default();
    Ok(LineSearchParams {
        zeta: pair(zeta, d.zeta, "zeta")?,
        ub: pair(ub, d.ub, "ub")?,
        eps_init: d.eps_init,
    })
}

/// Multiplier sweep `from, from + step, ..., to`, endpoints included.
/// Values are built by index so no drift accumulates.
pub fn sweep_values(from: f64, to: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0 && from.is_finite() && to.is_finite() && from <= to && from >= 0.0) {
        return Err(CliError::config(format!(
            "sweep needs 0 <= from <= to and step > 0 (got {from}, {to}, {step})"
        )));
    }
    let count = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| round9(from + k as f64 * step)).collect())
}

fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}
