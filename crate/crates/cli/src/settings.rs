//! Resolution of the `train` configuration: defaults, then the config file,
//! then `--set` overrides.

use std::path::{Path, PathBuf};

use deepangio::nn::ModelKind;
use deepangio::train::{parse_kv, TrainConfig, CONFIG_KEYS};

use crate::failure::{CliResult, Failure};

/// File name of the fully resolved configuration written next to a run.
pub const RESOLVED_FILE: &str = "config.resolved";

/// Everything a training run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub kind: ModelKind,
    pub manifest: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub train: TrainConfig,
}

pub fn parse_kind(value: &str) -> CliResult<ModelKind> {
    match value {
        "none" | "angiogram" => Ok(ModelKind::Angiogram),
        "green" | "green-unet" => Ok(ModelKind::GreenBaseline),
        "pca" | "pca-unet" => Ok(ModelKind::PcaBaseline),
        _ => Err(Failure::usage(format!("unknown model `{value}` (expected angiogram, green or pca)"))),
    }
}

fn kind_key(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Angiogram => "angiogram",
        ModelKind::GreenBaseline => "green",
        ModelKind::PcaBaseline => "pca",
    }
}

/// `key = value` pairs of a config file.
pub fn parse_pairs(text: &str) -> CliResult<Vec<(String, String)>> {
    Ok(parse_kv(text)?)
}

/// Applies `pairs` over the defaults for the model kind. The kind is taken
/// from `model_override`, else a `model` key, else the angiogram model.
/// Relative paths in the file resolve against `base_dir`.
pub fn resolve(
    pairs: &[(String, String)],
    base_dir: &Path,
    model_override: Option<ModelKind>,
) -> CliResult<RunSettings> {
    let mut kind = ModelKind::Angiogram;
    for (k, v) in pairs {
        if k == "model" {
            kind = parse_kind(v)?;
        }
    }
    let kind = model_override.unwrap_or(kind);
    let mut s = RunSettings {
        kind,
        manifest: None,
        resume: None,
        train: TrainConfig::for_kind(kind),
    };
    let path = |v: &str| {
        let p = PathBuf::from(v);
        if p.is_absolute() {
            p
        } else {
            base_dir.join(p)
        }
    };
    for (k, v) in pairs {
        match k.as_str() {
            "model" => {}
            "manifest" => s.manifest = Some(path(v)),
            "resume" => s.resume = (!v.is_empty()).then(|| path(v)),
            _ => s.train.set(k, v)?,
        }
    }
    Ok(s)
}

impl RunSettings {
    /// Self-contained `key = value` text; feeding it back to [`resolve`]
    /// reproduces these settings.
    pub fn render(&self) -> String {
        let mut s = format!("model = {}\n", kind_key(self.kind));
        if let Some(m) = &self.manifest {
            s.push_str(&format!("manifest = {}\n", absolute(m).display()));
        }
        if let Some(r) = &self.resume {
            s.push_str(&format!("resume = {}\n", absolute(r).display()));
        }
        for key in CONFIG_KEYS {
            s.push_str(&format!("{key} = {}\n", self.train.get(key).expect("listed key")));
        }
        s
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}
