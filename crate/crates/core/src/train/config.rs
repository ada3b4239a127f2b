use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{ModelKind, NetworkConfig};

/// Hyper-parameters of a training run. Together with the data and the seed
/// they determine the run bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: u64,
    pub lr_init: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: u64,
    /// Floor for the decayed learning rate; 0 disables it.
    pub lr_min: f64,
    pub lambda_cont: f64,
    pub clip_mean: f64,
    pub clip_std: f64,
    pub clahe_tiles: (usize, usize),
    pub patch_size: usize,
    /// Patches drawn from each training image per epoch.
    pub patches_per_image: usize,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (the last epoch always saves).
    pub checkpoint_every: u64,
    pub augment_clahe: bool,
    pub augment_geometric: bool,
    pub encoder_base: usize,
    pub encoder_depth: usize,
    pub decoder_base: usize,
    pub decoder_depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let enc = NetworkConfig::encoder_default();
        let dec = NetworkConfig::decoder_default();
        TrainConfig {
            batch_size: 4,
            epochs: 300,
            lr_init: 5e-4,
            lr_decay_factor: 0.5,
            lr_decay_every: 3,
            lr_min: 0.0,
            lambda_cont: 1.0,
            clip_mean: 5.0,
            clip_std: 1.0,
            clahe_tiles: crate::imgproc::DEFAULT_TILES,
            patch_size: 256,
            patches_per_image: 1,
            seed: 0,
            checkpoint_every: 1,
            augment_clahe: true,
            augment_geometric: true,
            encoder_base: enc.base_channels,
            encoder_depth: enc.depth,
            decoder_base: dec.base_channels,
            decoder_depth: dec.depth,
        }
    }
}

/// Every key accepted by [`TrainConfig::set`], in output order.
pub const CONFIG_KEYS: &[&str] = &[
    "batch_size",
    "epochs",
    "lr_init",
    "lr_decay_factor",
    "lr_decay_every",
    "lr_min",
    "lambda_cont",
    "clip_mean",
    "clip_std",
    "clahe_tiles",
    "patch_size",
    "patches_per_image",
    "seed",
    "checkpoint_every",
    "augment_clahe",
    "augment_geometric",
    "encoder_base",
    "encoder_depth",
    "decoder_base",
    "decoder_depth",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl TrainConfig {
    /// Defaults for a model kind: the baselines start at lr 1e-3.
    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Angiogram => Self::default(),
            ModelKind::GreenBaseline | ModelKind::PcaBaseline => TrainConfig {
                lr_init: 1e-3,
                ..Self::default()
            },
        }
    }

    pub fn encoder_config(&self) -> NetworkConfig {
        NetworkConfig::encoder_default().with_base(self.encoder_base, self.encoder_depth)
    }

    pub fn decoder_config(&self) -> NetworkConfig {
        NetworkConfig::decoder_default().with_base(self.decoder_base, self.decoder_depth)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr_init" => self.lr_init = parse(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, value)?,
            "lr_decay_every" => self.lr_decay_every = parse(key, value)?,
            "lr_min" => self.lr_min = parse(key, value)?,
            "lambda_cont" => self.lambda_cont = parse(key, value)?,
            "clip_mean" => self.clip_mean = parse(key, value)?,
            "clip_std" => self.clip_std = parse(key, value)?,
            "clahe_tiles" => {
                let (a, b) = value
                    .split_once('x')
                    .ok_or_else(|| Error::Config(format!("`{key}` expects ROWSxCOLS, got `{value}`")))?;
                self.clahe_tiles = (parse(key, a)?, parse(key, b)?);
            }
            "patch_size" => self.patch_size = parse(key, value)?,
            "patches_per_image" => self.patches_per_image = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "augment_clahe" => self.augment_clahe = parse(key, value)?,
            "augment_geometric" => self.augment_geometric = parse(key, value)?,
            "encoder_base" => self.encoder_base = parse(key, value)?,
            "encoder_depth" => self.encoder_depth = parse(key, value)?,
            "decoder_base" => self.decoder_base = parse(key, value)?,
            "decoder_depth" => self.decoder_depth = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Current value of `key` in the form [`set`](Self::set) accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr_init" => self.lr_init.to_string(),
            "lr_decay_factor" => self.lr_decay_factor.to_string(),
            "lr_decay_every" => self.lr_decay_every.to_string(),
            "lr_min" => self.lr_min.to_string(),
            "lambda_cont" => self.lambda_cont.to_string(),
            "clip_mean" => self.clip_mean.to_string(),
            "clip_std" => self.clip_std.to_string(),
            "clahe_tiles" => format!("{}x{}", self.clahe_tiles.0, self.clahe_tiles.1),
            "patch_size" => self.patch_size.to_string(),
            "patches_per_image" => self.patches_per_image.to_string(),
            "seed" => self.seed.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "augment_clahe" => self.augment_clahe.to_string(),
            "augment_geometric" => self.augment_geometric.to_string(),
            "encoder_base" => self.encoder_base.to_string(),
            "encoder_depth" => self.encoder_depth.to_string(),
            "decoder_base" => self.decoder_base.to_string(),
            "decoder_depth" => self.decoder_depth.to_string(),
            _ => return None,
        })
    }

    /// `key = value` lines for every key. Floats print in shortest
    /// round-trip form, so parsing the output restores the config exactly.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let positive_ints = [
            ("batch_size", self.batch_size as u64),
            ("epochs", self.epochs),
            ("lr_decay_every", self.lr_decay_every),
            ("patch_size", self.patch_size as u64),
            ("patches_per_image", self.patches_per_image as u64),
            ("checkpoint_every", self.checkpoint_every),
            ("clahe_tiles", self.clahe_tiles.0.min(self.clahe_tiles.1) as u64),
        ];
        for (k, v) in positive_ints {
            if v == 0 {
                return bad(format!("`{k}` must be positive"));
            }
        }
        if !(self.lr_init.is_finite() && self.lr_init > 0.0) {
            return bad("`lr_init` must be positive".into());
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("`lr_decay_factor` must be in (0, 1]".into());
        }
        if !(self.lr_min >= 0.0 && self.lr_min.is_finite()) {
            return bad("`lr_min` must be non-negative".into());
        }
        if !(self.lambda_cont >= 0.0 && self.lambda_cont.is_finite()) {
            return bad("`lambda_cont` must be non-negative".into());
        }
        if !(self.clip_mean > 0.0 && self.clip_std >= 0.0) {
            return bad("clip limit distribution must have positive mean".into());
        }
        let as_config = |e: Error| Error::Config(e.to_string());
        self.encoder_config().validate().map_err(as_config)?;
        self.decoder_config().validate().map_err(as_config)?;
        self.encoder_config().check_input(self.patch_size, self.patch_size).map_err(as_config)?;
        Ok(())
    }
}

/// `key = value` pairs of a config text; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Applies `key = value` lines to `cfg`.
pub fn apply_kv(cfg: &mut TrainConfig, text: &str) -> Result<()> {
    for (k, v) in parse_kv(text)? {
        cfg.set(&k, &v)?;
    }
    Ok(())
}
