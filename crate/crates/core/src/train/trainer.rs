use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{latent_is_inverted, lr_schedule, preprocess, Adam, TrainConfig};
use crate::data::{sample_patches, Sample};
use crate::error::{Error, Result};
use crate::exec;
use crate::imgproc::{clahe, ClipLimitSampler, GeomTransform, Image};
use crate::losses::{supervised_loss, total_loss, LossBreakdown};
use crate::nn::{save_checkpoint, Checkpoint, ModelKind, Network, NetworkConfig, RngSnapshot, TrainState};
use crate::tensor::{Graph, Tensor};

pub const LOSS_LOG_HEADER: &str = "step,epoch,lr,seg_ce,seg_dice,cont_l2,cont_ssim,total";
pub const LOSS_LOG_FILE: &str = "loss.csv";
/// Always points at the newest checkpoint of a run.
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// One logged optimisation step. `step` counts from 1.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
}

impl StepLog {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{:e},{},{},{},{},{}",
            self.step, self.epoch, self.lr, l.seg_ce, l.seg_dice, l.cont_l2, l.cont_ssim, l.total
        )
    }
}

/// A training example after patching and augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub x: Image,
    pub x_aug: Image,
    pub y: Image,
}

/// Owns the networks, optimizer and data stream of one run.
///
/// Data protocol, per epoch: the list `[0, 0, .., 1, 1, ..]` of training
/// image indices (each repeated `patches_per_image` times) is shuffled with
/// the run rng and cut into batches. For every batch entry one `u64` is
/// drawn from the run rng and seeds a private ChaCha8 stream that picks the
/// patch, the CLAHE clip limit and the geometric transform, in that order.
/// Entries are then prepared in parallel; results depend on the seed alone.
pub struct Trainer {
    cfg: TrainConfig,
    kind: ModelKind,
    networks: Vec<Network>,
    adam: Adam<f32>,
    latent_inverted: bool,
    rng: ChaCha8Rng,
    epoch: u64,
    step: u64,
    log: Vec<StepLog>,
    out_dir: Option<PathBuf>,
    log_file: Option<BufWriter<File>>,
}

fn shapes(networks: &[Network]) -> Vec<Vec<usize>> {
    networks
        .iter()
        .flat_map(|n| n.params().iter().map(|p| p.tensor.shape().to_vec()))
        .collect()
}

fn network_configs(cfg: &TrainConfig, kind: ModelKind) -> Vec<NetworkConfig> {
    match kind {
        ModelKind::Angiogram => vec![cfg.encoder_config(), cfg.decoder_config()],
        ModelKind::GreenBaseline | ModelKind::PcaBaseline => vec![NetworkConfig {
            in_channels: 1,
            ..cfg.encoder_config()
        }],
    }
}

impl Trainer {
    /// Fresh networks initialised from `cfg.seed`.
    pub fn new(cfg: TrainConfig, kind: ModelKind) -> Result<Self> {
        cfg.validate()?;
        let configs = network_configs(&cfg, kind);
        let mut networks = Vec::with_capacity(configs.len());
        for (i, c) in configs.into_iter().enumerate() {
            let mut net = if i == 0 {
                Network::build_encoder(c)?
            } else {
                Network::build_decoder(c)?
            };
            net.init_parameters(cfg.seed.wrapping_add(1 + i as u64));
            networks.push(net);
        }
        let shapes = shapes(&networks);
        Ok(Trainer {
            adam: Adam::new(shapes.iter().map(Vec::as_slice)),
            latent_inverted: false,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            kind,
            networks,
            epoch: 0,
            step: 0,
            log: Vec::new(),
            out_dir: None,
            log_file: None,
        })
    }

    /// Continues a run from a checkpoint carrying optimizer and rng state.
    /// Network shapes must match what `cfg` would build.
    pub fn resume(cfg: TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let expected = network_configs(&cfg, ckpt.kind);
        let found: Vec<NetworkConfig> = ckpt.networks.iter().map(|n| *n.config()).collect();
        if expected != found {
            return Err(Error::Config(format!(
                "checkpoint networks {found:?} do not match the configuration {expected:?}"
            )));
        }
        let (Some(opt), Some(rng)) = (ckpt.state.optimizer, ckpt.state.rng) else {
            return Err(Error::Config("checkpoint carries no optimizer/rng state to resume from".into()));
        };
        let shapes = shapes(&ckpt.networks);
        let adam = Adam::from_snapshot(opt, shapes.iter().map(Vec::as_slice))?;
        let mut r = ChaCha8Rng::from_seed(rng.seed);
        r.set_stream(rng.stream);
        r.set_word_pos(rng.word_pos);
        Ok(Trainer {
            cfg,
            kind: ckpt.kind,
            networks: ckpt.networks,
            adam,
            latent_inverted: ckpt.latent_inverted,
            rng: r,
            epoch: ckpt.state.epoch,
            step: ckpt.state.step,
            log: Vec::new(),
            out_dir: None,
            log_file: None,
        })
    }

    /// Writes the loss log and checkpoints under `dir`. A fresh run starts a
    /// new log; a resumed run keeps the rows up to its step and appends.
    pub fn with_output_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(LOSS_LOG_FILE);
        let mut kept = String::new();
        if self.step > 0 {
            if let Ok(text) = fs::read_to_string(&path) {
                for line in text.lines().skip(1) {
                    let step: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
                    if step.is_some_and(|s| s <= self.step) {
                        kept.push_str(line);
                        kept.push('\n');
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        write!(w, "{LOSS_LOG_HEADER}\n{kept}").map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.log_file = Some(w);
        self.out_dir = Some(dir);
        Ok(self)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn networks(&self) -> &[Network] {
        &self.networks
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Steps run by this trainer instance (not those before a resume).
    pub fn log(&self) -> &[StepLog] {
        &self.log
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: self.kind,
            latent_inverted: self.latent_inverted,
            networks: self.networks.clone(),
            state: TrainState {
                epoch: self.epoch,
                step: self.step,
                optimizer: Some(self.adam.snapshot()),
                rng: Some(RngSnapshot {
                    seed: self.rng.get_seed(),
                    stream: self.rng.get_stream(),
                    word_pos: self.rng.get_word_pos(),
                }),
            },
        }
    }

    /// Trains until `cfg.epochs` epochs are complete.
    pub fn fit(&mut self, samples: &[Sample]) -> Result<()> {
        self.run_epochs(samples, u64::MAX)
    }

    /// Runs at most `n` further epochs (never past `cfg.epochs`).
    pub fn run_epochs(&mut self, samples: &[Sample], n: u64) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::invalid("train", "no training samples"));
        }
        let data: Vec<Sample> = samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    image: preprocess(self.kind, &s.image)?,
                    ..s.clone()
                })
            })
            .collect::<Result<_>>()?;
        let mut left = n;
        while self.epoch < self.cfg.epochs && left > 0 {
            self.run_epoch(&data)?;
            left -= 1;
        }
        Ok(())
    }

    fn run_epoch(&mut self, data: &[Sample]) -> Result<()> {
        let ppi = self.cfg.patches_per_image;
        let mut order: Vec<usize> = (0..data.len() * ppi).map(|i| i / ppi).collect();
        order.shuffle(&mut self.rng);
        let lr = lr_schedule(self.epoch, &self.cfg);
        for batch in order.chunks(self.cfg.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| self.rng.gen()).collect();
            let prepared = exec::map_indexed(batch.len(), |k| prepare(&self.cfg, self.kind, &data[batch[k]], seeds[k]))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let loss = self.optimise(&prepared, lr)?;
            self.record(StepLog {
                step: self.step,
                epoch: self.epoch,
                lr,
                loss,
            })?;
        }
        self.epoch += 1;
        if let Some(w) = &mut self.log_file {
            w.flush().map_err(|e| Error::io(LOSS_LOG_FILE, e))?;
        }
        if self.epoch.is_multiple_of(self.cfg.checkpoint_every) || self.epoch == self.cfg.epochs {
            if self.kind == ModelKind::Angiogram {
                self.latent_inverted = latent_is_inverted(&self.networks[0], data)?;
            }
            self.save()?;
        }
        Ok(())
    }

    /// One forward/backward/Adam step on a prepared batch.
    fn optimise(&mut self, batch: &[Prepared], lr: f64) -> Result<LossBreakdown> {
        let stack = |f: fn(&Prepared) -> &Image| Image::stack(&batch.iter().map(f).collect::<Vec<_>>());
        let mut g = Graph::<f32>::new();
        let bounds: Vec<_> = self.networks.iter().map(|n| n.bind(&mut g, true)).collect();
        let x = g.constant(stack(|p| &p.x)?);
        let y = g.constant(stack(|p| &p.y)?);
        let (loss, breakdown) = match self.kind {
            ModelKind::Angiogram => {
                let x_aug = g.constant(stack(|p| &p.x_aug)?);
                let (enc, dec) = (&self.networks[0], &self.networks[1]);
                total_loss(&mut g, enc, &bounds[0], dec, &bounds[1], x, x_aug, y, self.cfg.lambda_cont)?
            }
            _ => supervised_loss(&mut g, &self.networks[0], &bounds[0], x, y)?,
        };
        if !breakdown.is_finite() {
            return Err(Error::NonFinite {
                what: format!("loss ({breakdown:?})"),
                step: self.step + 1,
            });
        }
        g.backward(loss)?;

        let vars: Vec<_> = bounds.iter().flat_map(|b| b.vars().iter().copied()).collect();
        let zeros: Vec<Tensor<f32>>;
        let grads: Vec<&Tensor<f32>> = if vars.iter().all(|&v| g.grad(v).is_some()) {
            vars.iter().map(|&v| g.grad(v).expect("checked")).collect()
        } else {
            zeros = vars.iter().map(|&v| Tensor::zeros(g.shape(v))).collect();
            vars.iter()
                .zip(&zeros)
                .map(|(&v, z)| g.grad(v).unwrap_or(z))
                .collect()
        };
        let mut params: Vec<(&str, &mut Tensor<f32>)> = self
            .networks
            .iter_mut()
            .flat_map(|n| n.params_mut().iter_mut().map(|p| (p.name.as_str(), &mut p.tensor)))
            .collect();
        self.adam.step(&mut params, &grads, lr)?;
        self.step += 1;
        Ok(breakdown)
    }

    fn record(&mut self, row: StepLog) -> Result<()> {
        if let Some(w) = &mut self.log_file {
            writeln!(w, "{}", row.csv_row()).map_err(|e| Error::io(LOSS_LOG_FILE, e))?;
        }
        log::debug!("{}", row.csv_row());
        self.log.push(row);
        Ok(())
    }

    fn save(&self) -> Result<()> {
        let Some(dir) = &self.out_dir else {
            return Ok(());
        };
        let ckpt = self.checkpoint();
        let path = dir.join(format!("epoch_{:04}.ckpt", self.epoch));
        save_checkpoint(&path, &ckpt)?;
        save_checkpoint(dir.join(LAST_CHECKPOINT), &ckpt)?;
        log::info!("epoch {} step {}: saved {}", self.epoch, self.step, path.display());
        Ok(())
    }
}

/// Patch, clip-limit and geometric draws for one batch entry, from its own seed.
pub fn prepare(cfg: &TrainConfig, kind: ModelKind, sample: &Sample, seed: u64) -> Result<Prepared> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patch = sample_patches(&sample.image, &sample.label, &sample.fov, cfg.patch_size, 1, &mut rng)
        .map_err(|e| Error::Record {
            id: sample.id.clone(),
            msg: e.to_string(),
        })?
        .pop()
        .expect("one patch requested");
    let x = patch.image;
    let x_aug = if cfg.augment_clahe && kind == ModelKind::Angiogram {
        let clip = ClipLimitSampler::new(cfg.clip_mean, cfg.clip_std).sample(&mut rng);
        clahe(&x, clip, cfg.clahe_tiles)?
    } else {
        x.clone()
    };
    let y = patch.label;
    Ok(if cfg.augment_geometric {
        let t = GeomTransform::random(&mut rng);
        Prepared {
            x: t.apply(&x),
            x_aug: t.apply(&x_aug),
            y: t.apply(&y),
        }
    } else {
        Prepared { x, x_aug, y }
    })
}

/// Trains the contrastive encoder/decoder pair.
pub fn train(samples: &[Sample], cfg: TrainConfig, out_dir: Option<&Path>) -> Result<Trainer> {
    run(samples, cfg, ModelKind::Angiogram, out_dir)
}

/// Trains a single segmentation network on green or PCA grayscale input.
pub fn train_baseline(samples: &[Sample], cfg: TrainConfig, kind: ModelKind, out_dir: Option<&Path>) -> Result<Trainer> {
    if kind == ModelKind::Angiogram {
        return Err(Error::invalid("train_baseline", "expected a baseline model kind"));
    }
    run(samples, cfg, kind, out_dir)
}

fn run(samples: &[Sample], cfg: TrainConfig, kind: ModelKind, out_dir: Option<&Path>) -> Result<Trainer> {
    let mut t = Trainer::new(cfg, kind)?;
    if let Some(dir) = out_dir {
        t = t.with_output_dir(dir)?;
    }
    t.fit(samples)?;
    Ok(t)
}
