//! Versioned binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic            4 bytes  "DANG"
//! version          u32      (currently 1)
//! model kind       u8       0 = angiogram, 1 = green baseline, 2 = pca baseline
//! latent inverted  u8       1 when vessels are dark in the raw encoder output
//! network count    u32
//!   role           u8       0 = encoder, 1 = decoder
//!   in, out, base, depth    u32 each
//!   final act      u8       0 = sigmoid
//!   tensor count   u32
//!     tensor record (below), in layout order
//! epoch            u64
//! step             u64
//! has optimizer    u8
//!   adam step      u64
//!   count          u32      per network parameter, first then second moment records
//! has rng          u8
//!   seed           32 bytes
//!   stream         u64
//!   word position  u128
//!
//! tensor record: name len u32, UTF-8 name, rank u32, dims u32 × rank,
//!                f32 × product(dims), row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::network::{FinalActivation, Network, NetworkConfig, Role};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DANG";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Encoder + decoder trained with the contrastive objective.
    Angiogram,
    /// Single segmentation network on the green channel.
    GreenBaseline,
    /// Single segmentation network on the PCA grayscale image.
    PcaBaseline,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Angiogram, ModelKind::GreenBaseline, ModelKind::PcaBaseline];

    /// Name used on the command line and in metric tables.
    pub fn method_name(self) -> &'static str {
        match self {
            ModelKind::Angiogram => "angiogram",
            ModelKind::GreenBaseline => "green-unet",
            ModelKind::PcaBaseline => "pca-unet",
        }
    }

    pub fn from_method_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.method_name() == name)
    }

    fn code(self) -> u8 {
        match self {
            ModelKind::Angiogram => 0,
            ModelKind::GreenBaseline => 1,
            ModelKind::PcaBaseline => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => ModelKind::Angiogram,
            1 => ModelKind::GreenBaseline,
            2 => ModelKind::PcaBaseline,
            _ => return None,
        })
    }
}

/// Adam moments for every parameter of every network, in checkpoint order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub first: Vec<Tensor<f32>>,
    pub second: Vec<Tensor<f32>>,
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainState {
    pub epoch: u64,
    pub step: u64,
    pub optimizer: Option<OptimizerSnapshot>,
    pub rng: Option<RngSnapshot>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    /// The training objective fixes the latent only up to `z ↦ 1 − z`; this
    /// records which orientation puts vessels bright. See [`Checkpoint::orient`].
    pub latent_inverted: bool,
    pub networks: Vec<Network>,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn network(&self, role: Role) -> Option<&Network> {
        self.networks.iter().find(|n| n.role() == role)
    }

    pub fn encoder(&self) -> Option<&Network> {
        self.network(Role::Encoder)
    }

    /// Maps a raw latent value to angiogram intensity (vessels bright).
    pub fn orient(&self, v: f32) -> f32 {
        if self.latent_inverted {
            1.0 - v
        } else {
            v
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, name: &str, t: &Tensor<f32>) {
        self.u32(name.len());
        self.0.extend_from_slice(name.as_bytes());
        self.u32(t.rank());
        for &d in t.shape() {
            self.u32(d);
        }
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Serialized bytes of a checkpoint.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION as usize);
    w.u8(ckpt.kind.code());
    w.u8(ckpt.latent_inverted as u8);
    w.u32(ckpt.networks.len());
    for net in &ckpt.networks {
        let c = net.config();
        w.u8(match net.role() {
            Role::Encoder => 0,
            Role::Decoder => 1,
        });
        for v in [c.in_channels, c.out_channels, c.base_channels, c.depth] {
            w.u32(v);
        }
        w.u8(match c.final_activation {
            FinalActivation::Sigmoid => 0,
        });
        w.u32(net.params().len());
        for p in net.params() {
            w.tensor(&p.name, &p.tensor);
        }
    }
    w.u64(ckpt.state.epoch);
    w.u64(ckpt.state.step);
    match &ckpt.state.optimizer {
        Some(opt) => {
            w.u8(1);
            w.u64(opt.step);
            w.u32(opt.first.len());
            for (m, v) in opt.first.iter().zip(&opt.second) {
                w.tensor("m", m);
                w.tensor("v", v);
            }
        }
        None => w.u8(0),
    }
    match &ckpt.state.rng {
        Some(r) => {
            w.u8(1);
            w.0.extend_from_slice(&r.seed);
            w.u64(r.stream);
            w.0.extend_from_slice(&r.word_pos.to_le_bytes());
        }
        None => w.u8(0),
    }
    w.0
}

/// Writes via a temporary sibling file and rename, so readers never see a
/// half-written checkpoint.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt);
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|msg| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

type Decode<T> = std::result::Result<T, String>;

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Decode<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format!(
                "truncated: needed {n} bytes for {what} at offset {}, file has {}",
                self.pos,
                self.buf.len()
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Decode<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Decode<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self, what: &str) -> Decode<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn tensor(&mut self) -> Decode<(String, Tensor<f32>)> {
        let len = self.u32("tensor name length")?;
        let name = std::str::from_utf8(self.take(len, "tensor name")?)
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_string();
        let rank = self.u32("tensor rank")?;
        if rank > 8 {
            return Err(format!("tensor `{name}` has implausible rank {rank}"));
        }
        let shape = (0..rank)
            .map(|_| self.u32("tensor dim"))
            .collect::<Decode<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| format!("tensor `{name}` size overflows"))?;
        let bytes = self.take(
            n.checked_mul(4).ok_or("tensor size overflows")?,
            &format!("payload of `{name}`"),
        )?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Tensor::new(shape, data).map_err(|e| e.to_string())?))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Decode<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(format!("bad magic {magic:?}, expected \"DANG\""));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(format!(
            "unsupported format version {version}, this build reads {CHECKPOINT_VERSION}"
        ));
    }
    let kind_code = r.u8("model kind")?;
    let kind = ModelKind::from_code(kind_code).ok_or_else(|| format!("unknown model kind {kind_code}"))?;
    let latent_inverted = match r.u8("latent orientation")? {
        0 => false,
        1 => true,
        v => return Err(format!("invalid latent orientation flag {v}")),
    };
    let count = r.u32("network count")?;
    if count > 16 {
        return Err(format!("implausible network count {count}"));
    }
    let mut networks = Vec::with_capacity(count);
    for _ in 0..count {
        let role = match r.u8("role")? {
            0 => Role::Encoder,
            1 => Role::Decoder,
            other => return Err(format!("unknown network role {other}")),
        };
        let in_channels = r.u32("in_channels")?;
        let out_channels = r.u32("out_channels")?;
        let base_channels = r.u32("base_channels")?;
        let depth = r.u32("depth")?;
        let final_activation = match r.u8("final activation")? {
            0 => FinalActivation::Sigmoid,
            other => return Err(format!("unknown final activation {other}")),
        };
        let config = NetworkConfig {
            in_channels,
            out_channels,
            base_channels,
            depth,
            final_activation,
        };
        if depth > 12 || base_channels > 4096 {
            return Err(format!("implausible network config {config:?}"));
        }
        let n = r.u32("tensor count")?;
        let tensors = (0..n).map(|_| r.tensor()).collect::<Decode<Vec<_>>>()?;
        networks.push(Network::from_tensors(config, role, tensors).map_err(|e| e.to_string())?);
    }
    let epoch = r.u64("epoch")?;
    let step = r.u64("step")?;
    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let step = r.u64("adam step")?;
            let n = r.u32("moment count")?;
            let shapes: Vec<&[usize]> = networks
                .iter()
                .flat_map(|net| net.params().iter().map(|p| p.tensor.shape()))
                .collect();
            if n != shapes.len() {
                return Err(format!("optimizer has {n} moment pairs for {} parameters", shapes.len()));
            }
            let mut first = Vec::with_capacity(n);
            let mut second = Vec::with_capacity(n);
            for shape in shapes {
                let (_, m) = r.tensor()?;
                let (_, v) = r.tensor()?;
                if m.shape() != shape || v.shape() != shape {
                    return Err("optimizer moment shape does not mirror its parameter".into());
                }
                first.push(m);
                second.push(v);
            }
            Some(OptimizerSnapshot { step, first, second })
        }
        other => return Err(format!("bad optimizer flag {other}")),
    };
    let rng = match r.u8("rng flag")? {
        0 => None,
        1 => {
            let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().unwrap();
            let stream = r.u64("rng stream")?;
            let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().unwrap());
            Some(RngSnapshot {
                seed,
                stream,
                word_pos,
            })
        }
        other => return Err(format!("bad rng flag {other}")),
    };
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos));
    }
    Ok(Checkpoint {
        kind,
        latent_inverted,
        networks,
        state: TrainState {
            epoch,
            step,
            optimizer,
            rng,
        },
    })
}
