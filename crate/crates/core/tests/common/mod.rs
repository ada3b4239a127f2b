//! Fixtures and independent reference implementations shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

use deepangio::data::{generate_phantoms, sample_patches, PhantomParams, Sample};
use deepangio::error::Result;
use deepangio::imgproc::{histogram256, quantize, Image};
use deepangio::losses::{contrastive_loss, seg_loss, ssim_per_sample, supervised_loss, total_loss};
use deepangio::nn::{Bound, Network, NetworkConfig, Role};
use deepangio::tensor::{compare_gradients, GradCheckOptions, GradCheckReport, Graph, Real, Tensor, Var};
use deepangio::train::TrainConfig;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Gradient fixtures

/// One differentiable op or loss wrapped into a scalar function of its inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Case {
    Add,
    Sub,
    Mul,
    Div,
    Scale,
    AddScalar,
    Clamp,
    Relu,
    LeakyRelu,
    Sigmoid,
    Log,
    Conv,
    ConvStride2,
    Conv1x1,
    ConvRelu,
    Pool,
    Upsample,
    Concat,
    Slice,
    SumAxes,
    MeanAxes,
    InstanceNorm,
    SegLoss,
    Ssim,
    ContrastiveLoss,
    EncoderLoss,
    BaselineLoss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    /// Analytic and numeric gradients both in f64.
    F64,
    /// Analytic gradient from an f32 graph; numeric reference in f64 at the
    /// same (f32-representable) point.
    F32,
}

pub const F32_TOLERANCE: f64 = 1e-3;

fn enc_config() -> NetworkConfig {
    NetworkConfig::encoder_default().with_base(4, 2)
}

fn dec_config() -> NetworkConfig {
    NetworkConfig::decoder_default().with_base(4, 1)
}

fn baseline_config() -> NetworkConfig {
    NetworkConfig {
        in_channels: 1,
        ..enc_config()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Uniform values with magnitude at least `gap` away from `at`.
fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], at: f64, gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let u: f64 = rng.gen_range(-1.0..1.0);
        at + u.signum() * (gap + u.abs())
    })
}

fn binary(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 })
}

fn params_f64(net: &Network) -> Vec<Tensor<f64>> {
    net.params().iter().map(|p| p.tensor.cast()).collect()
}

/// `Σ w ⊙ out` with fixed, non-uniform weights so every output element matters.
fn weighted_sum<T: Real>(g: &mut Graph<T>, out: Var) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let w = Tensor::from_fn(shape, |i| T::from_f64(((i as f64) * 0.7 + 0.3).sin()));
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    g.sum_all(prod)
}

impl Case {
    pub const ALL: [Case; 27] = [
        Case::Add,
        Case::Sub,
        Case::Mul,
        Case::Div,
        Case::Scale,
        Case::AddScalar,
        Case::Clamp,
        Case::Relu,
        Case::LeakyRelu,
        Case::Sigmoid,
        Case::Log,
        Case::Conv,
        Case::ConvStride2,
        Case::Conv1x1,
        Case::ConvRelu,
        Case::Pool,
        Case::Upsample,
        Case::Concat,
        Case::Slice,
        Case::SumAxes,
        Case::MeanAxes,
        Case::InstanceNorm,
        Case::SegLoss,
        Case::Ssim,
        Case::ContrastiveLoss,
        Case::EncoderLoss,
        Case::BaselineLoss,
    ];

    /// Scalar functions that are at most quadratic (or piecewise linear away
    /// from kinks) in their inputs, where central differences are exact up
    /// to rounding.
    pub fn is_quadratic(self) -> bool {
        use Case::*;
        matches!(
            self,
            Add | Sub | Mul | Scale | AddScalar | Clamp | Relu | LeakyRelu | Conv | ConvStride2 | Conv1x1 | Pool
                | Upsample | Concat | Slice | SumAxes | MeanAxes
        )
    }

    /// Tolerance of the f64 check.
    pub fn tolerance(self) -> f64 {
        if self.is_quadratic() {
            1e-6
        } else if self == Case::Sigmoid {
            1e-4
        } else {
            1e-3
        }
    }

    fn coords_per_input(self) -> usize {
        match self {
            Case::EncoderLoss | Case::BaselineLoss => 3,
            _ => 64,
        }
    }

    pub fn inputs(self, seed: u64) -> Vec<Tensor<f64>> {
        use Case::*;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let r = &mut rng;
        let s = [2, 3, 4, 4];
        match self {
            Add | Sub | Mul => vec![uniform(r, &s, -1.0, 1.0), uniform(r, &s, -1.0, 1.0)],
            Div => vec![uniform(r, &s, -1.0, 1.0), away_from(r, &s, 0.0, 0.5)],
            Scale | AddScalar | Sigmoid => vec![uniform(r, &s, -3.0, 3.0)],
            Clamp => vec![Tensor::from_fn(s.to_vec(), |_| {
                let u: f64 = r.gen_range(-1.0..1.0);
                // stay clear of the clamp edges at ±0.5
                if u.abs() < 0.5 { u * 0.8 } else { u.signum() * (0.6 + u.abs() * 0.5) }
            })],
            Relu | LeakyRelu => vec![away_from(r, &s, 0.0, 0.05)],
            Log => vec![uniform(r, &s, 0.2, 2.0)],
            Conv | ConvStride2 | ConvRelu => vec![
                uniform(r, &[2, 3, 8, 8], -1.0, 1.0),
                uniform(r, &[4, 3, 3, 3], -0.5, 0.5),
                uniform(r, &[4], -0.5, 0.5),
            ],
            Conv1x1 => vec![
                uniform(r, &[2, 3, 8, 8], -1.0, 1.0),
                uniform(r, &[4, 3, 1, 1], -0.5, 0.5),
                uniform(r, &[4], -0.5, 0.5),
            ],
            Pool => vec![uniform(r, &[2, 3, 8, 8], -1.0, 1.0)],
            Upsample | SumAxes | MeanAxes => vec![uniform(r, &s, -1.0, 1.0)],
            Concat => vec![uniform(r, &[2, 2, 4, 4], -1.0, 1.0), uniform(r, &s, -1.0, 1.0)],
            Slice => vec![uniform(r, &[2, 5, 4, 4], -1.0, 1.0)],
            InstanceNorm => vec![
                uniform(r, &[2, 3, 5, 5], -1.0, 1.0),
                uniform(r, &[3], 0.5, 1.5),
                uniform(r, &[3], -0.5, 0.5),
            ],
            SegLoss => vec![uniform(r, &[2, 1, 6, 6], 0.05, 0.95), binary(r, &[2, 1, 6, 6])],
            Ssim | ContrastiveLoss => {
                vec![uniform(r, &[2, 1, 8, 8], 0.1, 0.9), uniform(r, &[2, 1, 8, 8], 0.1, 0.9)]
            }
            EncoderLoss => {
                let mut enc = Network::build_encoder(enc_config()).expect("valid config");
                let mut dec = Network::build_decoder(dec_config()).expect("valid config");
                enc.init_parameters(seed);
                dec.init_parameters(seed + 1000);
                let mut v = params_f64(&enc);
                v.extend(params_f64(&dec));
                v.push(uniform(r, &[2, 3, 16, 16], 0.0, 1.0));
                v.push(uniform(r, &[2, 3, 16, 16], 0.0, 1.0));
                v.push(binary(r, &[2, 1, 16, 16]));
                v
            }
            BaselineLoss => {
                let mut net = Network::build_encoder(baseline_config()).expect("valid config");
                net.init_parameters(seed);
                let mut v = params_f64(&net);
                v.push(uniform(r, &[2, 1, 16, 16], 0.0, 1.0));
                v.push(binary(r, &[2, 1, 16, 16]));
                v
            }
        }
    }

    pub fn build<T: Real>(self, g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
        use Case::*;
        let out = match self {
            Add => g.add(v[0], v[1])?,
            Sub => g.sub(v[0], v[1])?,
            Mul => g.mul(v[0], v[1])?,
            Div => g.div(v[0], v[1])?,
            Scale => g.scale(v[0], T::from_f64(-1.7)),
            AddScalar => g.add_scalar(v[0], T::from_f64(0.3)),
            Clamp => g.clamp(v[0], T::from_f64(-0.5), T::from_f64(0.5)),
            Relu => g.relu(v[0]),
            LeakyRelu => g.leaky_relu(v[0]),
            Sigmoid => g.sigmoid(v[0]),
            Log => g.log(v[0])?,
            Conv => g.conv2d(v[0], v[1], v[2], 1, 1)?,
            ConvStride2 => g.conv2d(v[0], v[1], v[2], 2, 1)?,
            Conv1x1 => g.conv2d(v[0], v[1], v[2], 1, 0)?,
            ConvRelu => {
                let c = g.conv2d(v[0], v[1], v[2], 1, 1)?;
                g.relu(c)
            }
            Pool => g.pool_avg2(v[0])?,
            Upsample => g.upsample_nearest2(v[0])?,
            Concat => g.concat_channels(v[0], v[1])?,
            Slice => g.slice_channels(v[0], 1, 3)?,
            SumAxes => g.sum(v[0], &[2, 3])?,
            MeanAxes => g.mean(v[0], &[1])?,
            InstanceNorm => g.instance_norm(v[0], v[1], v[2])?,
            SegLoss => return Ok(seg_loss(g, v[0], v[1])?.total),
            Ssim => ssim_per_sample(g, v[0], v[1])?,
            ContrastiveLoss => return Ok(contrastive_loss(g, v[0], v[1])?.total),
            EncoderLoss => {
                let enc = Network::build_encoder(enc_config())?;
                let dec = Network::build_decoder(dec_config())?;
                let ne = enc.params().len();
                let nd = dec.params().len();
                let eb = Bound::from_vars(v[..ne].to_vec());
                let db = Bound::from_vars(v[ne..ne + nd].to_vec());
                let (x, x_aug, y) = (v[ne + nd], v[ne + nd + 1], v[ne + nd + 2]);
                return Ok(total_loss(g, &enc, &eb, &dec, &db, x, x_aug, y, 1.0)?.0);
            }
            BaselineLoss => {
                let net = Network::build_encoder(baseline_config())?;
                let n = net.params().len();
                let b = Bound::from_vars(v[..n].to_vec());
                return Ok(supervised_loss(g, &net, &b, v[n], v[n + 1])?.0);
            }
        };
        weighted_sum(g, out)
    }
}

fn analytic<T: Real>(case: Case, point: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
    let mut g = Graph::<T>::new();
    let vars: Vec<Var> = point.iter().map(|t| g.param(t.cast())).collect();
    let root = case.build(&mut g, &vars)?;
    g.backward(root)?;
    Ok(vars
        .iter()
        .zip(point)
        .map(|(&v, t)| g.grad(v).map(|d| d.cast()).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect())
}

/// Central-difference check of `case` at the inputs drawn from `seed`.
pub fn check_case(case: Case, seed: u64, precision: Precision) -> Result<GradCheckReport> {
    let mut point = case.inputs(seed);
    if precision == Precision::F32 {
        point = point.iter().map(|t| t.cast::<f32>().cast()).collect();
    }
    let grads = match precision {
        Precision::F64 => analytic::<f64>(case, &point)?,
        Precision::F32 => analytic::<f32>(case, &point)?,
    };
    let scale = grads
        .iter()
        .flat_map(|t| t.data().iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let tolerance = match precision {
        Precision::F64 => case.tolerance(),
        Precision::F32 => F32_TOLERANCE,
    };
    let opts = GradCheckOptions {
        step: 1e-6,
        tolerance,
        abs_floor: (1e-3 * scale).max(1e-12),
        max_coords_per_input: Some(case.coords_per_input()),
    };
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let root = case.build(&mut g, &vars)?;
        Ok(g.value(root).data()[0])
    };
    compare_gradients(eval, &grads, &point, &opts)
}

// ---------------------------------------------------------------------------
// Classical oracles

/// Otsu by exhaustive search: for every threshold level `t` the classes are
/// `{≤ t}` and `{> t}`; the between-class variance
/// `(S0·n1 − S1·n0)² / (n0·n1)` is compared in exact integer arithmetic.
/// Returns the smallest maximizing level.
pub fn otsu_brute_force(gray: &Image) -> u8 {
    let levels: Vec<u64> = gray.plane(0).iter().map(|&v| quantize(v) as u64).collect();
    let mut best: Option<(u8, u128, u128)> = None;
    for t in 0..=255u64 {
        let (mut n0, mut s0, mut n1, mut s1) = (0u128, 0u128, 0u128, 0u128);
        for &l in &levels {
            if l <= t {
                n0 += 1;
                s0 += l as u128;
            } else {
                n1 += 1;
                s1 += l as u128;
            }
        }
        let (num, den) = if n0 == 0 || n1 == 0 {
            (0, 1)
        } else {
            let d = (s0 * n1).abs_diff(s1 * n0);
            (d * d, n0 * n1)
        };
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    best.expect("256 candidates").0
}

/// Single-tile CLAHE written as a plain scalar loop over 8-bit levels: clip
/// every bin at `clip · n / 256`, spread the excess evenly, map each pixel
/// through the normalized cumulative histogram.
pub fn clahe_single_tile(gray: &Image, clip: f64) -> Vec<f64> {
    let hist = histogram256(gray);
    let n = gray.pixels() as f64;
    let limit = clip * n / 256.0;
    let mut excess = 0.0;
    let clipped: Vec<f64> = hist
        .iter()
        .map(|&c| {
            let c = c as f64;
            if c > limit {
                excess += c - limit;
                limit
            } else {
                c
            }
        })
        .collect();
    let mut lut = [0.0f64; 256];
    let mut acc = 0.0;
    for level in 0..256 {
        acc += clipped[level] + excess / 256.0;
        lut[level] = (acc / n).min(1.0);
    }
    gray.plane(0).iter().map(|&v| lut[quantize(v) as usize]).collect()
}

pub fn random_gray(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    // a mixture of two populations so the histograms have structure
    let split: f32 = rng.gen_range(0.2..0.8);
    let data = (0..w * h)
        .map(|_| {
            if rng.gen::<f32>() < split {
                rng.gen_range(0.0..0.5f32).powi(2)
            } else {
                rng.gen_range(0.3..1.0f32)
            }
        })
        .collect();
    Image::new(w, h, 1, data).expect("values in range")
}

// ---------------------------------------------------------------------------
// Optimizer

/// `w` after each of five steps on `(w - 3)^2` from `w = 0` with lr 0.1,
/// evaluated by hand at 50 significant digits.
pub const ADAM_TRAJECTORY: [f64; 5] = [
    9.99999998333333390e-02,
    1.99897292585211717e-01,
    2.99618476549253387e-01,
    3.99086468944215733e-01,
    4.98220543772714297e-01,
];

// ---------------------------------------------------------------------------
// Phantom benchmark

pub const PHANTOM_COUNT: usize = 16;
pub const PHANTOM_TRAIN: usize = 12;
pub const PHANTOM_SIZE: usize = 64;
/// Contrast shifts applied to held-out phantoms at test time.
pub const TEST_GAMMAS: [f32; 3] = [1.0, 0.6, 1.6];

pub fn phantom_samples(seed: u64, count: usize, size: usize) -> Vec<Sample> {
    let params = PhantomParams {
        count,
        size,
        seed,
        ..Default::default()
    };
    generate_phantoms(&params)
        .expect("valid phantom parameters")
        .into_iter()
        .enumerate()
        .map(|(i, p)| Sample {
            id: format!("phantom_{i:04}"),
            image: p.image,
            label: p.label,
            fov: Image::filled(size, size, 1, 1.0),
        })
        .collect()
}

/// Training budget used for every phantom benchmark run.
pub fn phantom_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.seed = seed;
    cfg.epochs = 20;
    cfg.batch_size = 4;
    cfg.patch_size = 32;
    cfg.patches_per_image = 16;
    cfg.lr_init = 1e-3;
    cfg.lr_decay_factor = 1.0;
    cfg.clahe_tiles = (1, 1);
    cfg.encoder_base = 16;
    cfg.encoder_depth = 3;
    cfg.decoder_base = 4;
    cfg.decoder_depth = 2;
    cfg.checkpoint_every = 1000;
    cfg
}

// ---------------------------------------------------------------------------
// Plain supervised reference loop

pub struct OracleRun {
    /// Loss of every step, in order.
    pub losses: Vec<f32>,
    pub encoder: Network,
    pub decoder: Network,
}

/// Encoder → decoder trained on the segmentation loss alone with a
/// textbook Adam, following the trainer's documented data protocol with
/// augmentation off. Shares no code with the trainer beyond the network
/// forward pass, the loss function and the patch sampler.
pub fn oracle_supervised_run(cfg: &TrainConfig, samples: &[Sample]) -> Result<OracleRun> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    let mut encoder = Network::build_encoder(cfg.encoder_config())?;
    let mut decoder = Network::build_decoder(cfg.decoder_config())?;
    encoder.init_parameters(cfg.seed + 1);
    decoder.init_parameters(cfg.seed + 2);
    assert_eq!(encoder.role(), Role::Encoder);

    let count: usize = encoder.params().len() + decoder.params().len();
    let mut m: Vec<Vec<f32>> = Vec::with_capacity(count);
    let mut v: Vec<Vec<f32>> = Vec::with_capacity(count);
    for p in encoder.params().iter().chain(decoder.params()) {
        m.push(vec![0.0; p.tensor.numel()]);
        v.push(vec![0.0; p.tensor.numel()]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::new();
    let mut t = 0i32;
    for epoch in 0..cfg.epochs {
        let lr = (cfg.lr_init * cfg.lr_decay_factor.powi((epoch / cfg.lr_decay_every) as i32)).max(cfg.lr_min);
        let mut order = Vec::new();
        for i in 0..samples.len() {
            for _ in 0..cfg.patches_per_image {
                order.push(i);
            }
        }
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (&i, &s) in batch.iter().zip(&seeds) {
                let mut child = ChaCha8Rng::seed_from_u64(s);
                let s = &samples[i];
                let mut p = sample_patches(&s.image, &s.label, &s.fov, cfg.patch_size, 1, &mut child)?;
                let p = p.pop().expect("one patch");
                xs.push(p.image);
                ys.push(p.label);
            }

            let mut g = Graph::<f32>::new();
            let eb = encoder.bind(&mut g, true);
            let db = decoder.bind(&mut g, true);
            let x = g.constant(Image::stack(&xs.iter().collect::<Vec<_>>())?);
            let y = g.constant(Image::stack(&ys.iter().collect::<Vec<_>>())?);
            let z = encoder.forward(&mut g, &eb, x)?;
            let yhat = decoder.forward(&mut g, &db, z)?;
            let loss = seg_loss(&mut g, yhat, y)?.total;
            losses.push(g.value(loss).data()[0]);
            g.backward(loss)?;

            t += 1;
            let c1 = 1.0 - B1.powi(t);
            let c2 = 1.0 - B2.powi(t);
            let vars: Vec<Var> = eb.vars().iter().chain(db.vars()).copied().collect();
            let grads: Vec<Vec<f32>> = vars.iter().map(|&var| g.grad(var).expect("connected").data().to_vec()).collect();
            let params = encoder.params_mut().iter_mut().chain(decoder.params_mut().iter_mut());
            for (k, p) in params.enumerate() {
                for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
                    let gj = grads[k][j] as f64;
                    let mj = B1 * m[k][j] as f64 + (1.0 - B1) * gj;
                    let vj = B2 * v[k][j] as f64 + (1.0 - B2) * gj * gj;
                    m[k][j] = mj as f32;
                    v[k][j] = vj as f32;
                    *w = (*w as f64 - lr * (mj / c1) / ((vj / c2).sqrt() + EPS)) as f32;
                }
            }
        }
    }
    Ok(OracleRun { losses, encoder, decoder })
}
