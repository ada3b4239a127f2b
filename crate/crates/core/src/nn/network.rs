use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FinalActivation {
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Encoder,
    Decoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    /// Number of down/up levels.
    pub depth: usize,
    pub final_activation: FinalActivation,
}

impl NetworkConfig {
    /// Fundus RGB → 1-channel latent.
    pub const fn encoder_default() -> Self {
        NetworkConfig {
            in_channels: 3,
            out_channels: 1,
            base_channels: 32,
            depth: 4,
            final_activation: FinalActivation::Sigmoid,
        }
    }

    /// Latent → 1-channel vessel probability. Deliberately smaller than the encoder.
    pub const fn decoder_default() -> Self {
        NetworkConfig {
            in_channels: 1,
            out_channels: 1,
            base_channels: 16,
            depth: 3,
            final_activation: FinalActivation::Sigmoid,
        }
    }

    pub fn with_base(mut self, base_channels: usize, depth: usize) -> Self {
        self.base_channels = base_channels;
        self.depth = depth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("network depth must be at least 1".into()));
        }
        if self.base_channels < 4 {
            return Err(Error::Config(format!(
                "base_channels must be at least 4, got {}",
                self.base_channels
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Spatial sizes must divide by `2^depth`, and the coarsest level needs
    /// at least two pixels for instance normalization.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let f = self.divisor();
        if h == 0 || w == 0 || !h.is_multiple_of(f) || !w.is_multiple_of(f) {
            return Err(Error::invalid(
                "network",
                format!("input {h}x{w} is not divisible by 2^{} = {f}", self.depth),
            ));
        }
        if (h / f) * (w / f) < 2 {
            return Err(Error::invalid(
                "network",
                format!("input {h}x{w} leaves a single pixel at depth {}", self.depth),
            ));
        }
        Ok(())
    }

    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    NormGain,
    NormBias,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    /// `level.block.layer.kind`, e.g. `enc1.res.conv2.weight`.
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    role: Role,
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

/// Graph leaves for a network's parameters, in [`Network::params`] order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }
}

struct LayoutBuilder {
    params: Vec<Param>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, kind: ParamKind, shape: Vec<usize>) {
        let init = match kind {
            ParamKind::NormGain => 1.0,
            _ => 0.0,
        };
        self.params.push(Param {
            name,
            kind,
            tensor: Tensor::full(shape, init),
        });
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        self.push(format!("{prefix}.weight"), ParamKind::ConvWeight, vec![cout, cin, k, k]);
        self.push(format!("{prefix}.bias"), ParamKind::ConvBias, vec![cout]);
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.gain"), ParamKind::NormGain, vec![c]);
        self.push(format!("{prefix}.bias"), ParamKind::NormBias, vec![c]);
    }

    fn res_block(&mut self, level: &str, cin: usize, cout: usize) {
        self.conv(&format!("{level}.res.conv1"), cin, cout, 3);
        self.norm(&format!("{level}.res.norm1"), cout);
        self.conv(&format!("{level}.res.conv2"), cout, cout, 3);
        self.norm(&format!("{level}.res.norm2"), cout);
        if cin != cout {
            self.conv(&format!("{level}.res.skip"), cin, cout, 1);
        }
    }
}

impl Network {
    fn build(config: NetworkConfig, role: Role) -> Result<Self> {
        config.validate()?;
        let mut b = LayoutBuilder { params: Vec::new() };
        let d = config.depth;
        for l in 0..d {
            let cin = if l == 0 {
                config.in_channels
            } else {
                config.channels(l - 1)
            };
            b.res_block(&format!("enc{l}"), cin, config.channels(l));
        }
        b.res_block("mid", config.channels(d - 1), config.channels(d));
        for l in (0..d).rev() {
            b.conv(&format!("dec{l}.up.conv"), config.channels(l + 1), config.channels(l), 3);
            b.res_block(&format!("dec{l}"), 2 * config.channels(l), config.channels(l));
        }
        // Normalising the head input keeps the initial logits near unit
        // scale; residual sums otherwise grow them enough to saturate the sigmoid.
        b.norm("head.proj.norm", config.channels(0));
        b.conv("head.proj.conv", config.channels(0), config.out_channels, 1);
        Ok(Self::from_params(config, role, b.params))
    }

    fn from_params(config: NetworkConfig, role: Role, params: Vec<Param>) -> Self {
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Network {
            config,
            role,
            params,
            index,
        }
    }

    /// Encoder `E`: residual U-Net ending in a sigmoid head so the latent lies in `[0, 1]`.
    pub fn build_encoder(config: NetworkConfig) -> Result<Self> {
        Self::build(config, Role::Encoder)
    }

    pub fn build_decoder(config: NetworkConfig) -> Result<Self> {
        Self::build(config, Role::Decoder)
    }

    /// Rebuilds a network from stored tensors; names and shapes must match
    /// the layout implied by `config`.
    pub fn from_tensors(
        config: NetworkConfig,
        role: Role,
        tensors: Vec<(String, Tensor<f32>)>,
    ) -> Result<Self> {
        let mut net = Self::build(config, role)?;
        if tensors.len() != net.params.len() {
            return Err(Error::Config(format!(
                "expected {} tensors for this configuration, found {}",
                net.params.len(),
                tensors.len()
            )));
        }
        for (p, (name, t)) in net.params.iter_mut().zip(tensors) {
            if p.name != name || p.tensor.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "tensor `{name}` {:?} does not match layout entry `{}` {:?}",
                    t.shape(),
                    p.name,
                    p.tensor.shape()
                )));
            }
            p.tensor = t;
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// He-normal conv kernels (`std = sqrt(2 / fan_in)`), zero biases, unit norm gains.
    pub fn init_parameters(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.params {
            match p.kind {
                ParamKind::ConvWeight => {
                    let s = p.tensor.shape();
                    let fan_in = s[1] * s[2] * s[3];
                    let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt())
                        .expect("positive std");
                    for v in p.tensor.data_mut() {
                        *v = normal.sample(&mut rng) as f32;
                    }
                }
                ParamKind::ConvBias | ParamKind::NormBias => p.tensor.data_mut().fill(0.0),
                ParamKind::NormGain => p.tensor.data_mut().fill(1.0),
            }
        }
    }

    /// Adds the parameters to `g` as leaves (trainable or constant).
    pub fn bind<T: Real>(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let t = p.tensor.cast::<T>();
                if trainable {
                    g.param(t)
                } else {
                    g.constant(t)
                }
            })
            .collect();
        Bound { vars }
    }

    fn var(&self, bound: &Bound, name: &str) -> Var {
        bound.vars[self.index[name]]
    }

    fn conv<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var, prefix: &str) -> Result<Var> {
        let w = self.var(b, &format!("{prefix}.weight"));
        let bias = self.var(b, &format!("{prefix}.bias"));
        let k = g.shape(w)[2];
        g.conv2d(x, w, bias, 1, k / 2)
    }

    fn norm<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var, prefix: &str) -> Result<Var> {
        let gain = self.var(b, &format!("{prefix}.gain"));
        let bias = self.var(b, &format!("{prefix}.bias"));
        g.instance_norm(x, gain, bias)
    }

    fn res_block<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var, level: &str) -> Result<Var> {
        let mut h = self.conv(g, b, x, &format!("{level}.res.conv1"))?;
        h = self.norm(g, b, h, &format!("{level}.res.norm1"))?;
        h = g.leaky_relu(h);
        h = self.conv(g, b, h, &format!("{level}.res.conv2"))?;
        h = self.norm(g, b, h, &format!("{level}.res.norm2"))?;
        h = g.leaky_relu(h);
        let skip_name = format!("{level}.res.skip");
        let shortcut = if self.index.contains_key(&format!("{skip_name}.weight")) {
            self.conv(g, b, x, &skip_name)?
        } else {
            x
        };
        g.add(h, shortcut)
    }

    /// Runs the U-Net on a `[B, in_channels, H, W]` input.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, bound: &Bound, input: Var) -> Result<Var> {
        if bound.vars.len() != self.params.len() {
            return Err(Error::invalid("forward", "bound parameters belong to a different network"));
        }
        let (_, c, h, w) = g
            .value(input)
            .dims4()
            .ok_or_else(|| Error::invalid("forward", format!("input must be rank 4, got {:?}", g.shape(input))))?;
        if c != self.config.in_channels {
            return Err(Error::invalid(
                "forward",
                format!("expected {} input channels, got {c}", self.config.in_channels),
            ));
        }
        self.config.check_input(h, w)?;

        let d = self.config.depth;
        let mut skips = Vec::with_capacity(d);
        let mut x = input;
        for l in 0..d {
            x = self.res_block(g, bound, x, &format!("enc{l}"))?;
            skips.push(x);
            x = g.pool_avg2(x)?;
        }
        x = self.res_block(g, bound, x, "mid")?;
        for l in (0..d).rev() {
            x = g.upsample_nearest2(x)?;
            x = self.conv(g, bound, x, &format!("dec{l}.up.conv"))?;
            x = g.leaky_relu(x);
            x = g.concat_channels(skips[l], x)?;
            x = self.res_block(g, bound, x, &format!("dec{l}"))?;
        }
        x = self.norm(g, bound, x, "head.proj.norm")?;
        x = self.conv(g, bound, x, "head.proj.conv")?;
        Ok(match self.config.final_activation {
            FinalActivation::Sigmoid => g.sigmoid(x),
        })
    }

    /// Forward pass without gradient tracking.
    pub fn infer(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::<f32>::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(input.clone());
        let y = self.forward(&mut g, &bound, x)?;
        Ok(g.value(y).clone())
    }
}
