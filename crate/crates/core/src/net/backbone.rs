use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{
    bn_backward, bn_forward_eval, bn_forward_train, conv_backward, conv_forward, gap_backward, gap_forward,
    maxpool_backward, maxpool_forward, relu_backward, relu_inplace, BnCache, ConvCache, ConvGeom, PoolCache,
    Tensor,
};
use crate::error::{Error, Result};
use crate::imaging::NETWORK_INPUT_SIDE;

/// Reduced input side available to the micro backbone.
pub const MICRO_INPUT_SIDE: usize = 56;
pub const MICRO_DEFAULT_FEATURES: usize = 64;

/// Residual backbone family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Depth {
    R18,
    R34,
    R50,
    R101,
    R152,
    /// Three basic blocks; for tests and desk-scale experiments.
    Micro,
}

impl Depth {
    pub const ALL: [Depth; 6] = [Depth::R18, Depth::R34, Depth::R50, Depth::R101, Depth::R152, Depth::Micro];

    pub fn code(self) -> u32 {
        match self {
            Depth::R18 => 18,
            Depth::R34 => 34,
            Depth::R50 => 50,
            Depth::R101 => 101,
            Depth::R152 => 152,
            Depth::Micro => 0,
        }
    }

    pub fn from_code(code: u32) -> Option<Depth> {
        Depth::ALL.into_iter().find(|d| d.code() == code)
    }

    /// Width of the pooled feature vector for the standard depths.
    pub fn standard_feature_dim(self) -> Option<usize> {
        match self {
            Depth::R18 | Depth::R34 => Some(512),
            Depth::R50 | Depth::R101 | Depth::R152 => Some(2048),
            Depth::Micro => None,
        }
    }

    fn stages(self) -> Option<(bool, [usize; 4])> {
        match self {
            Depth::R18 => Some((false, [2, 2, 2, 2])),
            Depth::R34 => Some((false, [3, 4, 6, 3])),
            Depth::R50 => Some((true, [3, 4, 6, 3])),
            Depth::R101 => Some((true, [3, 4, 23, 3])),
            Depth::R152 => Some((true, [3, 8, 36, 3])),
            Depth::Micro => None,
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Depth::Micro => f.write_str("micro"),
            d => write!(f, "{}", d.code()),
        }
    }
}

impl FromStr for Depth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "micro" => Ok(Depth::Micro),
            other => other
                .parse::<u32>()
                .ok()
                .and_then(Depth::from_code)
                .filter(|d| *d != Depth::Micro)
                .ok_or_else(|| Error::Config(format!("unknown depth {other:?} (18, 34, 50, 101, 152, micro)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BackboneConfig {
    pub depth: Depth,
    pub feature_dim: usize,
    pub input_side: usize,
}

impl BackboneConfig {
    /// Standard configuration: derived feature width, 224×224 input.
    pub fn new(depth: Depth) -> Self {
        BackboneConfig {
            depth,
            feature_dim: depth.standard_feature_dim().unwrap_or(MICRO_DEFAULT_FEATURES),
            input_side: NETWORK_INPUT_SIDE,
        }
    }

    pub fn micro(feature_dim: usize, input_side: usize) -> Result<Self> {
        let c = BackboneConfig { depth: Depth::Micro, feature_dim, input_side };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        match self.depth.standard_feature_dim() {
            Some(fd) => {
                if self.feature_dim != fd {
                    return Err(Error::Config(format!(
                        "depth {} produces {fd} features, not {}",
                        self.depth, self.feature_dim
                    )));
                }
                if self.input_side != NETWORK_INPUT_SIDE {
                    return Err(Error::Config(format!(
                        "depth {} takes {NETWORK_INPUT_SIDE}x{NETWORK_INPUT_SIDE} input, not {}",
                        self.depth, self.input_side
                    )));
                }
            }
            None => {
                if self.feature_dim < 4 || self.feature_dim % 4 != 0 {
                    return Err(Error::Config(format!(
                        "micro feature_dim must be a positive multiple of 4, got {}",
                        self.feature_dim
                    )));
                }
                if self.input_side != NETWORK_INPUT_SIDE && self.input_side != MICRO_INPUT_SIDE {
                    return Err(Error::Config(format!(
                        "micro input side must be {NETWORK_INPUT_SIDE} or {MICRO_INPUT_SIDE}, got {}",
                        self.input_side
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A named, flat, row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    fn new(name: String, shape: Vec<usize>, fill: f64) -> Self {
        let len = shape.iter().product();
        NamedTensor { name, shape, data: vec![fill; len] }
    }
}

/// Trainable parameters plus non-trainable buffers (batch-norm running
/// statistics).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub params: Vec<NamedTensor>,
    pub buffers: Vec<NamedTensor>,
}

impl ParamSet {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|t| vec![0.0; t.data.len()]).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().chain(&self.buffers).all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    fn add_param(&mut self, name: String, shape: Vec<usize>, fill: f64) -> usize {
        self.params.push(NamedTensor::new(name, shape, fill));
        self.params.len() - 1
    }

    fn add_buffer(&mut self, name: String, shape: Vec<usize>, fill: f64) -> usize {
        self.buffers.push(NamedTensor::new(name, shape, fill));
        self.buffers.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ConvLayer {
    pub geom: ConvGeom,
    pub weight: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BnLayer {
    pub gamma: usize,
    pub beta: usize,
    pub mean: usize,
    pub var: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Block {
    Basic { c1: ConvLayer, b1: BnLayer, c2: ConvLayer, b2: BnLayer, down: Option<(ConvLayer, BnLayer)> },
    Bottleneck {
        c1: ConvLayer,
        b1: BnLayer,
        c2: ConvLayer,
        b2: BnLayer,
        c3: ConvLayer,
        b3: BnLayer,
        down: Option<(ConvLayer, BnLayer)>,
    },
}

/// Convolutional part of a residual network: stem, max pool, residual
/// blocks, global average pool. Holds parameter indices only.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    stem: (ConvLayer, BnLayer),
    blocks: Vec<Block>,
    feature_dim: usize,
}

fn conv(set: &mut ParamSet, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> ConvLayer {
    let geom = ConvGeom { cin, cout, k, stride, pad: k / 2 };
    let weight = set.add_param(format!("{name}.weight"), vec![cout, cin, k, k], 0.0);
    ConvLayer { geom, weight }
}

fn bn(set: &mut ParamSet, name: &str, c: usize) -> BnLayer {
    BnLayer {
        gamma: set.add_param(format!("{name}.gamma"), vec![c], 1.0),
        beta: set.add_param(format!("{name}.beta"), vec![c], 0.0),
        mean: set.add_buffer(format!("{name}.running_mean"), vec![c], 0.0),
        var: set.add_buffer(format!("{name}.running_var"), vec![c], 1.0),
    }
}

fn basic(set: &mut ParamSet, name: &str, cin: usize, cout: usize, stride: usize) -> Block {
    let c1 = conv(set, &format!("{name}.conv1"), cin, cout, 3, stride);
    let b1 = bn(set, &format!("{name}.bn1"), cout);
    let c2 = conv(set, &format!("{name}.conv2"), cout, cout, 3, 1);
    let b2 = bn(set, &format!("{name}.bn2"), cout);
    let down = (stride != 1 || cin != cout).then(|| {
        (conv(set, &format!("{name}.down.conv"), cin, cout, 1, stride), bn(set, &format!("{name}.down.bn"), cout))
    });
    Block::Basic { c1, b1, c2, b2, down }
}

fn bottleneck(set: &mut ParamSet, name: &str, cin: usize, mid: usize, stride: usize) -> Block {
    let cout = mid * 4;
    let c1 = conv(set, &format!("{name}.conv1"), cin, mid, 1, 1);
    let b1 = bn(set, &format!("{name}.bn1"), mid);
    let c2 = conv(set, &format!("{name}.conv2"), mid, mid, 3, stride);
    let b2 = bn(set, &format!("{name}.bn2"), mid);
    let c3 = conv(set, &format!("{name}.conv3"), mid, cout, 1, 1);
    let b3 = bn(set, &format!("{name}.bn3"), cout);
    let down = (stride != 1 || cin != cout).then(|| {
        (conv(set, &format!("{name}.down.conv"), cin, cout, 1, stride), bn(set, &format!("{name}.down.bn"), cout))
    });
    Block::Bottleneck { c1, b1, c2, b2, c3, b3, down }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

#[derive(Debug)]
pub(crate) enum Entry {
    Conv(ConvCache),
    Bn(BnCache),
    Relu(Vec<bool>),
    Pool(PoolCache),
    Gap([usize; 4]),
}

/// Forward-pass record consumed by the backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) entries: Vec<Entry>,
    /// `(running mean buffer, running var buffer, batch mean, batch var, count)`.
    pub(crate) bn_stats: Vec<(usize, usize, Vec<f64>, Vec<f64>, usize)>,
}

impl Tape {
    /// Hash of every ReLU on/off pattern and max-pool winner: equal
    /// signatures mean the forward pass took the same piecewise-linear branch.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for e in &self.entries {
            match e {
                Entry::Relu(mask) => mask.hash(&mut h),
                Entry::Pool(cache) => cache.argmax().hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Exponential running-statistics update after a training step.
    pub fn update_running_stats(&self, set: &mut ParamSet, momentum: f64) {
        for (mean_buf, var_buf, mean, var, count) in &self.bn_stats {
            let unbias = if *count > 1 { *count as f64 / (*count as f64 - 1.0) } else { 1.0 };
            for (r, m) in set.buffers[*mean_buf].data.iter_mut().zip(mean) {
                *r = (1.0 - momentum) * *r + momentum * m;
            }
            for (r, v) in set.buffers[*var_buf].data.iter_mut().zip(var) {
                *r = (1.0 - momentum) * *r + momentum * v * unbias;
            }
        }
    }
}

impl Backbone {
    /// Registers all backbone tensors into `set` and returns the layout.
    pub fn build(config: &BackboneConfig, set: &mut ParamSet) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::new();
        let stem = match config.depth.stages() {
            Some((bottle, counts)) => {
                let stem = (conv(set, "stem.conv", 3, 64, 7, 2), bn(set, "stem.bn", 64));
                let mut cin = 64;
                for (stage, (&count, width)) in counts.iter().zip([64, 128, 256, 512]).enumerate() {
                    for i in 0..count {
                        let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                        let name = format!("layer{}.{}", stage + 1, i);
                        if bottle {
                            blocks.push(bottleneck(set, &name, cin, width, stride));
                            cin = width * 4;
                        } else {
                            blocks.push(basic(set, &name, cin, width, stride));
                            cin = width;
                        }
                    }
                }
                stem
            }
            None => {
                let fd = config.feature_dim;
                let widths = [fd / 4, fd / 2, fd];
                let k = if config.input_side == MICRO_INPUT_SIDE { 3 } else { 7 };
                let stem = (conv(set, "stem.conv", 3, widths[0], k, 2), bn(set, "stem.bn", widths[0]));
                blocks.push(basic(set, "block1", widths[0], widths[0], 1));
                blocks.push(basic(set, "block2", widths[0], widths[1], 2));
                blocks.push(basic(set, "block3", widths[1], widths[2], 2));
                stem
            }
        };
        Ok(Backbone { stem, blocks, feature_dim: config.feature_dim })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Kaiming-normal (fan-in) conv weights; batch-norm scales at one.
    pub(crate) fn init<R: Rng + ?Sized>(&self, set: &mut ParamSet, rng: &mut R) {
        let mut convs = vec![self.stem.0];
        for b in &self.blocks {
            match b {
                Block::Basic { c1, c2, down, .. } => {
                    convs.extend([*c1, *c2]);
                    convs.extend(down.map(|d| d.0));
                }
                Block::Bottleneck { c1, c2, c3, down, .. } => {
                    convs.extend([*c1, *c2, *c3]);
                    convs.extend(down.map(|d| d.0));
                }
            }
        }
        for c in convs {
            let fan_in = (c.geom.cin * c.geom.k * c.geom.k) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
            for v in set.params[c.weight].data.iter_mut() {
                *v = normal.sample(rng);
            }
        }
    }

    /// Pooled features, `(batch, feature_dim)` row-major.
    pub fn forward(&self, set: &ParamSet, x: &Tensor, mode: Mode, mut tape: Option<&mut Tape>) -> Vec<f64> {
        let mut h = self.conv(&self.stem.0, set, x, &mut tape);
        h = self.bn(&self.stem.1, set, &h, mode, &mut tape);
        self.relu(&mut h, &mut tape);
        let (pooled, pc) = maxpool_forward(&h);
        if let Some(t) = tape.as_deref_mut() {
            t.entries.push(Entry::Pool(pc));
        }
        h = pooled;
        for block in &self.blocks {
            h = self.block_forward(block, set, &h, mode, &mut tape);
        }
        if let Some(t) = tape.as_deref_mut() {
            t.entries.push(Entry::Gap(h.shape));
        }
        gap_forward(&h)
    }

    fn conv(&self, l: &ConvLayer, set: &ParamSet, x: &Tensor, tape: &mut Option<&mut Tape>) -> Tensor {
        let (y, cache) = conv_forward(&l.geom, &set.params[l.weight].data, x, tape.is_some());
        if let (Some(t), Some(c)) = (tape.as_deref_mut(), cache) {
            t.entries.push(Entry::Conv(c));
        }
        y
    }

    fn bn(&self, l: &BnLayer, set: &ParamSet, x: &Tensor, mode: Mode, tape: &mut Option<&mut Tape>) -> Tensor {
        let (gamma, beta) = (&set.params[l.gamma].data, &set.params[l.beta].data);
        match mode {
            Mode::Eval => bn_forward_eval(x, gamma, beta, &set.buffers[l.mean].data, &set.buffers[l.var].data),
            Mode::Train => {
                let (y, cache) = bn_forward_train(x, gamma, beta);
                if let Some(t) = tape.as_deref_mut() {
                    t.bn_stats.push((
                        l.mean,
                        l.var,
                        cache.batch_mean.clone(),
                        cache.batch_var.clone(),
                        x.batch() * x.plane(),
                    ));
                    t.entries.push(Entry::Bn(cache));
                }
                y
            }
        }
    }

    fn relu(&self, x: &mut Tensor, tape: &mut Option<&mut Tape>) {
        let mask = relu_inplace(x);
        if let Some(t) = tape.as_deref_mut() {
            t.entries.push(Entry::Relu(mask));
        }
    }

    fn block_forward(&self, block: &Block, set: &ParamSet, x: &Tensor, mode: Mode, tape: &mut Option<&mut Tape>) -> Tensor {
        let (mut out, down) = match block {
            Block::Basic { c1, b1, c2, b2, down } => {
                let mut h = self.conv(c1, set, x, tape);
                h = self.bn(b1, set, &h, mode, tape);
                self.relu(&mut h, tape);
                h = self.conv(c2, set, &h, tape);
                (self.bn(b2, set, &h, mode, tape), down)
            }
            Block::Bottleneck { c1, b1, c2, b2, c3, b3, down } => {
                let mut h = self.conv(c1, set, x, tape);
                h = self.bn(b1, set, &h, mode, tape);
                self.relu(&mut h, tape);
                h = self.conv(c2, set, &h, tape);
                h = self.bn(b2, set, &h, mode, tape);
                self.relu(&mut h, tape);
                h = self.conv(c3, set, &h, tape);
                (self.bn(b3, set, &h, mode, tape), down)
            }
        };
        match down {
            Some((dc, db)) => {
                let s = self.conv(dc, set, x, tape);
                let s = self.bn(db, set, &s, mode, tape);
                out.data.iter_mut().zip(&s.data).for_each(|(o, v)| *o += v);
            }
            None => out.data.iter_mut().zip(&x.data).for_each(|(o, v)| *o += v),
        }
        self.relu(&mut out, tape);
        out
    }

    /// Accumulates parameter gradients given `d loss / d features`.
    pub fn backward(&self, set: &ParamSet, tape: &mut Tape, dfeat: &[f64], grads: &mut [Vec<f64>]) {
        let shape = match tape.entries.pop() {
            Some(Entry::Gap(s)) => s,
            other => panic!("tape out of sync at pooling: {other:?}"),
        };
        let mut d = gap_backward(shape, dfeat);
        for block in self.blocks.iter().rev() {
            d = self.block_backward(block, set, tape, d, grads);
        }
        d = match tape.entries.pop() {
            Some(Entry::Pool(c)) => maxpool_backward(&c, &d),
            other => panic!("tape out of sync at max pool: {other:?}"),
        };
        self.relu_back(tape, &mut d);
        let d = self.bn_back(&self.stem.1, set, tape, &d, grads);
        self.conv_back(&self.stem.0, set, tape, &d, grads, false);
        debug_assert!(tape.entries.is_empty());
    }

    fn relu_back(&self, tape: &mut Tape, d: &mut Tensor) {
        match tape.entries.pop() {
            Some(Entry::Relu(mask)) => relu_backward(&mask, d),
            other => panic!("tape out of sync at relu: {other:?}"),
        }
    }

    fn bn_back(&self, l: &BnLayer, set: &ParamSet, tape: &mut Tape, d: &Tensor, grads: &mut [Vec<f64>]) -> Tensor {
        let cache = match tape.entries.pop() {
            Some(Entry::Bn(c)) => c,
            other => panic!("tape out of sync at batch norm: {other:?}"),
        };
        let (dg, db, dx) = bn_backward(&cache, &set.params[l.gamma].data, d);
        grads[l.gamma].iter_mut().zip(&dg).for_each(|(g, v)| *g += v);
        grads[l.beta].iter_mut().zip(&db).for_each(|(g, v)| *g += v);
        dx
    }

    fn conv_back(
        &self,
        l: &ConvLayer,
        set: &ParamSet,
        tape: &mut Tape,
        d: &Tensor,
        grads: &mut [Vec<f64>],
        need_dx: bool,
    ) -> Option<Tensor> {
        let cache = match tape.entries.pop() {
            Some(Entry::Conv(c)) => c,
            other => panic!("tape out of sync at conv: {other:?}"),
        };
        let (dw, dx) = conv_backward(&l.geom, &set.params[l.weight].data, &cache, d, need_dx);
        grads[l.weight].iter_mut().zip(&dw).for_each(|(g, v)| *g += v);
        dx
    }

    fn block_backward(&self, block: &Block, set: &ParamSet, tape: &mut Tape, mut d: Tensor, grads: &mut [Vec<f64>]) -> Tensor {
        self.relu_back(tape, &mut d);
        let down = match block {
            Block::Basic { down, .. } | Block::Bottleneck { down, .. } => down,
        };
        let skip = match down {
            Some((dc, db)) => {
                let ds = self.bn_back(db, set, tape, &d, grads);
                self.conv_back(dc, set, tape, &ds, grads, true).expect("dx requested")
            }
            None => d.clone(),
        };
        let mut main = match block {
            Block::Basic { c1, b1, c2, b2, .. } => {
                let h = self.bn_back(b2, set, tape, &d, grads);
                let mut h = self.conv_back(c2, set, tape, &h, grads, true).expect("dx requested");
                self.relu_back(tape, &mut h);
                let h = self.bn_back(b1, set, tape, &h, grads);
                self.conv_back(c1, set, tape, &h, grads, true).expect("dx requested")
            }
            Block::Bottleneck { c1, b1, c2, b2, c3, b3, .. } => {
                let h = self.bn_back(b3, set, tape, &d, grads);
                let mut h = self.conv_back(c3, set, tape, &h, grads, true).expect("dx requested");
                self.relu_back(tape, &mut h);
                let h = self.bn_back(b2, set, tape, &h, grads);
                let mut h = self.conv_back(c2, set, tape, &h, grads, true).expect("dx requested");
                self.relu_back(tape, &mut h);
                let h = self.bn_back(b1, set, tape, &h, grads);
                self.conv_back(c1, set, tape, &h, grads, true).expect("dx requested")
            }
        };
        main.data.iter_mut().zip(&skip.data).for_each(|(m, s)| *m += s);
        main
    }
}
