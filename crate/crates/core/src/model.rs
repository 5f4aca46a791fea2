//! Counting networks: per-receiver CSI and RSSI extractors, the RSSI-driven
//! fusion module, the shared CNN backbone, and the baseline compositions.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[allow(unused_imports)]
use num_traits::Float;

use crate::data::SampleBundle;
use crate::error::{Error, Result};
use crate::nn::{
    conv_out_len, BatchNormIds, ConvGeom, LayerKind, LayerSpec, Mode, ParamId, ParamStore, Tape,
    Tensor, Var,
};
use crate::rng::stream;

/// Feature channels produced by both extractors.
pub const FEATURE_CHANNELS: usize = 64;

pub const CSI_EXTRACTOR: [LayerSpec; 3] = [
    LayerSpec::conv2d(1, 64, 3, 2, 1),
    LayerSpec::conv2d(64, 128, 1, 1, 0),
    LayerSpec::conv2d(128, 64, 3, 2, 1),
];

pub const RSSI_EXTRACTOR: [LayerSpec; 3] = [
    LayerSpec::conv1d(1, 64, 3, 2, 1),
    LayerSpec::conv1d(64, 128, 1, 1, 0),
    LayerSpec::conv1d(128, 64, 3, 2, 1),
];

pub const BACKBONE: [LayerSpec; 3] = [
    LayerSpec::conv2d(64, 128, 3, 2, 1),
    LayerSpec::conv2d(128, 128, 3, 2, 1),
    LayerSpec::conv2d(128, 256, 3, 2, 1),
];

/// Width of the backbone's pooled feature vector.
pub const BACKBONE_WIDTH: usize = 256;

/// The two fusion-module convolutions; the first collapses each receiver's
/// `t_prime` block to one position.
pub fn fusion_layers(t_prime: usize) -> [LayerSpec; 2] {
    [
        LayerSpec::conv1d(64, 256, t_prime, t_prime, 0),
        LayerSpec::conv1d(256, 64, 1, 1, 0),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Receiver1,
    Receiver2,
    ProbAvg,
    ReweightedAvg,
    Concat,
    Proposed,
}

impl Method {
    /// Table order.
    pub const ALL: [Method; 6] = [
        Method::Receiver1,
        Method::Receiver2,
        Method::ProbAvg,
        Method::ReweightedAvg,
        Method::Concat,
        Method::Proposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Receiver1 => "receiver1",
            Method::Receiver2 => "receiver2",
            Method::ProbAvg => "prob_avg",
            Method::ReweightedAvg => "reweighted_avg",
            Method::Concat => "concat",
            Method::Proposed => "proposed",
        }
    }

    pub fn code(self) -> u8 {
        Method::ALL.iter().position(|&m| m == self).expect("listed") as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Method::ALL.get(usize::from(code)).copied()
    }

    /// Receiver consumed by a single-receiver method.
    pub fn receiver(self) -> Option<usize> {
        match self {
            Method::Receiver1 => Some(0),
            Method::Receiver2 => Some(1),
            _ => None,
        }
    }

    /// Methods that combine independently trained per-receiver models.
    pub fn is_ensemble(self) -> bool {
        matches!(self, Method::ProbAvg | Method::ReweightedAvg)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown method `{s}` (expected one of receiver1, receiver2, prob_avg, reweighted_avg, concat, proposed)"
                ))
            })
    }
}

/// Input geometry shared by every network of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub t_w: usize,
    /// Subcarriers per window after null removal.
    pub subcarriers: usize,
    pub n_classes: usize,
    pub n_receivers: usize,
}

fn chain(n: usize, layers: &[LayerSpec]) -> Option<usize> {
    layers
        .iter()
        .try_fold(n, |n, l| conv_out_len(n, l.kernel, l.stride, l.padding))
}

impl ModelConfig {
    pub fn new(
        t_w: usize,
        subcarriers: usize,
        n_classes: usize,
        n_receivers: usize,
    ) -> Result<Self> {
        let c = Self {
            t_w,
            subcarriers,
            n_classes,
            n_receivers,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_w < 4 || self.subcarriers < 4 {
            return Err(Error::InvalidArgument(format!(
                "window {}x{} is below the 4x4 minimum",
                self.t_w, self.subcarriers
            )));
        }
        if self.n_classes < 2 || self.n_classes > usize::from(u16::MAX) {
            return Err(Error::InvalidArgument(format!(
                "{} classes",
                self.n_classes
            )));
        }
        if self.n_receivers == 0 {
            return Err(Error::InvalidArgument("no receivers".into()));
        }
        Ok(())
    }

    /// Time length of the extracted features.
    pub fn t_prime(&self) -> usize {
        chain(self.t_w, &CSI_EXTRACTOR).expect("validated")
    }

    /// Subcarrier length of the extracted CSI features.
    pub fn s_prime(&self) -> usize {
        chain(self.subcarriers, &CSI_EXTRACTOR).expect("validated")
    }

    pub fn csi_feature_shape(&self) -> [usize; 3] {
        [FEATURE_CHANNELS, self.t_prime(), self.s_prime()]
    }

    pub fn rssi_feature_shape(&self) -> [usize; 2] {
        [FEATURE_CHANNELS, self.t_prime()]
    }
}

/// Which sub-networks a [`Network`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    /// CSI extractor and backbone fed by one receiver.
    Single { receiver: usize },
    /// CSI extractor and backbone over the plain time concatenation.
    Concat,
    /// Both extractors, fusion module and backbone.
    Proposed,
}

impl NetKind {
    pub fn for_method(method: Method, member: usize) -> Self {
        match method {
            Method::Receiver1 | Method::Receiver2 => NetKind::Single {
                receiver: method.receiver().expect("single"),
            },
            Method::ProbAvg | Method::ReweightedAvg => NetKind::Single { receiver: member },
            Method::Concat => NetKind::Concat,
            Method::Proposed => NetKind::Proposed,
        }
    }
}

/// Replacement for the learned fusion weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    Learned,
    /// Every weight forced to one, reducing fusion to concatenation.
    Ones,
}

#[derive(Debug, Clone, Copy)]
struct ConvBn {
    weight: ParamId,
    bias: ParamId,
    bn: BatchNormIds,
    geom: ConvGeom,
}

#[derive(Debug, Clone)]
struct Arch {
    csi: Vec<ConvBn>,
    rssi: Vec<ConvBn>,
    fusion: Vec<ConvBn>,
    backbone: Vec<ConvBn>,
    fc_weight: ParamId,
    fc_bias: ParamId,
}

fn kaiming(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<f32> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(-bound..bound) as f32)
        .collect();
    Tensor::from_vec(shape, data).expect("sized")
}

fn add_conv_bn(
    store: &mut ParamStore<f32>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    spec: &LayerSpec,
    tag: usize,
) -> ConvBn {
    let (i, o, k) = (spec.in_channels, spec.out_channels, spec.kernel);
    let shape: Vec<usize> = match spec.kind {
        LayerKind::Conv1d => vec![o, i, k],
        _ => vec![o, i, k, k],
    };
    let fan_in = shape[1..].iter().product();
    let weight = store.add(
        format!("{prefix}.conv{tag}.weight"),
        kaiming(rng, &shape, fan_in),
        true,
    );
    let bias = store.add(
        format!("{prefix}.conv{tag}.bias"),
        Tensor::zeros(&[o]),
        true,
    );
    let bn = BatchNormIds {
        gamma: store.add(
            format!("{prefix}.bn{tag}.weight"),
            Tensor::full(&[o], 1.0),
            true,
        ),
        beta: store.add(format!("{prefix}.bn{tag}.bias"), Tensor::zeros(&[o]), true),
        running_mean: store.add(
            format!("{prefix}.bn{tag}.running_mean"),
            Tensor::zeros(&[o]),
            false,
        ),
        running_var: store.add(
            format!("{prefix}.bn{tag}.running_var"),
            Tensor::full(&[o], 1.0),
            false,
        ),
    };
    ConvBn {
        weight,
        bias,
        bn,
        geom: spec.geom(),
    }
}

fn add_stack(
    store: &mut ParamStore<f32>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    specs: &[LayerSpec],
) -> Vec<ConvBn> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| add_conv_bn(store, rng, prefix, s, i + 1))
        .collect()
}

fn conv_bn(tape: &mut Tape<'_, f32>, x: Var, l: &ConvBn, relu: bool) -> Result<Var> {
    let w = tape.param(l.weight);
    let b = tape.param(l.bias);
    let y = tape.conv(x, w, b, l.geom)?;
    let y = tape.batch_norm_ids(y, &l.bn)?;
    Ok(if relu { tape.relu(y) } else { y })
}

fn stack(tape: &mut Tape<'_, f32>, mut x: Var, layers: &[ConvBn]) -> Result<Var> {
    for l in layers {
        x = conv_bn(tape, x, l, true)?;
    }
    Ok(x)
}

/// Network inputs for a batch, one tensor per receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBatch {
    /// `[B, 1, t_w, subcarriers]` per receiver.
    pub csi: Vec<Tensor<f32>>,
    /// `[B, 1, t_w]` per receiver.
    pub rssi: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
}

impl InputBatch {
    pub fn from_bundles(bundles: &[&SampleBundle]) -> Result<Self> {
        let first = bundles
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (n, t, s) = (first.n_receivers(), first.t_w(), first.subcarriers());
        let b = bundles.len();
        let mut csi = Vec::with_capacity(n);
        let mut rssi = Vec::with_capacity(n);
        for r in 0..n {
            let mut c = Vec::with_capacity(b * t * s);
            let mut i = Vec::with_capacity(b * t);
            for bundle in bundles {
                if bundle.n_receivers() != n || bundle.t_w() != t || bundle.subcarriers() != s {
                    return Err(Error::Shape(format!(
                        "bundle {} is {}x{}x{}, batch is {n}x{t}x{s}",
                        bundle.segment_index(),
                        bundle.n_receivers(),
                        bundle.t_w(),
                        bundle.subcarriers()
                    )));
                }
                let seg = bundle.segment(r);
                c.extend_from_slice(&seg.csi_window);
                i.extend_from_slice(&seg.rssi_window);
            }
            csi.push(Tensor::from_vec(&[b, 1, t, s], c)?);
            rssi.push(Tensor::from_vec(&[b, 1, t], i)?);
        }
        let labels = bundles.iter().map(|b| usize::from(b.label())).collect();
        Ok(Self { csi, rssi, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_receivers(&self) -> usize {
        self.csi.len()
    }

    /// Scales CSI rows by the per-time-step RSSI share `I_n[t] / sum_m I_m[t]`,
    /// applied verbatim to dBm values.
    pub fn rssi_reweighted(&self) -> Self {
        let mut out = self.clone();
        let n = self.n_receivers();
        let shape = self.csi[0].shape();
        let (b, t, s) = (shape[0], shape[2], shape[3]);
        for bi in 0..b {
            for ti in 0..t {
                let idx = bi * t + ti;
                let total: f64 = self.rssi.iter().map(|r| f64::from(r.data()[idx])).sum();
                for r in 0..n {
                    let share = if total == 0.0 {
                        1.0 / n as f64
                    } else {
                        f64::from(self.rssi[r].data()[idx]) / total
                    };
                    for v in &mut out.csi[r].data_mut()[idx * s..(idx + 1) * s] {
                        *v = (f64::from(*v) * share) as f32;
                    }
                }
            }
        }
        out
    }
}

/// One trainable network and its parameters.
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    kind: NetKind,
    store: ParamStore<f32>,
    arch: Arch,
}

impl Network {
    /// Fresh network with Kaiming-uniform convolution and linear weights,
    /// zero biases and unit batch-norm scales.
    pub fn new(config: ModelConfig, kind: NetKind, seed: u64) -> Result<Self> {
        config.validate()?;
        if let NetKind::Single { receiver } = kind {
            if receiver >= config.n_receivers {
                return Err(Error::InvalidArgument(format!(
                    "receiver {receiver} of {}",
                    config.n_receivers
                )));
            }
        }
        let mut rng = stream(seed, &[0x1417]);
        let mut store = ParamStore::new();
        let csi = add_stack(&mut store, &mut rng, "theta", &CSI_EXTRACTOR);
        let (rssi, fusion) = if kind == NetKind::Proposed {
            (
                add_stack(&mut store, &mut rng, "beta", &RSSI_EXTRACTOR),
                add_stack(
                    &mut store,
                    &mut rng,
                    "gamma",
                    &fusion_layers(config.t_prime()),
                ),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        let backbone = add_stack(&mut store, &mut rng, "alpha", &BACKBONE);
        let l = config.n_classes;
        let fc_weight = store.add(
            "alpha.fc.weight",
            kaiming(&mut rng, &[l, BACKBONE_WIDTH], BACKBONE_WIDTH),
            true,
        );
        let fc_bias = store.add("alpha.fc.bias", Tensor::zeros(&[l]), true);
        Ok(Self {
            config,
            kind,
            store,
            arch: Arch {
                csi,
                rssi,
                fusion,
                backbone,
                fc_weight,
                fc_bias,
            },
        })
    }

    /// Rebuilds a network from named tensors; every expected name must be
    /// present with a matching shape.
    pub fn from_named(
        config: ModelConfig,
        kind: NetKind,
        tensors: &[(String, Tensor<f32>)],
    ) -> Result<Self> {
        let mut net = Self::new(config, kind, 0)?;
        if tensors.len() != net.store.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tensors for a network with {} parameters",
                tensors.len(),
                net.store.len()
            )));
        }
        for (name, t) in tensors {
            let id = net
                .store
                .find(name)
                .ok_or_else(|| Error::InvalidArgument(format!("unexpected parameter `{name}`")))?;
            let p = net.store.get_mut(id);
            if p.value.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> NetKind {
        self.kind
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    /// `(name, tensor)` pairs in construction order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        self.store
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }

    /// Forward pass on a tape that borrows this network's store.
    pub fn tape(&mut self, mode: Mode) -> (Tape<'_, f32>, Graph) {
        let graph = Graph {
            arch: self.arch.clone(),
            kind: self.kind,
            config: self.config,
        };
        (Tape::new(&mut self.store, mode), graph)
    }

    /// Read-only inference tape.
    pub fn inference(&self) -> (Tape<'_, f32>, Graph) {
        let graph = Graph {
            arch: self.arch.clone(),
            kind: self.kind,
            config: self.config,
        };
        (Tape::inference(&self.store), graph)
    }

    /// Class probabilities `[B, L]` in eval mode.
    pub fn predict(&self, batch: &InputBatch) -> Result<Tensor<f32>> {
        self.predict_with(batch, Fusion::Learned)
    }

    pub fn predict_with(&self, batch: &InputBatch, fusion: Fusion) -> Result<Tensor<f32>> {
        let (mut tape, g) = self.inference();
        let p = g.forward(&mut tape, batch, fusion)?;
        Ok(tape.value(p).clone())
    }

    /// Receiver-side extraction in eval mode: CSI features `[B, C, T', S'']`
    /// and, for the proposed network, RSSI features `[B, C, T']`.
    pub fn extract(
        &self,
        csi: &Tensor<f32>,
        rssi: &Tensor<f32>,
    ) -> Result<(Tensor<f32>, Option<Tensor<f32>>)> {
        let (mut tape, g) = self.inference();
        let x = tape.input(csi.clone());
        let f = g.csi_features(&mut tape, x)?;
        let r = if self.kind == NetKind::Proposed {
            let x = tape.input(rssi.clone());
            let v = g.rssi_features(&mut tape, x)?;
            Some(tape.value(v).clone())
        } else {
            None
        };
        Ok((tape.value(f).clone(), r))
    }

    /// Fusion weights for per-receiver RSSI features, each `[B, C, 1]`.
    pub fn fusion_weights(&self, rssi_feats: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
        let (mut tape, g) = self.inference();
        let vars: Vec<Var> = rssi_feats.iter().map(|t| tape.input(t.clone())).collect();
        let q = g.fusion_weights(&mut tape, &vars)?;
        Ok(q.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    /// Server-side fusion and classification of already extracted features.
    pub fn classify_features(
        &self,
        csi_feats: &[Tensor<f32>],
        rssi_feats: &[Tensor<f32>],
        fusion: Fusion,
    ) -> Result<Tensor<f32>> {
        let (mut tape, g) = self.inference();
        let f: Vec<Var> = csi_feats.iter().map(|t| tape.input(t.clone())).collect();
        let r: Vec<Var> = rssi_feats.iter().map(|t| tape.input(t.clone())).collect();
        let p = g.classify(&mut tape, &f, &r, fusion)?;
        Ok(tape.value(p).clone())
    }
}

/// Parameter handles for building a forward pass on a [`Tape`].
#[derive(Debug, Clone)]
pub struct Graph {
    arch: Arch,
    kind: NetKind,
    config: ModelConfig,
}

impl Graph {
    pub fn csi_features(&self, tape: &mut Tape<'_, f32>, x: Var) -> Result<Var> {
        stack(tape, x, &self.arch.csi)
    }

    pub fn rssi_features(&self, tape: &mut Tape<'_, f32>, x: Var) -> Result<Var> {
        if self.arch.rssi.is_empty() {
            return Err(Error::InvalidArgument(
                "network has no RSSI extractor".into(),
            ));
        }
        stack(tape, x, &self.arch.rssi)
    }

    /// Per-receiver weights `[B, C, 1]`, softmax-normalized across receivers.
    pub fn fusion_weights(&self, tape: &mut Tape<'_, f32>, rssi_feats: &[Var]) -> Result<Vec<Var>> {
        if self.arch.fusion.is_empty() {
            return Err(Error::InvalidArgument(
                "network has no fusion module".into(),
            ));
        }
        let t_prime = self.config.t_prime();
        for &r in rssi_feats {
            let s = tape.shape(r);
            if s.len() != 3 || s[1] != FEATURE_CHANNELS || s[2] != t_prime {
                return Err(Error::Shape(format!(
                    "RSSI features {s:?}, expected [B, {FEATURE_CHANNELS}, {t_prime}]"
                )));
            }
        }
        let n = rssi_feats.len();
        let x = tape.concat(rssi_feats, 2)?;
        let h = conv_bn(tape, x, &self.arch.fusion[0], true)?;
        let h = conv_bn(tape, h, &self.arch.fusion[1], false)?;
        let q = tape.softmax(h, 2)?;
        (0..n).map(|i| tape.slice(q, 2, i, 1)).collect()
    }

    /// Scales each receiver's features by its weights and concatenates the
    /// results along time.
    pub fn fuse(
        &self,
        tape: &mut Tape<'_, f32>,
        csi_feats: &[Var],
        weights: &[Var],
    ) -> Result<Var> {
        if csi_feats.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} feature maps for {} weights",
                csi_feats.len(),
                weights.len()
            )));
        }
        let scaled = csi_feats
            .iter()
            .zip(weights)
            .map(|(&f, &q)| tape.channel_scale(f, q))
            .collect::<Result<Vec<_>>>()?;
        tape.concat(&scaled, 2)
    }

    pub fn backbone(&self, tape: &mut Tape<'_, f32>, x: Var) -> Result<Var> {
        let h = stack(tape, x, &self.arch.backbone)?;
        let h = tape.gap(h)?;
        let w = tape.param(self.arch.fc_weight);
        let b = tape.param(self.arch.fc_bias);
        let logits = tape.linear(h, w, b)?;
        tape.softmax(logits, 1)
    }

    /// Fusion and classification from extracted features.
    pub fn classify(
        &self,
        tape: &mut Tape<'_, f32>,
        csi_feats: &[Var],
        rssi_feats: &[Var],
        fusion: Fusion,
    ) -> Result<Var> {
        let fused = match (self.kind, fusion) {
            (NetKind::Single { .. }, _) => {
                let [f] = csi_feats else {
                    return Err(Error::Shape(format!(
                        "single-receiver network given {} feature maps",
                        csi_feats.len()
                    )));
                };
                *f
            }
            (NetKind::Concat, _) | (NetKind::Proposed, Fusion::Ones) => {
                tape.concat(csi_feats, 2)?
            }
            (NetKind::Proposed, Fusion::Learned) => {
                if rssi_feats.len() != csi_feats.len() {
                    return Err(Error::Shape(format!(
                        "{} CSI and {} RSSI feature maps",
                        csi_feats.len(),
                        rssi_feats.len()
                    )));
                }
                let q = self.fusion_weights(tape, rssi_feats)?;
                self.fuse(tape, csi_feats, &q)?
            }
        };
        self.backbone(tape, fused)
    }

    /// Full forward pass to probabilities `[B, L]`.
    pub fn forward(
        &self,
        tape: &mut Tape<'_, f32>,
        batch: &InputBatch,
        fusion: Fusion,
    ) -> Result<Var> {
        let n = batch.n_receivers();
        let receivers: Vec<usize> = match self.kind {
            NetKind::Single { receiver } => {
                if receiver >= n {
                    return Err(Error::Shape(format!(
                        "receiver {receiver} absent from a {n}-receiver batch"
                    )));
                }
                vec![receiver]
            }
            _ => (0..n).collect(),
        };
        let mut csi = Vec::with_capacity(receivers.len());
        let mut rssi = Vec::new();
        for &r in &receivers {
            let x = tape.input(batch.csi[r].clone());
            csi.push(self.csi_features(tape, x)?);
            if self.kind == NetKind::Proposed && fusion == Fusion::Learned {
                let x = tape.input(batch.rssi[r].clone());
                rssi.push(self.rssi_features(tape, x)?);
            }
        }
        self.classify(tape, &csi, &rssi, fusion)
    }
}

/// A trained method: one network, or one per receiver for the ensembles.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub method: Method,
    pub config: ModelConfig,
    pub members: Vec<Network>,
}

impl TrainedModel {
    pub fn new(method: Method, config: ModelConfig, seed: u64) -> Result<Self> {
        let count = if method.is_ensemble() {
            config.n_receivers
        } else {
            1
        };
        if let Some(r) = method.receiver() {
            if r >= config.n_receivers {
                return Err(Error::InvalidArgument(format!(
                    "{method} needs receiver {r}, data has {}",
                    config.n_receivers
                )));
            }
        }
        let members = (0..count)
            .map(|m| {
                let kind = NetKind::for_method(method, m);
                Network::new(config, kind, member_seed(seed, kind))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            method,
            config,
            members,
        })
    }

    /// Class probabilities `[B, L]`.
    pub fn predict(&self, batch: &InputBatch) -> Result<Tensor<f32>> {
        match self.method {
            Method::ProbAvg => average(&self.members, batch),
            Method::ReweightedAvg => average(&self.members, &batch.rssi_reweighted()),
            _ => self.members[0].predict(batch),
        }
    }

    /// `(name, tensor)` pairs; ensemble members are prefixed `m{n}.`.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        if !self.method.is_ensemble() {
            return self.members[0].named_tensors();
        }
        self.members
            .iter()
            .enumerate()
            .flat_map(|(m, net)| {
                net.named_tensors()
                    .into_iter()
                    .map(move |(name, t)| (format!("m{m}.{name}"), t))
            })
            .collect()
    }

    pub fn from_named(
        method: Method,
        config: ModelConfig,
        tensors: &[(String, Tensor<f32>)],
    ) -> Result<Self> {
        if !method.is_ensemble() {
            let net = Network::from_named(config, NetKind::for_method(method, 0), tensors)?;
            return Ok(Self {
                method,
                config,
                members: vec![net],
            });
        }
        let members = (0..config.n_receivers)
            .map(|m| {
                let prefix = format!("m{m}.");
                let own: Vec<(String, Tensor<f32>)> = tensors
                    .iter()
                    .filter_map(|(n, t)| {
                        n.strip_prefix(&prefix).map(|s| (s.to_string(), t.clone()))
                    })
                    .collect();
                Network::from_named(config, NetKind::for_method(method, m), &own)
            })
            .collect::<Result<Vec<_>>>()?;
        let expected: usize = members.iter().map(|n| n.store().len()).sum();
        if expected != tensors.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tensors for an ensemble with {expected} parameters",
                tensors.len()
            )));
        }
        Ok(Self {
            method,
            config,
            members,
        })
    }
}

/// Initialization seed of a network; single-receiver networks depend only on
/// their receiver, so a receiver baseline and the matching ensemble member
/// start identical.
pub fn member_seed(seed: u64, kind: NetKind) -> u64 {
    let tag = match kind {
        NetKind::Single { receiver } => receiver as u64,
        NetKind::Concat => 0x100,
        NetKind::Proposed => 0x101,
    };
    crate::rng::derive_seed(seed, &[tag])
}

/// Mean of the member networks' probabilities.
pub fn average(members: &[Network], batch: &InputBatch) -> Result<Tensor<f32>> {
    let outs = members
        .iter()
        .map(|m| m.predict(batch))
        .collect::<Result<Vec<_>>>()?;
    Ok(average_probs(&outs))
}

/// Element-wise mean of equally shaped probability tensors.
pub fn average_probs(outs: &[Tensor<f32>]) -> Tensor<f32> {
    let mut acc = vec![0.0f64; outs[0].len()];
    for o in outs {
        for (a, &v) in acc.iter_mut().zip(o.data()) {
            *a += f64::from(v);
        }
    }
    let n = outs.len() as f64;
    Tensor::from_vec(
        outs[0].shape(),
        acc.into_iter().map(|v| (v / n) as f32).collect(),
    )
    .expect("same shape")
}

/// Index and value of the largest entry per row of `[B, L]` probabilities.
/// Ties go to the lowest index.
pub fn argmax_rows(probs: &Tensor<f32>) -> Vec<(usize, f32)> {
    let l = probs.shape()[1];
    probs
        .data()
        .chunks(l)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
        })
        .collect()
}
