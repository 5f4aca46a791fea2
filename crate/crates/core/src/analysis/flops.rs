//! Operation counts for one forward pass over a bundle.
//!
//! Convolutions count `out_elems * k_h * k_w * C_in` multiply-accumulates,
//! linear layers `C_in * C_out`. Batch norm, ReLU, softmax, pooling and
//! element-wise weighting count one operation per element. FLOPs are
//! `2 * MACs + elementwise`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign};

use crate::model::{
    fusion_layers, Method, ModelConfig, BACKBONE, BACKBONE_WIDTH, CSI_EXTRACTOR, RSSI_EXTRACTOR,
};
use crate::nn::{LayerKind, LayerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlopCount {
    pub macs: u64,
    pub elementwise: u64,
}

impl FlopCount {
    pub fn flops(&self) -> u64 {
        2 * self.macs + self.elementwise
    }

    pub fn gflops(&self) -> f64 {
        self.flops() as f64 / 1e9
    }

    fn ew(n: u64) -> Self {
        Self {
            macs: 0,
            elementwise: n,
        }
    }
}

impl Add for FlopCount {
    type Output = FlopCount;

    fn add(self, o: FlopCount) -> FlopCount {
        FlopCount {
            macs: self.macs + o.macs,
            elementwise: self.elementwise + o.elementwise,
        }
    }
}

impl AddAssign for FlopCount {
    fn add_assign(&mut self, o: FlopCount) {
        *self = *self + o;
    }
}

/// One entry of a per-layer breakdown. Shapes exclude the batch axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    pub stage: &'static str,
    pub kind: LayerKind,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub count: FlopCount,
}

fn conv_len(n: usize, l: &LayerSpec) -> usize {
    crate::nn::conv_out_len(n, l.kernel, l.stride, l.padding).unwrap_or(0)
}

/// Cost of one layer on an unbatched input `[C, ...]`, with its output shape.
pub fn layer_cost(spec: &LayerSpec, input: &[usize]) -> (Vec<usize>, FlopCount) {
    let elems = |s: &[usize]| s.iter().product::<usize>() as u64;
    match spec.kind {
        LayerKind::Conv2d => {
            let out = vec![
                spec.out_channels,
                conv_len(input[1], spec),
                conv_len(input[2], spec),
            ];
            let macs = elems(&out) * (spec.kernel * spec.kernel * spec.in_channels) as u64;
            (
                out,
                FlopCount {
                    macs,
                    elementwise: 0,
                },
            )
        }
        LayerKind::Conv1d => {
            let out = vec![spec.out_channels, conv_len(input[1], spec)];
            let macs = elems(&out) * (spec.kernel * spec.in_channels) as u64;
            (
                out,
                FlopCount {
                    macs,
                    elementwise: 0,
                },
            )
        }
        LayerKind::BatchNorm1d | LayerKind::BatchNorm2d | LayerKind::Relu | LayerKind::Softmax => {
            (input.to_vec(), FlopCount::ew(elems(input)))
        }
        LayerKind::Gap => (vec![input[0]], FlopCount::ew(elems(input))),
        LayerKind::Linear => (
            vec![spec.out_channels],
            FlopCount {
                macs: (spec.in_channels * spec.out_channels) as u64,
                elementwise: 0,
            },
        ),
    }
}

struct Walker {
    layers: Vec<LayerCost>,
}

impl Walker {
    fn push(&mut self, stage: &'static str, spec: LayerSpec, input: &[usize]) -> Vec<usize> {
        let (output, count) = layer_cost(&spec, input);
        self.layers.push(LayerCost {
            stage,
            kind: spec.kind,
            input: input.to_vec(),
            output: output.clone(),
            count,
        });
        output
    }

    fn conv_stack(
        &mut self,
        stage: &'static str,
        specs: &[LayerSpec],
        mut shape: Vec<usize>,
        relu_last: bool,
    ) -> Vec<usize> {
        for (i, s) in specs.iter().enumerate() {
            shape = self.push(stage, *s, &shape);
            let bn = match s.kind {
                LayerKind::Conv1d => LayerSpec::bn1d(s.out_channels),
                _ => LayerSpec::bn2d(s.out_channels),
            };
            shape = self.push(stage, bn, &shape);
            if relu_last || i + 1 < specs.len() {
                shape = self.push(stage, LayerSpec::relu(), &shape);
            }
        }
        shape
    }

    fn elementwise(&mut self, stage: &'static str, shape: Vec<usize>, n: u64) {
        self.layers.push(LayerCost {
            stage,
            kind: LayerKind::Softmax,
            input: shape.clone(),
            output: shape,
            count: FlopCount::ew(n),
        });
    }

    fn csi_extractor(&mut self, c: &ModelConfig) -> Vec<usize> {
        self.conv_stack(
            "csi_extractor",
            &CSI_EXTRACTOR,
            vec![1, c.t_w, c.subcarriers],
            true,
        )
    }

    fn backbone(&mut self, c: &ModelConfig, input: Vec<usize>) {
        let h = self.conv_stack("backbone", &BACKBONE, input, true);
        let h = self.push("backbone", LayerSpec::gap(), &h);
        let h = self.push(
            "backbone",
            LayerSpec::linear(BACKBONE_WIDTH, c.n_classes),
            &h,
        );
        self.push("backbone", LayerSpec::softmax(), &h);
    }

    /// RSSI extractors, fusion module and the weighting multiply.
    fn fusion(&mut self, c: &ModelConfig, n: usize) {
        let mut t_total = 0;
        for _ in 0..n {
            let out = self.conv_stack("rssi_extractor", &RSSI_EXTRACTOR, vec![1, c.t_w], true);
            t_total += out[1];
        }
        let [l1, l2] = fusion_layers(c.t_prime());
        let h = self.conv_stack("fusion", &[l1], vec![l1.in_channels, t_total], true);
        let h = self.push("fusion", l2, &h);
        let h = self.push("fusion", LayerSpec::bn1d(l2.out_channels), &h);
        self.push("fusion", LayerSpec::softmax(), &h);
        let [ch, tp, sp] = c.csi_feature_shape();
        self.elementwise("weighting", vec![ch, n * tp, sp], (n * ch * tp * sp) as u64);
    }
}

/// Per-layer costs of `method` for one bundle of `config.n_receivers`
/// segments.
pub fn flop_breakdown(method: Method, config: &ModelConfig) -> Vec<LayerCost> {
    let n = config.n_receivers;
    let mut w = Walker { layers: Vec::new() };
    match method {
        Method::Receiver1 | Method::Receiver2 => {
            let f = w.csi_extractor(config);
            w.backbone(config, f);
        }
        Method::ProbAvg | Method::ReweightedAvg => {
            if method == Method::ReweightedAvg {
                // shares: n - 1 adds and n divides per time step, then the scaling
                let per_t = (2 * n - 1) as u64;
                w.elementwise(
                    "reweighting",
                    vec![n, config.t_w, config.subcarriers],
                    config.t_w as u64 * per_t + (n * config.t_w * config.subcarriers) as u64,
                );
            }
            for _ in 0..n {
                let f = w.csi_extractor(config);
                w.backbone(config, f);
            }
            w.elementwise(
                "prob_combine",
                vec![config.n_classes],
                (n * config.n_classes) as u64,
            );
        }
        Method::Concat | Method::Proposed => {
            let mut shape = Vec::new();
            for _ in 0..n {
                shape = w.csi_extractor(config);
            }
            if method == Method::Proposed {
                w.fusion(config, n);
            }
            shape[1] *= n;
            w.backbone(config, shape);
        }
    }
    w.layers
}

pub fn count_flops(method: Method, config: &ModelConfig) -> FlopCount {
    flop_breakdown(method, config)
        .iter()
        .fold(FlopCount::default(), |a, l| a + l.count)
}

/// Cost of the RSSI extractors, fusion module and weighting alone.
pub fn fusion_overhead(config: &ModelConfig) -> FlopCount {
    let mut w = Walker { layers: Vec::new() };
    w.fusion(config, config.n_receivers);
    w.layers
        .iter()
        .fold(FlopCount::default(), |a, l| a + l.count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_size() -> ModelConfig {
        ModelConfig::new(300, 242, 21, 2).unwrap()
    }

    #[test]
    fn first_conv_hand_count() {
        let (out, c) = layer_cost(&CSI_EXTRACTOR[0], &[1, 300, 242]);
        assert_eq!(out, vec![64, 150, 121]);
        assert_eq!(c.macs, 10_454_400);
        let (out, c) = layer_cost(&RSSI_EXTRACTOR[0], &[1, 300]);
        assert_eq!(out, vec![64, 150]);
        assert_eq!(c.macs, 64 * 150 * 3);
        let (_, c) = layer_cost(&LayerSpec::linear(256, 21), &[256]);
        assert_eq!(c.macs, 5376);
    }

    #[test]
    fn proposed_minus_concat_is_fusion() {
        for c in [
            full_size(),
            ModelConfig::new(16, 14, 5, 2).unwrap(),
            ModelConfig::new(32, 8, 3, 3).unwrap(),
        ] {
            let diff =
                count_flops(Method::Proposed, &c).flops() - count_flops(Method::Concat, &c).flops();
            assert_eq!(diff, fusion_overhead(&c).flops());
        }
    }

    #[test]
    fn averaging_doubles_single() {
        let c = full_size();
        let single = count_flops(Method::Receiver1, &c).flops();
        let avg = count_flops(Method::ProbAvg, &c).flops();
        assert_eq!(avg - 2 * single, 2 * 21);
        assert!(count_flops(Method::Proposed, &c).flops() > single);
    }

    #[test]
    fn additive_over_layers() {
        let c = full_size();
        let layers = flop_breakdown(Method::Proposed, &c);
        let total: u64 = layers.iter().map(|l| l.count.flops()).sum();
        assert_eq!(total, count_flops(Method::Proposed, &c).flops());
        let backbone_in = layers.iter().find(|l| l.stage == "backbone").unwrap();
        assert_eq!(backbone_in.input, vec![64, 150, 61]);
    }
}
