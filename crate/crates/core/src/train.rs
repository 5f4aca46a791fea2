//! Training loop, evaluation and multi-method comparison runs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

#[allow(unused_imports)]
use num_traits::Float;

use crate::data::{DatasetSplit, SampleBundle};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::{
    argmax_rows, average_probs, InputBatch, Method, ModelConfig, NetKind, Network, TrainedModel,
};
use crate::nn::{cosine_lr, AdamW, Mode, Tensor, PROB_FLOOR};
use crate::rng::stream;

/// Epochs averaged for the headline numbers.
pub const LAST_EPOCHS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 1e-4,
            label_smoothing: 0.1,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight decay {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::InvalidArgument(format!(
                "label smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub test_f1: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_loss,test_loss,test_acc,test_f1";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.6e},{:.6},{:.6},{:.4},{:.4}",
            self.epoch, self.lr, self.train_loss, self.test_loss, self.test_acc, self.test_f1
        )
    }
}

/// Test-set metrics of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub f1_macro: f64,
    pub loss: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: Method,
    /// Final-epoch accuracy, percent.
    pub accuracy: f64,
    /// Final-epoch macro F1, percent.
    pub f1_macro: f64,
    pub confusion: ConfusionMatrix,
    pub history: Vec<EpochLog>,
    pub last10_accuracy: f64,
    pub last10_f1: f64,
}

impl MetricsReport {
    fn from_history(method: Method, history: Vec<EpochLog>, last: Evaluation) -> Self {
        let tail = &history[history.len().saturating_sub(LAST_EPOCHS)..];
        let mean = |f: fn(&EpochLog) -> f64| {
            if tail.is_empty() {
                None
            } else {
                Some(tail.iter().map(f).sum::<f64>() / tail.len() as f64)
            }
        };
        Self {
            method,
            accuracy: last.accuracy,
            f1_macro: last.f1_macro,
            last10_accuracy: mean(|e| e.test_acc).unwrap_or(last.accuracy),
            last10_f1: mean(|e| e.test_f1).unwrap_or(last.f1_macro),
            confusion: last.confusion,
            history,
        }
    }
}

/// Probabilities `[B, L]` of a view over the member networks.
fn view_probs(method: Method, members: &[Network], batch: &InputBatch) -> Result<Tensor<f32>> {
    match method {
        Method::Receiver1 | Method::Receiver2 => {
            let r = method.receiver().expect("single");
            let net = members
                .iter()
                .find(|n| n.kind() == NetKind::Single { receiver: r })
                .ok_or_else(|| Error::InvalidArgument(format!("no network for {method}")))?;
            net.predict(batch)
        }
        Method::ProbAvg | Method::ReweightedAvg => {
            let batch = if method == Method::ReweightedAvg {
                batch.rssi_reweighted()
            } else {
                batch.clone()
            };
            let outs = members
                .iter()
                .map(|m| m.predict(&batch))
                .collect::<Result<Vec<_>>>()?;
            Ok(average_probs(&outs))
        }
        Method::Concat | Method::Proposed => members[0].predict(batch),
    }
}

fn smoothed_loss(probs: &[f32], label: usize, classes: usize, smoothing: f64) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(l, &p)| {
            let t = smoothing / classes as f64 + if l == label { 1.0 - smoothing } else { 0.0 };
            if t > 0.0 {
                -t * f64::from(p).max(PROB_FLOOR).ln()
            } else {
                0.0
            }
        })
        .sum()
}

fn evaluate_view(
    method: Method,
    members: &[Network],
    test: &[SampleBundle],
    classes: usize,
    batch_size: usize,
    smoothing: f64,
) -> Result<Evaluation> {
    let mut confusion = ConfusionMatrix::new(classes);
    let mut loss = 0.0;
    for chunk in test.chunks(batch_size.max(1)) {
        let refs: Vec<&SampleBundle> = chunk.iter().collect();
        let batch = InputBatch::from_bundles(&refs)?;
        let probs = view_probs(method, members, &batch)?;
        for ((&y, (pred, _)), row) in batch
            .labels
            .iter()
            .zip(argmax_rows(&probs))
            .zip(probs.data().chunks(classes))
        {
            confusion.add(y, pred)?;
            loss += smoothed_loss(row, y, classes, smoothing);
        }
    }
    let n = confusion.total().max(1) as f64;
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        f1_macro: confusion.macro_f1(),
        loss: loss / n,
        confusion,
    })
}

/// Evaluates a trained model on `test`.
pub fn evaluate(
    model: &TrainedModel,
    test: &[SampleBundle],
    batch_size: usize,
) -> Result<Evaluation> {
    evaluate_view(
        model.method,
        &model.members,
        test,
        model.config.n_classes,
        batch_size,
        0.0,
    )
}

/// Model geometry implied by a split.
pub fn model_config(split: &DatasetSplit) -> Result<ModelConfig> {
    let (n, t_w, s) = split
        .dims()?
        .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
    ModelConfig::new(t_w, s, split.n_classes, n)
}

fn check_labels(split: &DatasetSplit) -> Result<()> {
    for b in split.train.iter().chain(&split.test) {
        if usize::from(b.label()) >= split.n_classes {
            return Err(Error::InvalidArgument(format!(
                "label {} in a {}-class dataset",
                b.label(),
                split.n_classes
            )));
        }
    }
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("no training bundles".into()));
    }
    Ok(())
}

/// One epoch of minibatch AdamW; returns the mean training loss.
fn train_epoch(
    net: &mut Network,
    opt: &mut AdamW,
    train: &[SampleBundle],
    config: &TrainConfig,
    epoch: usize,
    stream_tag: u64,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut stream(
        config.seed,
        &[0x5348, stream_tag, epoch as u64],
    ));
    let mut total = 0.0;
    let mut seen = 0usize;
    for (bi, idx) in order.chunks(config.batch_size).enumerate() {
        if idx.len() < 2 && seen > 0 {
            continue;
        }
        let refs: Vec<&SampleBundle> = idx.iter().map(|&i| &train[i]).collect();
        let batch = InputBatch::from_bundles(&refs)?;
        let loss = {
            let (mut tape, g) = net.tape(Mode::Train);
            let probs = g.forward(&mut tape, &batch, crate::model::Fusion::Learned)?;
            let loss = tape.cross_entropy(probs, &batch.labels, config.label_smoothing)?;
            let value = f64::from(tape.value(loss).data()[0]);
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: bi,
                });
            }
            tape.backward(loss)?;
            value
        };
        let store = net.store_mut();
        if store
            .iter()
            .any(|p| p.trainable && p.grad.iter().any(|g| !g.is_finite()))
        {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                batch: bi,
            });
        }
        opt.step(store);
        store.zero_grad();
        total += loss * idx.len() as f64;
        seen += idx.len();
    }
    Ok(total / seen.max(1) as f64)
}

/// Trains a set of independent networks side by side and reports every
/// requested view of them after each epoch.
pub fn train_views(
    split: &DatasetSplit,
    members: &mut [Network],
    views: &[Method],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(Method, &EpochLog),
) -> Result<Vec<MetricsReport>> {
    config.validate()?;
    check_labels(split)?;
    let classes = split.n_classes;
    let mut opts: Vec<AdamW> = members
        .iter()
        .map(|_| AdamW::new(config.lr, config.weight_decay))
        .collect();
    let mut histories: Vec<Vec<EpochLog>> = vec![Vec::new(); views.len()];
    let tags: Vec<u64> = members
        .iter()
        .map(|m| match m.kind() {
            NetKind::Single { receiver } => receiver as u64,
            NetKind::Concat => 0x100,
            NetKind::Proposed => 0x101,
        })
        .collect();
    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.lr);
        let mut losses = Vec::with_capacity(members.len());
        for ((net, opt), &tag) in members.iter_mut().zip(&mut opts).zip(&tags) {
            opt.lr = lr;
            losses.push(train_epoch(net, opt, &split.train, config, epoch, tag)?);
        }
        for (v, &method) in views.iter().enumerate() {
            let train_loss = match method {
                Method::Receiver1 | Method::Receiver2 => {
                    let r = method.receiver().expect("single");
                    members
                        .iter()
                        .zip(&losses)
                        .find(|(m, _)| m.kind() == NetKind::Single { receiver: r })
                        .map(|(_, &l)| l)
                        .unwrap_or(f64::NAN)
                }
                _ => losses.iter().sum::<f64>() / losses.len() as f64,
            };
            let eval = evaluate_view(
                method,
                members,
                &split.test,
                classes,
                config.batch_size,
                config.label_smoothing,
            )?;
            let log = EpochLog {
                epoch: epoch + 1,
                lr,
                train_loss,
                test_loss: eval.loss,
                test_acc: eval.accuracy,
                test_f1: eval.f1_macro,
            };
            on_epoch(method, &log);
            histories[v].push(log);
        }
    }
    views
        .iter()
        .zip(histories)
        .map(|(&method, history)| {
            let last = evaluate_view(
                method,
                members,
                &split.test,
                classes,
                config.batch_size,
                config.label_smoothing,
            )?;
            Ok(MetricsReport::from_history(method, history, last))
        })
        .collect()
}

/// Trains one method. Ensembles train one network per receiver, each on its
/// own receiver's data.
pub fn train(
    split: &DatasetSplit,
    method: Method,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<(TrainedModel, MetricsReport)> {
    let mc = model_config(split)?;
    let mut model = TrainedModel::new(method, mc, config.seed)?;
    let mut reports = train_views(split, &mut model.members, &[method], config, &mut |_, e| {
        on_epoch(e)
    })?;
    Ok((model, reports.remove(0)))
}

/// Trains every method on the same data and seed. The receiver baselines and
/// both ensembles share one pair of per-receiver networks.
pub fn compare_all(
    split: &DatasetSplit,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(Method, &EpochLog),
) -> Result<Vec<(TrainedModel, MetricsReport)>> {
    let mc = model_config(split)?;
    if mc.n_receivers < 2 {
        return Err(Error::InvalidArgument(format!(
            "comparison needs two receivers, data has {}",
            mc.n_receivers
        )));
    }
    let mut out = Vec::new();
    let mut receivers = TrainedModel::new(Method::ProbAvg, mc, config.seed)?;
    let ensemble_views = [
        Method::Receiver1,
        Method::Receiver2,
        Method::ProbAvg,
        Method::ReweightedAvg,
    ];
    let reports = train_views(
        split,
        &mut receivers.members,
        &ensemble_views,
        config,
        on_epoch,
    )?;
    for (method, report) in ensemble_views.into_iter().zip(reports) {
        let members = match method.receiver() {
            Some(r) => vec![receivers.members[r].clone()],
            None => receivers.members.clone(),
        };
        out.push((
            TrainedModel {
                method,
                config: mc,
                members,
            },
            report,
        ));
    }
    for method in [Method::Concat, Method::Proposed] {
        let mut model = TrainedModel::new(method, mc, config.seed)?;
        let mut r = train_views(split, &mut model.members, &[method], config, on_epoch)?;
        out.push((model, r.remove(0)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Segment;
    use rand::Rng;

    /// Two classes separated by the CSI level on receiver 0 only.
    fn toy(per_class: usize, seed: u64) -> Vec<SampleBundle> {
        let mut rng = stream(seed, &[]);
        let mut out = Vec::new();
        for label in 0..2u16 {
            for i in 0..per_class {
                let segs = (0..2)
                    .map(|r| {
                        let level = if r == 0 {
                            1.0 + 2.0 * f32::from(label)
                        } else {
                            1.0
                        };
                        let csi = (0..8 * 4)
                            .map(|_| level + rng.random_range(-0.3..0.3f32))
                            .collect();
                        let rssi = (0..8)
                            .map(|_| -50.0 + rng.random_range(-1.0..1.0f32))
                            .collect();
                        Segment::new(r, i as u32, label, 4, csi, rssi).unwrap()
                    })
                    .collect();
                out.push(SampleBundle::new(segs).unwrap());
            }
        }
        out
    }

    fn toy_split() -> DatasetSplit {
        crate::data::split_dataset(toy(20, 1), 0.8, 2).unwrap()
    }

    #[test]
    fn separable_toy_is_learned() {
        let split = toy_split();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 8,
            lr: 3e-3,
            ..TrainConfig::default()
        };
        let (model, report) = train(&split, Method::Receiver1, &cfg, &mut |_| {}).unwrap();
        let train_eval = evaluate(&model, &split.train, 16).unwrap();
        assert!(train_eval.accuracy >= 99.0, "{}", train_eval.accuracy);
        assert_eq!(report.history.len(), 20);
        assert_eq!(report.confusion.row_sums(), vec![4, 4]);
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let split = toy_split();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let a = train(&split, Method::Proposed, &cfg, &mut |_| {})
            .unwrap()
            .1;
        let b = train(&split, Method::Proposed, &cfg, &mut |_| {})
            .unwrap()
            .1;
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epochs_is_untrained_evaluation() {
        let split = toy_split();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (model, report) = train(&split, Method::Concat, &cfg, &mut |_| {}).unwrap();
        assert!(report.history.is_empty());
        let e = evaluate(&model, &split.test, 4).unwrap();
        assert_eq!(e.confusion.total(), 8);
    }

    #[test]
    fn compare_covers_all_methods() {
        let split = toy_split();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let rows = compare_all(&split, &cfg, &mut |_, _| {}).unwrap();
        let methods: Vec<Method> = rows.iter().map(|(_, r)| r.method).collect();
        assert_eq!(methods, Method::ALL.to_vec());
        // ensemble baseline equals the mean of the receiver models
        let e3 = evaluate(&rows[2].0, &split.test, 8).unwrap();
        assert_eq!(e3.accuracy, rows[2].1.accuracy);
    }

    #[test]
    fn invalid_smoothing_rejected() {
        let cfg = TrainConfig {
            label_smoothing: 1.0,
            ..TrainConfig::default()
        };
        assert!(train(&toy_split(), Method::Receiver1, &cfg, &mut |_| {}).is_err());
    }
}
