//! Per-target binary classifiers that imitate the oracles from window
//! embeddings. They are the reward environment of the agent.

use std::cmp::Ordering;
use std::path::Path;

use obfusim_nn::{
    argmax, cross_entropy, softmax, Activation, CnnCache, CnnConfig, DenseHead, FinalActivation, HeadCache, NnError, Objective, Optimizer,
    OptimizerConfig, Param, Parameters, Tensor, TextCnnEncoder,
};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::RandIntentSession;
use crate::envgen::{OracleSet, UrlId, UrlUniverse};
use crate::error::{CoreError, Result};
use crate::persona::{build_persona, sample_user_type, McModel, PersonaSpec};
use crate::rng::{derive_seed, stream};
use crate::tracker::Tracker;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Segment,
    Bidder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TargetId {
    pub kind: TargetKind,
    pub index: usize,
}

impl std::fmt::Display for TargetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            TargetKind::Segment => write!(f, "segment-{}", self.index),
            TargetKind::Bidder => write!(f, "bidder-{}", self.index),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectConfig {
    pub personas: usize,
    pub persona_len: usize,
    pub alpha_range: (f64, f64),
    pub min_positive_rate: f64,
}

impl CollectConfig {
    pub fn desk() -> Self {
        Self { personas: 2000, persona_len: 10, alpha_range: (0.0, 0.2), min_positive_rate: 0.05 }
    }

    pub fn paper() -> Self {
        Self { personas: 10_000, persona_len: 20, ..Self::desk() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetLabels {
    pub target: TargetId,
    pub labels: Vec<u8>,
    pub positive_rate: f64,
    pub dropped: bool,
}

/// Windows shared by every target, stored as url ids, plus each target's labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectedData {
    pub window: usize,
    pub windows: Vec<Vec<UrlId>>,
    pub targets: Vec<TargetLabels>,
}

impl CollectedData {
    pub fn matrices(&self, universe: &UrlUniverse) -> Vec<Tensor> {
        self.windows.iter().map(|ids| universe.window(ids, self.window)).collect()
    }

    pub fn kept(&self) -> impl Iterator<Item = &TargetLabels> {
        self.targets.iter().filter(|t| !t.dropped)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// One sample per persona and oracle: the final window of a random-intent
/// persona with a uniformly drawn budget, labelled by the oracle.
pub fn collect_dataset(universe: &UrlUniverse, oracles: &OracleSet, model: &McModel, config: &CollectConfig, seed: u64) -> Result<CollectedData> {
    let (lo, hi) = config.alpha_range;
    if config.personas == 0 || config.persona_len == 0 {
        return Err(CoreError::Config("collection needs at least one persona of length one".into()));
    }
    if !(0.0 <= lo && lo <= hi && hi < 1.0) {
        return Err(CoreError::Config(format!("alpha range ({lo}, {hi}) must lie in [0, 1)")));
    }
    let w = oracles.window;
    let mut windows = Vec::with_capacity(config.personas);
    let mut seg_labels = vec![Vec::with_capacity(config.personas); oracles.segments.len()];
    let mut bid_labels = vec![Vec::with_capacity(config.personas); oracles.bidders.len()];
    for i in 0..config.personas {
        let pseed = derive_seed(seed, "collect", i as u64);
        let alpha = if hi > lo { stream(pseed, "collect/alpha", 0).random_range(lo..hi) } else { lo };
        let spec = PersonaSpec { alpha, length: config.persona_len, init_len: 0 };
        let persona = build_persona(model, universe, &spec, sample_user_type(model, pseed), &mut RandIntentSession, pseed)?;
        let ids = persona.ids();
        let tail = ids[ids.len().saturating_sub(w)..].to_vec();
        let matrix = universe.window(&tail, w);
        for (labels, bit) in seg_labels.iter_mut().zip(oracles.segments(&matrix)?) {
            labels.push(bit);
        }
        for (labels, bit) in bid_labels.iter_mut().zip(oracles.bid_classes(&matrix)?) {
            labels.push(bit);
        }
        windows.push(tail);
    }
    let make = |kind: TargetKind, index: usize, labels: Vec<u8>| {
        let positive_rate = labels.iter().map(|b| f64::from(*b)).sum::<f64>() / labels.len() as f64;
        TargetLabels { target: TargetId { kind, index }, labels, positive_rate, dropped: positive_rate < config.min_positive_rate }
    };
    let mut targets: Vec<TargetLabels> = oracles.segments.iter().zip(seg_labels).map(|(o, l)| make(TargetKind::Segment, o.id, l)).collect();
    targets.extend(oracles.bidders.iter().zip(bid_labels).map(|(o, l)| make(TargetKind::Bidder, o.id, l)));
    Ok(CollectedData { window: w, windows, targets })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    pub kernel_heights: Vec<usize>,
    pub filters_per_kernel: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub test_fraction: f64,
    pub optimizer: OptimizerConfig,
}

impl SurrogateConfig {
    pub fn desk() -> Self {
        Self {
            kernel_heights: vec![3, 4, 5],
            filters_per_kernel: 8,
            hidden: Vec::new(),
            epochs: 30,
            batch: 32,
            test_fraction: 0.2,
            optimizer: OptimizerConfig::sgd_momentum(0.01),
        }
    }

    pub fn paper() -> Self {
        Self { filters_per_kernel: 100, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || !(0.0 < self.test_fraction && self.test_fraction < 1.0) {
            return Err(CoreError::Config("surrogate training needs epochs, a batch size and a test fraction in (0, 1)".into()));
        }
        self.optimizer.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LabeledWindow {
    pub window: Tensor,
    pub label: usize,
    pub weight: f64,
}

/// Text-CNN encoder with a softmax head over two classes.
#[derive(Serialize, Deserialize)]
pub struct BinaryClassifier {
    encoder: TextCnnEncoder,
    head: DenseHead,
    #[serde(skip)]
    pending: Option<(CnnCache, HeadCache, Vec<f64>)>,
}

impl Clone for BinaryClassifier {
    fn clone(&self) -> Self {
        Self { encoder: self.encoder.clone(), head: self.head.clone(), pending: None }
    }
}

impl std::fmt::Debug for BinaryClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryClassifier").field("params", &self.num_params()).finish()
    }
}

impl BinaryClassifier {
    pub fn new<R: Rng + ?Sized>(cnn: CnnConfig, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let encoder = TextCnnEncoder::new(cnn, rng)?;
        let mut sizes = vec![encoder.output_dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        let head = DenseHead::new(&sizes, Activation::Relu, FinalActivation::Softmax, rng)?;
        Ok(Self { encoder, head, pending: None })
    }

    pub fn probabilities(&self, window: &Tensor) -> Result<Vec<f64>> {
        let cnn = self.encoder.forward(window)?;
        Ok(softmax(&self.head.forward(cnn.output())?.logits))
    }

    pub fn predict(&self, window: &Tensor) -> Result<u8> {
        Ok(argmax(&self.probabilities(window)?) as u8)
    }
}

impl Parameters for BinaryClassifier {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}

impl Objective for BinaryClassifier {
    type Sample = LabeledWindow;

    fn forward(&mut self, sample: &LabeledWindow) -> obfusim_nn::Result<f64> {
        let cnn = self.encoder.forward(&sample.window)?;
        let head = self.head.forward(cnn.output())?;
        let (loss, dlogits) = cross_entropy(&head.logits, sample.label, sample.weight);
        if !loss.is_finite() {
            return Err(NnError::NonFinite("classifier loss".into()));
        }
        self.pending = Some((cnn, head, dlogits));
        Ok(loss)
    }

    fn backward(&mut self) -> obfusim_nn::Result<()> {
        let (cnn, head, dlogits) = self.pending.take().ok_or(NnError::NoForward)?;
        let dx = self.head.backward(&head, &dlogits);
        self.encoder.backward(&cnn, &dx, false);
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HeldOutMetrics {
    pub tpr: f64,
    pub fpr: f64,
    pub accuracy: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl HeldOutMetrics {
    pub fn from_predictions(predicted: &[u8], truth: &[u8]) -> Self {
        let mut m = [[0usize; 2]; 2];
        for (p, t) in predicted.iter().zip(truth) {
            m[usize::from(*t)][usize::from(*p)] += 1;
        }
        let positives = m[1][0] + m[1][1];
        let negatives = m[0][0] + m[0][1];
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            tpr: ratio(m[1][1], positives),
            fpr: ratio(m[0][1], negatives),
            accuracy: ratio(m[0][0] + m[1][1], positives + negatives),
            positives,
            negatives,
        }
    }

    pub fn balanced_accuracy(&self) -> f64 {
        (self.tpr + 1.0 - self.fpr) / 2.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub target: TargetId,
    pub window: usize,
    pub net: BinaryClassifier,
    pub metrics: HeldOutMetrics,
}

/// Deterministic 80/20-style split of sample indices.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, "split", 0));
    let test = ((n as f64) * test_fraction).round() as usize;
    let train = idx.split_off(test.min(n));
    (train, idx)
}

/// Mini-batch training with inverse-frequency class weights; returns the
/// trained classifier.
pub fn fit_classifier(
    cnn: CnnConfig,
    config: &SurrogateConfig,
    samples: &[(Tensor, u8)],
    train: &[usize],
    seed: u64,
) -> Result<BinaryClassifier> {
    config.validate()?;
    let positives = train.iter().filter(|i| samples[**i].1 == 1).count();
    let negatives = train.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(CoreError::InvalidInput("training split holds a single class".into()));
    }
    let class_weight = [train.len() as f64 / (2.0 * negatives as f64), train.len() as f64 / (2.0 * positives as f64)];
    let mut rng = stream(seed, "classifier", 0);
    let mut net = BinaryClassifier::new(cnn, &config.hidden, &mut rng)?;
    let mut optimizer = Optimizer::new(config.optimizer.clone())?;
    let mut order = train.to_vec();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch) {
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (window, label) = &samples[i];
                let sample = LabeledWindow { window: window.clone(), label: usize::from(*label), weight: class_weight[usize::from(*label)] * scale };
                net.forward(&sample)?;
                net.backward()?;
            }
            optimizer.step(&mut net)?;
        }
    }
    Ok(net)
}

pub fn evaluate_classifier(net: &BinaryClassifier, samples: &[(Tensor, u8)], indices: &[usize]) -> Result<HeldOutMetrics> {
    let predicted = indices.iter().map(|i| net.predict(&samples[*i].0)).collect::<Result<Vec<u8>>>()?;
    let truth: Vec<u8> = indices.iter().map(|i| samples[*i].1).collect();
    Ok(HeldOutMetrics::from_predictions(&predicted, &truth))
}

/// Trains one surrogate on a target's labels and scores it on the held-out split.
pub fn train_surrogate(
    universe: &UrlUniverse,
    data: &CollectedData,
    target: &TargetLabels,
    config: &SurrogateConfig,
    seed: u64,
) -> Result<SurrogateModel> {
    let matrices = data.matrices(universe);
    train_surrogate_on(&matrices, data.window, target, config, seed)
}

/// As [`train_surrogate`], with the window matrices already built.
pub fn train_surrogate_on(matrices: &[Tensor], window: usize, target: &TargetLabels, config: &SurrogateConfig, seed: u64) -> Result<SurrogateModel> {
    if matrices.len() != target.labels.len() || matrices.is_empty() {
        return Err(CoreError::InvalidInput("labels do not match the window set".into()));
    }
    let dim = matrices[0].shape()[1];
    let samples: Vec<(Tensor, u8)> = matrices.iter().cloned().zip(target.labels.iter().copied()).collect();
    let (train, test) = split_indices(samples.len(), config.test_fraction, derive_seed(seed, "split", 0));
    let cnn = CnnConfig { rows: window, cols: dim, kernel_heights: config.kernel_heights.clone(), filters_per_kernel: config.filters_per_kernel };
    let tag = match target.target.kind {
        TargetKind::Segment => 0u64,
        TargetKind::Bidder => 1u64 << 32,
    };
    let net = fit_classifier(cnn, config, &samples, &train, derive_seed(seed, "surrogate", tag | target.target.index as u64))
        .map_err(|e| CoreError::InvalidInput(format!("{}: {e}", target.target)))?;
    let metrics = evaluate_classifier(&net, &samples, &test)?;
    Ok(SurrogateModel { target: target.target, window, net, metrics })
}

fn rank(a: &SurrogateModel, b: &SurrogateModel) -> Ordering {
    b.metrics.balanced_accuracy().total_cmp(&a.metrics.balanced_accuracy()).then(a.target.cmp(&b.target))
}

/// Keeps the `k` candidates with the best balanced accuracy, ties by target
/// id. Fewer than `k` candidates are all kept, with a warning flag.
pub fn select_top(mut models: Vec<SurrogateModel>, k: usize) -> (Vec<SurrogateModel>, bool) {
    models.sort_by(rank);
    let short = models.len() < k;
    if short {
        log::warn!("only {} surrogate candidates for {k} slots; keeping all", models.len());
    }
    models.truncate(k);
    (models, short)
}

/// The selected surrogates, used as a tracker.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurrogateSet {
    pub window: usize,
    pub segments: Vec<SurrogateModel>,
    pub bidders: Vec<SurrogateModel>,
}

impl SurrogateSet {
    pub fn segment_ids(&self) -> Vec<usize> {
        self.segments.iter().map(|m| m.target.index).collect()
    }

    pub fn bidder_ids(&self) -> Vec<usize> {
        self.bidders.iter().map(|m| m.target.index).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        obfusim_nn::save_checkpoint(path, "surrogate-set", self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(obfusim_nn::load_checkpoint(path, "surrogate-set")?)
    }
}

impl Tracker for SurrogateSet {
    fn window(&self) -> usize {
        self.window
    }

    fn segment_count(&self) -> usize {
        self.segments.len()
    }

    fn bidder_count(&self) -> usize {
        self.bidders.len()
    }

    fn segments(&self, window: &Tensor) -> Result<Vec<u8>> {
        self.segments.iter().map(|m| m.net.predict(window)).collect()
    }

    fn bid_classes(&self, window: &Tensor) -> Result<Vec<u8>> {
        self.bidders.iter().map(|m| m.net.predict(window)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_from_confusion() {
        let m = HeldOutMetrics::from_predictions(&[1, 0, 1, 0, 0], &[1, 1, 0, 0, 0]);
        assert_eq!(m.tpr, 0.5);
        assert!((m.fpr - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.accuracy, 0.6);
        assert!((m.balanced_accuracy() - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let (train, test) = split_indices(100, 0.2, 1);
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }
}
