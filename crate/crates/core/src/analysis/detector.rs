use obfusim_nn::{argmax, cross_entropy, softmax, Activation, CnnCache, CnnConfig, DenseHead, FinalActivation, HeadCache, NnError, Objective, Optimizer, OptimizerConfig, Param, Parameters, Tensor, TextCnnEncoder};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::transfer::{evaluation_personas, EvalConfig};
use crate::baselines::Control;
use crate::envgen::UrlUniverse;
use crate::error::{CoreError, Result};
use crate::persona::{McModel, Persona};
use crate::rng::{derive_seed, stream};
use crate::selector::Obfuscator;
use crate::surrogate::split_indices;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Rows per encoded chunk; chunks tile the persona with this stride.
    pub chunk: usize,
    pub kernel_heights: Vec<usize>,
    pub filters_per_kernel: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub test_fraction: f64,
    /// Largest tolerated share of one class.
    pub max_class_share: f64,
    pub optimizer: OptimizerConfig,
}

impl DetectorConfig {
    pub fn desk() -> Self {
        Self {
            chunk: 5,
            kernel_heights: vec![2, 3],
            filters_per_kernel: 8,
            hidden: vec![16],
            epochs: 15,
            batch: 32,
            test_fraction: 0.2,
            max_class_share: 0.6,
            optimizer: OptimizerConfig::sgd_momentum(0.01),
        }
    }

    pub fn paper() -> Self {
        Self { chunk: 20, kernel_heights: vec![3, 4, 5], filters_per_kernel: 100, hidden: vec![64], ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk == 0 || self.epochs == 0 || self.batch == 0 {
            return Err(CoreError::Config("detector chunk, epochs and batch must be positive".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(CoreError::Config(format!("detector test fraction {} outside (0,1)", self.test_fraction)));
        }
        if !(0.5..=1.0).contains(&self.max_class_share) {
            return Err(CoreError::Config("max_class_share must lie in [0.5, 1]".into()));
        }
        if self.kernel_heights.iter().any(|&k| k == 0 || k > self.chunk) {
            return Err(CoreError::Config("detector kernels must fit inside a chunk".into()));
        }
        self.optimizer.validate()?;
        Ok(())
    }
}

/// A persona summarized as its chunk matrices.
#[derive(Clone, Debug)]
pub struct DetectorSample {
    pub chunks: Vec<Tensor>,
    pub label: usize,
    pub weight: f64,
}

struct Pending {
    chunks: Vec<CnnCache>,
    argmax: Vec<usize>,
    head: HeadCache,
    dlogits: Vec<f64>,
}

/// Chunk encoder, mean+max pooling over chunks, dense softmax head.
#[derive(Serialize, Deserialize)]
pub struct DetectorModel {
    chunk: usize,
    encoder: TextCnnEncoder,
    head: DenseHead,
    #[serde(skip)]
    pending: Option<Pending>,
}

impl Clone for DetectorModel {
    fn clone(&self) -> Self {
        Self { chunk: self.chunk, encoder: self.encoder.clone(), head: self.head.clone(), pending: None }
    }
}

impl std::fmt::Debug for DetectorModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DetectorModel").field("chunk", &self.chunk).field("params", &self.num_params()).finish()
    }
}

impl DetectorModel {
    pub fn new<R: Rng + ?Sized>(config: &DetectorConfig, dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let cnn = CnnConfig { rows: config.chunk, cols: dim, kernel_heights: config.kernel_heights.clone(), filters_per_kernel: config.filters_per_kernel };
        let encoder = TextCnnEncoder::new(cnn, rng)?;
        let mut sizes = vec![2 * encoder.output_dim()];
        sizes.extend_from_slice(&config.hidden);
        sizes.push(2);
        let head = DenseHead::new(&sizes, Activation::Relu, FinalActivation::Softmax, rng)?;
        Ok(Self { chunk: config.chunk, encoder, head, pending: None })
    }

    /// Splits a `[len, d]` persona matrix into chunks, zero-padding the last one.
    pub fn chunks(&self, matrix: &Tensor) -> Result<Vec<Tensor>> {
        chunk_matrix(matrix, self.chunk)
    }

    fn pooled(&self, chunks: &[Tensor]) -> Result<(Vec<CnnCache>, Vec<f64>, Vec<usize>)> {
        if chunks.is_empty() {
            return Err(CoreError::InvalidInput("persona has no chunks".into()));
        }
        let caches = chunks.iter().map(|c| self.encoder.forward(c)).collect::<obfusim_nn::Result<Vec<_>>>()?;
        let m = self.encoder.output_dim();
        let n = caches.len() as f64;
        let mut features = vec![0.0; 2 * m];
        let mut best = vec![0usize; m];
        for j in 0..m {
            let mut top = f64::NEG_INFINITY;
            for (k, c) in caches.iter().enumerate() {
                let v = c.output()[j];
                features[j] += v / n;
                if v > top {
                    top = v;
                    best[j] = k;
                }
            }
            features[m + j] = top;
        }
        Ok((caches, features, best))
    }

    pub fn probabilities(&self, chunks: &[Tensor]) -> Result<Vec<f64>> {
        let (_, features, _) = self.pooled(chunks)?;
        Ok(softmax(&self.head.forward(&features)?.logits))
    }

    pub fn predict(&self, chunks: &[Tensor]) -> Result<u8> {
        Ok(argmax(&self.probabilities(chunks)?) as u8)
    }
}

pub fn chunk_matrix(matrix: &Tensor, chunk: usize) -> Result<Vec<Tensor>> {
    let shape = matrix.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(CoreError::InvalidInput(format!("persona matrix has shape {shape:?}")));
    }
    let (len, d) = (shape[0], shape[1]);
    let mut out = Vec::with_capacity(len.div_ceil(chunk));
    for start in (0..len).step_by(chunk) {
        let mut data = vec![0.0; chunk * d];
        let end = (start + chunk).min(len);
        data[..(end - start) * d].copy_from_slice(&matrix.data()[start * d..end * d]);
        out.push(Tensor::from_vec(&[chunk, d], data)?);
    }
    Ok(out)
}

impl Parameters for DetectorModel {
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

impl Objective for DetectorModel {
    type Sample = DetectorSample;

    fn forward(&mut self, sample: &DetectorSample) -> obfusim_nn::Result<f64> {
        let (chunks, features, argmax) = self.pooled(&sample.chunks).map_err(|e| NnError::Config(e.to_string()))?;
        let head = self.head.forward(&features)?;
        let (loss, dlogits) = cross_entropy(&head.logits, sample.label, sample.weight);
        if !loss.is_finite() {
            return Err(NnError::NonFinite("detector loss".into()));
        }
        self.pending = Some(Pending { chunks, argmax, head, dlogits });
        Ok(loss)
    }

    fn backward(&mut self) -> obfusim_nn::Result<()> {
        let p = self.pending.take().ok_or(NnError::NoForward)?;
        let dx = self.head.backward(&p.head, &p.dlogits);
        let m = self.encoder.output_dim();
        let n = p.chunks.len() as f64;
        for (k, cache) in p.chunks.iter().enumerate() {
            let dy: Vec<f64> = (0..m).map(|j| dx[j] / n + if p.argmax[j] == k { dx[m + j] } else { 0.0 }).collect();
            self.encoder.backward(cache, &dy, false);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectorReport {
    pub model: DetectorModel,
    /// `1 − accuracy` on the held-out split; this is the stealthiness.
    pub detection_error: f64,
    pub train_size: usize,
    pub test_size: usize,
}

/// Embedding matrix of the full visit sequence.
pub fn persona_matrix(universe: &UrlUniverse, persona: &Persona) -> Tensor {
    let ids = persona.ids();
    universe.window(&ids, ids.len().max(1))
}

/// Trains on labelled persona matrices (1 = obfuscated) with a split that
/// keeps the class ratio in both halves.
pub fn train_detector_on(samples: &[(Tensor, u8)], config: &DetectorConfig, seed: u64) -> Result<DetectorReport> {
    config.validate()?;
    let positives: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].1 == 1).collect();
    let negatives: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].1 != 1).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(CoreError::InvalidInput("detector needs both obfuscated and base personas".into()));
    }
    let share = positives.len().max(negatives.len()) as f64 / samples.len() as f64;
    if share > config.max_class_share {
        return Err(CoreError::InvalidInput(format!(
            "detector classes are imbalanced ({} obfuscated vs {} base)",
            positives.len(),
            negatives.len()
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (tag, class) in [positives, negatives].into_iter().enumerate() {
        let (tr, te) = split_indices(class.len(), config.test_fraction, derive_seed(seed, "detector-split", tag as u64));
        train.extend(tr.iter().map(|&i| class[i]));
        test.extend(te.iter().map(|&i| class[i]));
    }
    if test.is_empty() || train.is_empty() {
        return Err(CoreError::InvalidInput("too few personas for a held-out split".into()));
    }

    let dim = samples[0].0.shape()[1];
    let mut rng = stream(seed, "detector", 0);
    let mut model = DetectorModel::new(config, dim, &mut rng)?;
    let chunked = samples.iter().map(|(m, _)| model.chunks(m)).collect::<Result<Vec<_>>>()?;
    let mut optimizer = Optimizer::new(config.optimizer.clone())?;
    let mut order = train.clone();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let sample = DetectorSample { chunks: chunked[i].clone(), label: usize::from(samples[i].1 == 1), weight: scale };
                model.forward(&sample)?;
                model.backward()?;
            }
            optimizer.step(&mut model)?;
        }
    }
    let mut correct = 0usize;
    for &i in &test {
        if model.predict(&chunked[i])? == u8::from(samples[i].1 == 1) {
            correct += 1;
        }
    }
    Ok(DetectorReport { model, detection_error: 1.0 - correct as f64 / test.len() as f64, train_size: train.len(), test_size: test.len() })
}

/// Detector over obfuscated personas versus base personas.
pub fn train_detector(universe: &UrlUniverse, obfuscated: &[Persona], base: &[Persona], config: &DetectorConfig, seed: u64) -> Result<DetectorReport> {
    let samples: Vec<(Tensor, u8)> = obfuscated
        .iter()
        .map(|p| (persona_matrix(universe, p), 1))
        .chain(base.iter().map(|p| (persona_matrix(universe, p), 0)))
        .collect();
    train_detector_on(&samples, config, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StealthResult {
    pub approach: String,
    pub alpha: f64,
    pub detection_error: f64,
    pub personas_per_class: usize,
}

/// Obfuscated personas from `selector` against an equal number of unrelated
/// obfuscation-free personas of the same length.
pub fn stealth_eval(
    selector: &dyn Obfuscator,
    universe: &UrlUniverse,
    model: &McModel,
    eval: &EvalConfig,
    config: &DetectorConfig,
    seed: u64,
) -> Result<StealthResult> {
    let obfuscated = evaluation_personas(selector, universe, model, eval, derive_seed(seed, "stealth", 0))?;
    let base = evaluation_personas(&Control, universe, model, eval, derive_seed(seed, "stealth", 1))?;
    let report = train_detector(universe, &obfuscated, &base, config, derive_seed(seed, "stealth", 2))?;
    Ok(StealthResult {
        approach: selector.name().to_string(),
        alpha: selector.forced_alpha().unwrap_or(eval.persona.alpha),
        detection_error: report.detection_error,
        personas_per_class: eval.personas,
    })
}
