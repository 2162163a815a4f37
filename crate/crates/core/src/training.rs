//! Teacher-forced training with validation early stopping, and the binary
//! checkpoint format.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderGraph;
use crate::error::{Error, Result};
use crate::kg::Instance;
use crate::model::{Model, ModelConfig};
use crate::numerics::{AdamState, Tape, Tensor};
use crate::preprocess::{build_vocab, delexicalize, relexicalize, DelexMapping, Vocabulary};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MGCN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beam: usize,
    pub max_len: usize,
    pub seed: u64,
    pub patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
    pub delexicalize: bool,
    pub min_freq: usize,
    /// Global gradient-norm bound; off when `None`.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            learning_rate: 3e-4,
            batch_size: 16,
            beam: 10,
            max_len: 100,
            seed: 1,
            patience: 5,
            min_delta: 1e-4,
            max_epochs: 100,
            delexicalize: true,
            min_freq: 1,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size, patience and max_epochs must be >= 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.min_delta.is_finite() && self.min_delta >= 0.0) {
            return Err(Error::Config("min_delta must be non-negative".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }

    /// Applies delexicalization when enabled; the mapping is `None` otherwise.
    pub fn preprocess(&self, instance: &Instance) -> (Instance, Option<DelexMapping>) {
        if self.delexicalize {
            let (delexed, mapping) = delexicalize(instance);
            (delexed, Some(mapping))
        } else {
            (instance.clone(), None)
        }
    }
}

/// An instance turned into encoder input plus target tokens.
#[derive(Debug, Clone)]
pub struct Example {
    pub graph: EncoderGraph,
    pub reference: Vec<String>,
}

impl Example {
    pub fn new(model: &Model, instance: &Instance) -> Result<Self> {
        Ok(Example {
            graph: model.prepare(&instance.triples)?,
            reference: instance.reference.clone(),
        })
    }
}

/// Summed negative log-likelihood and token count over `examples`.
pub fn total_nll(model: &Model, examples: &[Example]) -> Result<(f64, usize)> {
    let mut nll = 0.0;
    let mut tokens = 0;
    for ex in examples {
        let mut tape = Tape::new(&model.store);
        let (loss, count) = model.loss(&mut tape, &ex.graph, &ex.reference)?;
        nll += tape.value(loss).data()[0];
        tokens += count;
    }
    Ok((nll, tokens))
}

fn perplexity_of(model: &Model, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("perplexity of an empty set".into()));
    }
    let (nll, tokens) = total_nll(model, examples)?;
    Ok((nll / tokens as f64).exp())
}

/// `exp(total NLL / total tokens)` with end-of-sequence counted. Instances
/// must already be preprocessed the way the model was trained.
pub fn perplexity(model: &Model, instances: &[Instance]) -> Result<f64> {
    let examples = instances
        .iter()
        .map(|i| Example::new(model, i))
        .collect::<Result<Vec<_>>>()?;
    perplexity_of(model, &examples)
}

/// Generates a description for `instance` with the configured beam, undoing
/// delexicalization. Also returns relexicalization warnings.
pub fn describe(model: &Model, config: &TrainConfig, instance: &Instance) -> Result<(String, Vec<String>)> {
    let (prepared, mapping) = config.preprocess(instance);
    let graph = model.prepare(&prepared.triples)?;
    let best = model.generate(&graph, config.beam, config.max_len)?;
    let words = model.words(&best.tokens);
    Ok(match mapping {
        Some(mapping) => relexicalize(&words, &mapping),
        None => (words.join(" "), Vec::new()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_perplexity: f64,
    pub valid_perplexity: f64,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub epochs: Vec<EpochLog>,
    /// Epoch (1-based) whose parameters the checkpoint holds.
    pub best_epoch: usize,
    pub warnings: Vec<String>,
}

fn examples_for(
    config: &TrainConfig,
    model: &Model,
    instances: &[Instance],
    split: &str,
    warnings: &mut Vec<String>,
) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        if inst.triples.is_empty() {
            let msg = format!("{split} instance {i}: empty triple set, skipped");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let (prepared, _) = config.preprocess(inst);
        out.push(Example::new(model, &prepared)?);
    }
    if out.is_empty() {
        return Err(Error::NoTrainableInstances(split.to_string()));
    }
    Ok(out)
}

/// Trains from scratch and returns the parameters with the lowest
/// validation perplexity.
pub fn train(config: &TrainConfig, train: &[Instance], valid: &[Instance]) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::InvalidArgument("training and validation splits must be non-empty".into()));
    }
    let delexed: Vec<Instance> = train
        .iter()
        .filter(|i| !i.triples.is_empty())
        .map(|i| config.preprocess(i).0)
        .collect();
    let vocab = build_vocab(&delexed, config.min_freq);
    let mut model = Model::new(config.model.clone(), vocab, config.seed)?;

    let mut warnings = Vec::new();
    let train_set = examples_for(config, &model, train, "training", &mut warnings)?;
    let valid_set = examples_for(config, &model, valid, "validation", &mut warnings)?;

    let mut adam = AdamState::new(&model.store, config.learning_rate);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut epochs = Vec::new();
    let mut best = None::<(f64, usize, crate::numerics::ParamStore, u64)>;
    let mut reference = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_nll = 0.0;
        let mut epoch_tokens = 0;
        for batch in order.chunks(config.batch_size) {
            let batch_tokens: usize = batch.iter().map(|&i| train_set[i].reference.len() + 1).sum();
            for &i in batch {
                let ex = &train_set[i];
                let mut tape = Tape::new(&model.store);
                let (loss, count) = model.loss(&mut tape, &ex.graph, &ex.reference)?;
                epoch_nll += tape.value(loss).data()[0];
                epoch_tokens += count;
                let scaled = tape.scale(loss, 1.0 / batch_tokens as f64);
                let grads = tape.backward(scaled)?;
                model.store.accumulate(&grads);
            }
            if let Some(max_norm) = config.clip_norm {
                model.store.clip_grad_norm(max_norm);
            }
            adam.step(&mut model.store);
        }

        let train_ppl = (epoch_nll / epoch_tokens as f64).exp();
        let valid_ppl = perplexity_of(&model, &valid_set)?;
        log::info!("epoch {epoch}: train ppl {train_ppl:.4}, valid ppl {valid_ppl:.4}");
        epochs.push(EpochLog {
            epoch,
            train_perplexity: train_ppl,
            valid_perplexity: valid_ppl,
            steps: adam.steps(),
        });

        if best.as_ref().map_or(true, |(b, ..)| valid_ppl < *b) {
            best = Some((valid_ppl, epoch, model.store.clone(), adam.steps()));
        }
        if valid_ppl <= reference - config.min_delta {
            reference = valid_ppl;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log::info!("no improvement for {stale} epochs, stopping");
                break;
            }
        }
    }

    let (best_ppl, best_epoch, store, steps) = match best {
        Some(b) => b,
        // Every epoch produced a NaN perplexity.
        None => (f64::NAN, epochs.len(), model.store.clone(), adam.steps()),
    };
    model.store = store;
    let checkpoint = ModelCheckpoint::from_model(
        &model,
        config.clone(),
        steps,
        best_ppl.is_finite().then_some(best_ppl),
    );
    Ok(TrainOutcome {
        checkpoint,
        epochs,
        best_epoch,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    /// Named tensors in registration order.
    pub params: Vec<(String, Tensor)>,
    pub step: u64,
    pub best_perplexity: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    vocab: Vocabulary,
    step: u64,
    best_perplexity: Option<f64>,
    tensors: Vec<TensorEntry>,
}

fn corrupt(offset: usize, reason: impl Into<String>) -> Error {
    Error::CorruptCheckpoint {
        offset: offset as u64,
        reason: reason.into(),
    }
}

impl ModelCheckpoint {
    pub fn from_model(model: &Model, config: TrainConfig, step: u64, best_perplexity: Option<f64>) -> Self {
        ModelCheckpoint {
            version: CHECKPOINT_VERSION,
            config,
            vocab: model.vocab.clone(),
            params: model
                .store
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
            step,
            best_perplexity,
        }
    }

    /// Rebuilds the model; every stored tensor must match a registered
    /// parameter by name and shape.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.model.clone(), self.vocab.clone(), self.config.seed)?;
        if model.store.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for (name, tensor) in &self.params {
            let id = model
                .store
                .by_name(name)
                .ok_or_else(|| Error::Config(format!("unknown parameter `{name}` in checkpoint")))?;
            let slot = model.store.value_mut(id);
            if slot.shape() != tensor.shape() {
                return Err(Error::shape("checkpoint load", slot.shape(), tensor.shape()));
            }
            *slot = tensor.clone();
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let tensors = self
            .params
            .iter()
            .map(|(name, t)| {
                let entry = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 8 * t.len() as u64;
                entry
            })
            .collect();
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            step: self.step,
            best_perplexity: self.best_perplexity,
            tensors,
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.params {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt(0, "missing MGCN magic bytes"));
        }
        if bytes.len() < 16 {
            return Err(corrupt(bytes.len(), "truncated preamble"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| corrupt(8, format!("header length {header_len} exceeds file size")))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| corrupt(16, format!("bad header: {e}")))?;
        let vocab = header.vocab.rebuild_index();

        let payload = &bytes[header_end..];
        let mut params = Vec::with_capacity(header.tensors.len());
        let mut expected = 0usize;
        for entry in header.tensors {
            if entry.offset as usize != expected {
                return Err(corrupt(
                    header_end + expected,
                    format!("tensor `{}` is out of index order", entry.name),
                ));
            }
            let count: usize = entry.shape.iter().product();
            let end = expected + 8 * count;
            if end > payload.len() {
                return Err(corrupt(
                    header_end + payload.len(),
                    format!("payload of tensor `{}` is truncated", entry.name),
                ));
            }
            let data = payload[expected..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new(entry.shape, data)
                .map_err(|e| corrupt(header_end + expected, e.to_string()))?;
            params.push((entry.name, tensor));
            expected = end;
        }
        if expected != payload.len() {
            return Err(corrupt(header_end + expected, "trailing bytes after last tensor"));
        }
        Ok(ModelCheckpoint {
            version,
            config: header.config,
            vocab,
            params,
            step: header.step,
            best_perplexity: header.best_perplexity,
        })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut file = fs::File::create(&tmp)?;
            file.write_all(&bytes)?;
            file.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{synth_corpus, SynthSpec};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                hidden: 6,
                layers: 1,
                ..ModelConfig::default()
            },
            batch_size: 4,
            max_epochs: 2,
            max_len: 8,
            ..TrainConfig::default()
        }
    }

    fn corpus(n: usize) -> Vec<Instance> {
        synth_corpus(&SynthSpec {
            seed: 3,
            instances: n,
            entities: 10,
            relations: 3,
            triples_per_instance: 3,
        })
        .unwrap()
    }

    #[test]
    fn checkpoint_bytes_round_trip() {
        let data = corpus(4);
        let out = train(&tiny_config(), &data, &data).unwrap();
        let bytes = out.checkpoint.to_bytes().unwrap();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, out.checkpoint);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncated_and_versioned_files_are_rejected() {
        let data = corpus(2);
        let bytes = train(&tiny_config(), &data, &data).unwrap().checkpoint.to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            ModelCheckpoint::from_bytes(cut),
            Err(Error::CorruptCheckpoint { .. })
        ));
        let mut bumped = bytes.clone();
        bumped[4] = 9;
        assert!(matches!(
            ModelCheckpoint::from_bytes(&bumped),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
        assert!(matches!(
            ModelCheckpoint::from_bytes(b"NOPE"),
            Err(Error::CorruptCheckpoint { offset: 0, .. })
        ));
    }

    #[test]
    fn empty_triple_sets_are_skipped() {
        let mut data = corpus(3);
        data[1].triples.clear();
        let out = train(&tiny_config(), &data, &data).unwrap();
        assert_eq!(out.warnings.len(), 2);

        for inst in &mut data {
            inst.triples.clear();
        }
        assert!(matches!(
            train(&tiny_config(), &data, &data),
            Err(Error::NoTrainableInstances(_))
        ));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let data = corpus(2);
        let config = TrainConfig {
            patience: 0,
            ..tiny_config()
        };
        assert!(matches!(train(&config, &data, &data), Err(Error::Config(_))));
    }
}
