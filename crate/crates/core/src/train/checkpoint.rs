use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{encode, AffinityRecord, EncodedPair, UnknownPolicy, Vocabulary};
use crate::model::{DtaModel, ModelConfig};
use crate::tensor::Tensor;

use super::{AdamState, Result, TrainConfig, TrainError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DTACKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained network together with the vocabularies it was trained under.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub config: TrainConfig,
    pub drug_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
    pub model: DtaModel,
}

impl Predictor {
    /// Fresh network, initialized from `config.seed`.
    pub fn new(config: TrainConfig, drug_vocab: Vocabulary, target_vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let model = DtaModel::new(config.model_config_for(&drug_vocab, &target_vocab), config.seed)?;
        Ok(Self { config, drug_vocab, target_vocab, model })
    }

    /// Fresh network with vocabularies collected from `records`.
    pub fn for_records(config: TrainConfig, records: &[AffinityRecord]) -> Result<Self> {
        let policy = config.unknown_tokens;
        let drug = Vocabulary::build(records.iter().map(|r| r.smiles.as_str()), policy);
        let target = Vocabulary::build(records.iter().map(|r| r.sequence.as_str()), policy);
        Self::new(config, drug, target)
    }

    pub fn encode(&self, record: &AffinityRecord) -> Result<EncodedPair> {
        let c = &self.model.config;
        Ok(encode(record, &self.drug_vocab, &self.target_vocab, c.drug_len, c.target_len)?)
    }

    /// Encodes every record, or lists every failure.
    pub fn encode_all(&self, records: &[AffinityRecord]) -> Result<Vec<EncodedPair>> {
        let mut out = Vec::with_capacity(records.len());
        let mut failures = Vec::new();
        for (i, r) in records.iter().enumerate() {
            match self.encode(r) {
                Ok(p) => out.push(p),
                Err(e) => failures.push((i, format!("{} / {}: {e}", r.drug_id, r.target_id))),
            }
        }
        if failures.is_empty() {
            Ok(out)
        } else {
            Err(TrainError::Encode(failures))
        }
    }

    pub fn predict_pair(&self, pair: &EncodedPair) -> Result<f64> {
        Ok(self.model.predict(&pair.drug_tokens, &pair.target_tokens)?)
    }

    pub fn predict_records(&self, records: &[AffinityRecord]) -> Result<Vec<f64>> {
        self.encode_all(records)?.iter().map(|p| self.predict_pair(p)).collect()
    }
}

/// Counters that, with the seed, fix every later random draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    /// Completed epochs.
    pub epoch: u64,
    /// Completed optimizer steps.
    pub step: u64,
    pub best_val_loss: f64,
    pub epochs_since_improvement: u64,
}

impl Default for Progress {
    fn default() -> Self {
        Self { epoch: 0, step: 0, best_val_loss: f64::INFINITY, epochs_since_improvement: 0 }
    }
}

/// Model, optimizer moments and progress counters.
///
/// The random state is implied: every stream is keyed by the seed in
/// `predictor.config` and the epoch/step counters in `progress`.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub predictor: Predictor,
    pub optimizer: Option<AdamState>,
    pub progress: Progress,
}

#[derive(Serialize, Deserialize)]
struct VocabHeader {
    tokens: String,
    policy: UnknownPolicy,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    model: ModelConfig,
    drug_vocab: VocabHeader,
    target_vocab: VocabHeader,
    tensors: Vec<TensorEntry>,
    has_optimizer: bool,
}

fn bad(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_tensor<R: Read>(r: &mut R, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok(Tensor::new(shape.to_vec(), data)?)
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

impl Checkpoint {
    /// Layout: magic, version (u32), header length (u64), JSON header with
    /// configs, vocabularies and the tensor index, progress counters, then
    /// every tensor as little-endian f64 in index order, followed by the Adam
    /// first and second moments when present.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let p = &self.predictor;
        let header = Header {
            config: p.config.clone(),
            model: p.model.config.clone(),
            drug_vocab: VocabHeader { tokens: p.drug_vocab.tokens(), policy: p.drug_vocab.policy() },
            target_vocab: VocabHeader { tokens: p.target_vocab.tokens(), policy: p.target_vocab.policy() },
            tensors: p
                .model
                .store
                .iter()
                .map(|(_, prm)| TensorEntry { name: prm.name.clone(), shape: prm.value.shape().to_vec() })
                .collect(),
            has_optimizer: self.optimizer.is_some(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let pr = &self.progress;
        let adam_step = self.optimizer.as_ref().map_or(0, |a| a.step);
        for v in [pr.epoch, pr.step, pr.epochs_since_improvement, adam_step] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&pr.best_val_loss.to_le_bytes())?;
        for (_, prm) in p.model.store.iter() {
            write_tensor(&mut w, &prm.value)?;
        }
        if let Some(a) = &self.optimizer {
            for t in a.m.iter().chain(&a.v) {
                write_tensor(&mut w, t)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("file too short for a checkpoint"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let mut vb = [0u8; 4];
        r.read_exact(&mut vb)?;
        let version = u32::from_le_bytes(vb);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported format version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let len = read_u64(&mut r)? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
        let (epoch, step, since, adam_step) =
            (read_u64(&mut r)?, read_u64(&mut r)?, read_u64(&mut r)?, read_u64(&mut r)?);
        let best_val_loss = read_f64(&mut r)?;

        let drug_vocab = Vocabulary::from_tokens(&header.drug_vocab.tokens, header.drug_vocab.policy)?;
        let target_vocab = Vocabulary::from_tokens(&header.target_vocab.tokens, header.target_vocab.policy)?;
        let mut model = DtaModel::new(header.model.clone(), header.config.seed)?;
        if model.store.len() != header.tensors.len() {
            return Err(bad(format!(
                "{} tensors stored, architecture has {}",
                header.tensors.len(),
                model.store.len()
            )));
        }
        for (i, entry) in header.tensors.iter().enumerate() {
            let id = model.store.id_of(&entry.name).ok_or_else(|| bad(format!("unknown tensor `{}`", entry.name)))?;
            if id.index() != i {
                return Err(bad(format!("tensor `{}` is out of order", entry.name)));
            }
            let t = read_tensor(&mut r, &entry.shape)?;
            model.store.set(id, t).map_err(|e| bad(format!("tensor `{}`: {e}", entry.name)))?;
        }
        let optimizer = if header.has_optimizer {
            let mut read_all =
                || -> Result<Vec<Tensor>> { header.tensors.iter().map(|e| read_tensor(&mut r, &e.shape)).collect() };
            let m = read_all()?;
            let v = read_all()?;
            Some(AdamState { step: adam_step, m, v })
        } else {
            None
        };
        Ok(Self {
            predictor: Predictor { config: header.config, drug_vocab, target_vocab, model },
            optimizer,
            progress: Progress { epoch, step, best_val_loss, epochs_since_improvement: since },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
