//! Records, tokenization, ingestion and splitting protocols.

mod load;
mod split;
mod vocab;

pub use load::{
    detect_delimiter, load_dataset, read_records, write_records, AffinityTransform, ColumnSchema, ErrorPolicy,
    LoadOptions, LoadOutcome, RowError,
};
pub use split::{cold_start_split, cold_start_split_with_ratios, random_split, RandomSplit, SplitBundle, SplitRatios};
pub use vocab::{UnknownPolicy, Vocabulary, PAD_INDEX};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{field} must not be empty")]
    EmptyField { field: &'static str },
    #[error("affinity must be finite, got {0}")]
    NonFiniteAffinity(f64),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("unknown token {token:?} at position {position}")]
    UnknownToken { token: char, position: usize },
    #[error("Kd must be positive, got {0}")]
    NonPositiveKd(f64),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("empty dataset")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One observed (drug, target, affinity) cell of the interaction matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityRecord {
    pub drug_id: String,
    pub smiles: String,
    pub target_id: String,
    pub sequence: String,
    pub affinity: f64,
}

impl AffinityRecord {
    pub fn new(
        drug_id: impl Into<String>,
        smiles: impl Into<String>,
        target_id: impl Into<String>,
        sequence: impl Into<String>,
        affinity: f64,
    ) -> Result<Self> {
        let rec = Self {
            drug_id: drug_id.into(),
            smiles: smiles.into(),
            target_id: target_id.into(),
            sequence: sequence.into(),
            affinity,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.smiles.is_empty() {
            return Err(DataError::EmptyField { field: "smiles" });
        }
        if self.sequence.is_empty() {
            return Err(DataError::EmptyField { field: "sequence" });
        }
        if self.drug_id.is_empty() {
            return Err(DataError::EmptyField { field: "drug_id" });
        }
        if self.target_id.is_empty() {
            return Err(DataError::EmptyField { field: "target_id" });
        }
        if !self.affinity.is_finite() {
            return Err(DataError::NonFiniteAffinity(self.affinity));
        }
        Ok(())
    }
}

/// Token sequences of fixed length ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    pub drug_tokens: Vec<usize>,
    pub target_tokens: Vec<usize>,
    pub affinity: f64,
}

/// Character-level encoding, right-padded with [`PAD_INDEX`] and right-truncated.
pub fn encode(
    record: &AffinityRecord,
    drug_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    drug_len: usize,
    target_len: usize,
) -> Result<EncodedPair> {
    Ok(EncodedPair {
        drug_tokens: drug_vocab.encode(&record.smiles, drug_len)?,
        target_tokens: target_vocab.encode(&record.sequence, target_len)?,
        affinity: record.affinity,
    })
}

/// `-log10(Kd / 1e9)` for a dissociation constant given in nanomolar.
pub fn pkd_transform(kd_nanomolar: f64) -> Result<f64> {
    if !(kd_nanomolar > 0.0) || !kd_nanomolar.is_finite() {
        return Err(DataError::NonPositiveKd(kd_nanomolar));
    }
    Ok(-(kd_nanomolar / 1e9).log10())
}
