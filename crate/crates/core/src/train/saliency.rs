use serde::{Deserialize, Serialize};

use crate::data::AffinityRecord;
use crate::model::Mode;
use crate::tensor::Graph;

use super::{Predictor, Result, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidueScore {
    /// 0-based residue index at the center of the feature-map window.
    pub position: usize,
    /// `None` where the window center falls in padding.
    pub residue: Option<char>,
    pub score: f64,
}

/// Grad-CAM map over the protein feature map for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyReport {
    pub drug_id: String,
    pub target_id: String,
    pub prediction: f64,
    /// One entry per feature-map row, in order.
    pub scores: Vec<ResidueScore>,
    /// Per-channel weights α_c (mean gradient over rows).
    pub channel_weights: Vec<f64>,
    /// Set when the rectified map is zero everywhere; scores are then all zero.
    pub flat_zero: bool,
}

/// Channel weights are the mean gradient of ŷ over feature-map rows; the
/// map is the rectified weighted channel sum, scaled so its maximum is 1.
/// Row `p` is reported at residue `p + (w − 1)/2` where `w` is the width of
/// the last (valid) convolution.
pub fn saliency(predictor: &Predictor, record: &AffinityRecord) -> Result<SaliencyReport> {
    let pair = predictor.encode(record)?;
    let model = &predictor.model;
    let mut g = Graph::new();
    let trace = model.forward(&mut g, &pair.drug_tokens, &pair.target_tokens, &mut Mode::Eval)?;
    let prediction = g.value(trace.prediction).data()[0];
    g.backward(trace.prediction)?;
    let h = g.value(trace.h_conv).clone();
    let (rows, cols) = h.dims2();
    let grad = g
        .grad(trace.h_conv)
        .ok_or_else(|| TrainError::Config("feature map is not connected to the prediction".into()))?;

    let mut alpha = vec![0.0; cols];
    for p in 0..rows {
        for c in 0..cols {
            alpha[c] += grad.at(p, c);
        }
    }
    alpha.iter_mut().for_each(|a| *a /= rows as f64);
    let mut map: Vec<f64> = (0..rows).map(|p| (0..cols).map(|c| alpha[c] * h.at(p, c)).sum::<f64>().max(0.0)).collect();
    let max = map.iter().copied().fold(0.0, f64::max);
    let flat_zero = max <= 0.0;
    if !flat_zero {
        map.iter_mut().for_each(|m| *m /= max);
    }

    let offset = (model.protein.receptive_width() - 1) / 2;
    let residues: Vec<char> = record.sequence.chars().collect();
    let scores = map
        .into_iter()
        .enumerate()
        .map(|(p, score)| {
            let position = p + offset;
            ResidueScore { position, residue: residues.get(position).copied(), score }
        })
        .collect();
    Ok(SaliencyReport {
        drug_id: record.drug_id.clone(),
        target_id: record.target_id.clone(),
        prediction,
        scores,
        channel_weights: alpha,
        flat_zero,
    })
}
