//! Browser bindings for three pieces of the model: SES sampling, per-channel
//! top-k pooling over a protein feature map, and the cold-start split.
//!
//! Each operation is a plain Rust function returning a serializable result
//! (tested natively) plus a thin `#[wasm_bindgen]` wrapper for the page.

use dta_core::data::{cold_start_split, AffinityRecord, UnknownPolicy, Vocabulary};
use dta_core::model::{ses_sample, Mode, ModelConfig, ProteinEncoder, StepNoise};
use dta_core::rng::{stream_rng, Stream};
use dta_core::tensor::{Graph, ParamStore, Tensor};
use rand::Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const AMINO_ACIDS: &str = "ACDEFGHIKLMNPQRSTVWY";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SesHistogram {
    pub sigma: f64,
    /// `bins + 1` bin edges spanning mu ± 4σ.
    pub edges: Vec<f64>,
    pub counts: Vec<u32>,
    pub mean: f64,
    pub std: f64,
}

/// Draws `draws` samples of z = mu + σ·ε with σ = λ·exp(½ relu(h_var)).
pub fn ses_histogram(
    mu: f64,
    h_var: f64,
    lambda: f64,
    draws: u32,
    bins: usize,
    seed: u64,
) -> Result<SesHistogram, String> {
    if draws == 0 || bins == 0 {
        return Err("draws and bins must be positive".into());
    }
    let mut noise = StepNoise::for_item(seed, 0, 0);
    let eps = noise.normal(draws as usize);
    let mut g = Graph::new();
    let m = g.constant(Tensor::filled(&[draws as usize], mu));
    let h = g.constant(Tensor::filled(&[draws as usize], h_var));
    let (z, sigma) = ses_sample(&mut g, m, h, lambda, Some(eps)).map_err(|e| e.to_string())?;
    let sigma = g.value(sigma).data()[0];
    let z = g.value(z).data();

    let (lo, hi) = (mu - 4.0 * sigma, mu + 4.0 * sigma);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0u32; bins];
    for &v in z {
        if (lo..hi).contains(&v) {
            counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
    }
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(SesHistogram { sigma, edges, counts, mean, std })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopkView {
    pub residues: String,
    /// Feature-map rows (`L'`) by channels, row-major.
    pub feature_map: Vec<f64>,
    pub rows: usize,
    pub channels: usize,
    pub k: usize,
    /// Residue index of each feature-map row (window center).
    pub row_centers: Vec<usize>,
    /// K × channels, row-major.
    pub values: Vec<f64>,
    /// Feature-map row of each selected value, K × channels.
    pub positions: Vec<usize>,
}

/// Runs a randomly initialized protein encoder over `sequence` and pools the
/// top `k` activations of each channel.
pub fn topk_view(sequence: &str, k: usize, channels: usize, seed: u64) -> Result<TopkView, String> {
    let seq: String = sequence.chars().filter(|c| !c.is_whitespace()).map(|c| c.to_ascii_uppercase()).collect();
    let vocab = Vocabulary::from_tokens(AMINO_ACIDS, UnknownPolicy::MapToUnknown).map_err(|e| e.to_string())?;
    let cfg = ModelConfig {
        target_len: seq.chars().count().max(12),
        target_channels: channels,
        top_k: k,
        ..ModelConfig::micro(4, vocab.table_size())
    };
    let mut store = ParamStore::new();
    let encoder =
        ProteinEncoder::new(&mut store, &cfg, &mut stream_rng(seed, Stream::Init, 0)).map_err(|e| e.to_string())?;
    let tokens = vocab.encode(&seq, cfg.target_len).map_err(|e| e.to_string())?;
    let mut g = Graph::new();
    let h = encoder.conv_stack(&mut g, &store, &tokens, &mut Mode::Eval).map_err(|e| e.to_string())?;
    let (rows, cols) = g.value(h).dims2();
    if k == 0 || k > rows {
        return Err(format!("k must lie in 1..={rows} for this sequence"));
    }
    let salient = encoder.extract_salient(&mut g, h, k).map_err(|e| e.to_string())?;
    let offset = (encoder.receptive_width() - 1) / 2;
    Ok(TopkView {
        residues: seq,
        feature_map: g.value(h).data().to_vec(),
        rows,
        channels: cols,
        k,
        row_centers: (0..rows).map(|r| r + offset).collect(),
        values: g.value(salient.values).data().to_vec(),
        positions: salient.source_positions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitGrid {
    pub drugs: usize,
    pub targets: usize,
    /// drugs × targets cells: "" for no interaction, otherwise the subset label.
    pub cells: Vec<String>,
    pub unseen_drugs: Vec<usize>,
    pub unseen_targets: Vec<usize>,
    pub counts: Vec<(String, usize)>,
}

/// Random interaction grid at `density`, split with the cold-start protocol.
pub fn split_grid(drugs: usize, targets: usize, density: f64, rho: f64, seed: u64) -> Result<SplitGrid, String> {
    if drugs == 0 || targets == 0 || drugs > 60 || targets > 60 {
        return Err("grid sides must lie in 1..=60".into());
    }
    let mut rng = stream_rng(seed, Stream::Split, 1);
    let mut records = Vec::new();
    for d in 0..drugs {
        for t in 0..targets {
            if rng.gen::<f64>() < density {
                let rec = AffinityRecord::new(format!("{d:03}"), "C", format!("{t:03}"), "A", 0.0);
                records.push(rec.map_err(|e| e.to_string())?);
            }
        }
    }
    if records.is_empty() {
        return Err("no interactions at this density; raise it".into());
    }
    let bundle = cold_start_split(&records, rho, seed).map_err(|e| e.to_string())?;
    let mut cells = vec![String::new(); drugs * targets];
    let idx = |id: &str| id.parse::<usize>().expect("numeric id");
    for (label, subset) in bundle.subsets() {
        for r in subset {
            cells[idx(&r.drug_id) * targets + idx(&r.target_id)] = label.to_string();
        }
    }
    Ok(SplitGrid {
        drugs,
        targets,
        cells,
        unseen_drugs: bundle.unseen_drugs.iter().map(|d| idx(d)).collect(),
        unseen_targets: bundle.unseen_targets.iter().map(|t| idx(t)).collect(),
        counts: bundle.subsets().iter().map(|(l, s)| (l.to_string(), s.len())).collect(),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<JsValue, JsValue> {
    let v = r.map_err(|e| JsValue::from_str(&e))?;
    serde_wasm_bindgen::to_value(&v).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = sesHistogram)]
pub fn ses_histogram_js(
    mu: f64,
    h_var: f64,
    lambda: f64,
    draws: u32,
    bins: usize,
    seed: u32,
) -> Result<JsValue, JsValue> {
    to_js(ses_histogram(mu, h_var, lambda, draws, bins, seed as u64))
}

#[wasm_bindgen(js_name = topkView)]
pub fn topk_view_js(sequence: &str, k: usize, channels: usize, seed: u32) -> Result<JsValue, JsValue> {
    to_js(topk_view(sequence, k, channels, seed as u64))
}

#[wasm_bindgen(js_name = splitGrid)]
pub fn split_grid_js(drugs: usize, targets: usize, density: f64, rho: f64, seed: u32) -> Result<JsValue, JsValue> {
    to_js(split_grid(drugs, targets, density, rho, seed as u64))
}
