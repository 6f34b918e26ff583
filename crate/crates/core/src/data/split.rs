use std::collections::{BTreeSet, HashSet};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::Serialize;

use super::{AffinityRecord, DataError, Result};
use crate::rng::{stream_rng, Stream};

/// Unseen-entity ratios for drugs and targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitRatios {
    pub drug: f64,
    pub target: f64,
}

impl SplitRatios {
    pub fn shared(rho: f64) -> Self {
        Self { drug: rho, target: rho }
    }
}

/// Output of the cold-start protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub train: Vec<AffinityRecord>,
    pub val: Vec<AffinityRecord>,
    pub s2_unseen_drug: Vec<AffinityRecord>,
    pub s3_unseen_target: Vec<AffinityRecord>,
    pub s4_unseen_pair: Vec<AffinityRecord>,
    pub seed: u64,
    pub rho: SplitRatios,
    pub active_drugs: usize,
    pub active_targets: usize,
    pub unseen_drugs: Vec<String>,
    pub unseen_targets: Vec<String>,
    pub warnings: Vec<String>,
}

impl SplitBundle {
    /// The five subsets with their manifest labels.
    pub fn subsets(&self) -> [(&'static str, &[AffinityRecord]); 5] {
        [
            ("train", &self.train),
            ("val", &self.val),
            ("s2_unseen_drug", &self.s2_unseen_drug),
            ("s3_unseen_target", &self.s3_unseen_target),
            ("s4_unseen_pair", &self.s4_unseen_pair),
        ]
    }

    pub fn total(&self) -> usize {
        self.subsets().iter().map(|(_, s)| s.len()).sum()
    }
}

fn check_ratio(name: &str, rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(DataError::Parameter(format!("{name} ratio must lie in (0, 1), got {rho}")));
    }
    Ok(())
}

/// Cold-start split with one ratio for drugs and targets.
pub fn cold_start_split(records: &[AffinityRecord], rho: f64, seed: u64) -> Result<SplitBundle> {
    cold_start_split_with_ratios(records, SplitRatios::shared(rho), seed)
}

/// Entity-level partition followed by interaction allocation.
///
/// `floor(rho * n)` drugs and targets are drawn as unseen. Seen×seen
/// interactions go to train; every other interaction draws `r ~ U(0, 1)` and
/// goes to validation when `r < 0.5`, otherwise to its scenario bucket.
/// Records are visited sorted by (drug_id, target_id) so the generator is
/// consumed in a fixed order.
pub fn cold_start_split_with_ratios(records: &[AffinityRecord], rho: SplitRatios, seed: u64) -> Result<SplitBundle> {
    if records.is_empty() {
        return Err(DataError::Empty);
    }
    check_ratio("drug", rho.drug)?;
    check_ratio("target", rho.target)?;

    let mut sorted: Vec<&AffinityRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.drug_id, &a.target_id).cmp(&(&b.drug_id, &b.target_id)));

    let drugs: Vec<&str> = sorted.iter().map(|r| r.drug_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let targets: Vec<&str> = sorted.iter().map(|r| r.target_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let k_d = (rho.drug * drugs.len() as f64).floor() as usize;
    let k_p = (rho.target * targets.len() as f64).floor() as usize;

    let mut rng = stream_rng(seed, Stream::Split, 0);
    let mut pick = |pool: &[&str], k: usize| -> Vec<String> {
        let mut chosen: Vec<String> =
            index::sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i].to_string()).collect();
        chosen.sort();
        chosen
    };
    let unseen_drugs = pick(&drugs, k_d);
    let unseen_targets = pick(&targets, k_p);
    let ud: HashSet<&str> = unseen_drugs.iter().map(String::as_str).collect();
    let up: HashSet<&str> = unseen_targets.iter().map(String::as_str).collect();

    let mut warnings = Vec::new();
    if k_d == 0 {
        warnings.push(format!("drug ratio {} of {} drugs yields no unseen drugs", rho.drug, drugs.len()));
    }
    if k_p == 0 {
        warnings.push(format!("target ratio {} of {} targets yields no unseen targets", rho.target, targets.len()));
    }

    let mut bundle = SplitBundle {
        train: Vec::new(),
        val: Vec::new(),
        s2_unseen_drug: Vec::new(),
        s3_unseen_target: Vec::new(),
        s4_unseen_pair: Vec::new(),
        seed,
        rho,
        active_drugs: drugs.len(),
        active_targets: targets.len(),
        unseen_drugs: Vec::new(),
        unseen_targets: Vec::new(),
        warnings,
    };
    for rec in sorted {
        let new_drug = ud.contains(rec.drug_id.as_str());
        let new_target = up.contains(rec.target_id.as_str());
        if !new_drug && !new_target {
            bundle.train.push(rec.clone());
            continue;
        }
        let r: f64 = rng.gen();
        let bucket = if r < 0.5 {
            &mut bundle.val
        } else {
            match (new_drug, new_target) {
                (true, false) => &mut bundle.s2_unseen_drug,
                (false, true) => &mut bundle.s3_unseen_target,
                _ => &mut bundle.s4_unseen_pair,
            }
        };
        bucket.push(rec.clone());
    }
    bundle.unseen_drugs = unseen_drugs;
    bundle.unseen_targets = unseen_targets;
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomSplit {
    pub train: Vec<AffinityRecord>,
    pub val: Vec<AffinityRecord>,
    pub test: Vec<AffinityRecord>,
}

/// Shuffled interaction-level split. Train and validation sizes are rounded
/// to the nearest integer; test takes the remainder.
pub fn random_split(records: &[AffinityRecord], fractions: (f64, f64, f64), seed: u64) -> Result<RandomSplit> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(*f > 0.0)) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(DataError::Parameter(format!("fractions must be positive and sum to 1, got ({ft}, {fv}, {fs})")));
    }
    let n = records.len();
    let n_train = ((ft * n as f64).round() as usize).min(n);
    let n_val = ((fv * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Split, 0));
    let take = |range: std::ops::Range<usize>| order[range].iter().map(|&i| records[i].clone()).collect();
    Ok(RandomSplit { train: take(0..n_train), val: take(n_train..n_train + n_val), test: take(n_train + n_val..n) })
}
