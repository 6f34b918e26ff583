//! Regression and ranking metrics.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} observed vs {1} predicted")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("concordance index undefined: all observed values are equal")]
    AllObservedEqual,
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
}

pub type Result<T> = std::result::Result<T, MetricError>;

fn check(y: &[f64], yhat: &[f64], needed: usize) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(MetricError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.len() < needed {
        return Err(MetricError::TooFew { needed, got: y.len() });
    }
    Ok(())
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat, 1)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat, 1)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Concordant, tied and total counts over pairs with distinct observed values.
/// The index is `(concordant + tied / 2) / total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub concordant: u64,
    pub tied: u64,
    pub total: u64,
}

impl PairCounts {
    fn index(self) -> Result<f64> {
        if self.total == 0 {
            return Err(MetricError::AllObservedEqual);
        }
        Ok((2 * self.concordant + self.tied) as f64 / (2 * self.total) as f64)
    }
}

/// All-pairs definition, O(N²).
pub fn concordance_pairs_quadratic(y: &[f64], yhat: &[f64]) -> PairCounts {
    let mut c = PairCounts { concordant: 0, tied: 0, total: 0 };
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] > y[j] {
                c.total += 1;
                match yhat[i].partial_cmp(&yhat[j]) {
                    Some(Ordering::Greater) => c.concordant += 1,
                    Some(Ordering::Equal) => c.tied += 1,
                    _ => {}
                }
            }
        }
    }
    c
}

/// Same counts in O(N log N): sweep observed values in increasing groups and
/// query a Fenwick tree over prediction ranks.
pub fn concordance_pairs_fast(y: &[f64], yhat: &[f64]) -> PairCounts {
    let n = y.len();
    let mut ranks_sorted: Vec<f64> = yhat.to_vec();
    ranks_sorted.sort_by(f64::total_cmp);
    ranks_sorted.dedup();
    let rank = |v: f64| ranks_sorted.partition_point(|&r| r.total_cmp(&v) == Ordering::Less);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));

    let mut tree = vec![0u64; ranks_sorted.len() + 1];
    let prefix = |tree: &[u64], mut i: usize| {
        let mut s = 0;
        while i > 0 {
            s += tree[i];
            i &= i - 1;
        }
        s
    };
    let mut c = PairCounts { concordant: 0, tied: 0, total: 0 };
    let mut inserted = 0u64;
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end < n && y[order[end]] == y[order[start]] {
            end += 1;
        }
        for &i in &order[start..end] {
            let r = rank(yhat[i]);
            let below = prefix(&tree, r);
            let at_or_below = prefix(&tree, r + 1);
            c.concordant += below;
            c.tied += at_or_below - below;
            c.total += inserted;
        }
        for &i in &order[start..end] {
            let mut r = rank(yhat[i]) + 1;
            while r < tree.len() {
                tree[r] += 1;
                r += r & r.wrapping_neg();
            }
            inserted += 1;
        }
        start = end;
    }
    c
}

/// Concordance index with ties in the prediction credited one half.
pub fn concordance_index(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat, 2)?;
    concordance_pairs_fast(y, yhat).index()
}

/// Reference O(N²) evaluation of [`concordance_index`].
pub fn concordance_index_quadratic(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat, 2)?;
    concordance_pairs_quadratic(y, yhat).index()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pearson(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat, 2)?;
    let (my, mp) = (mean(y), mean(yhat));
    let sxy: f64 = y.iter().zip(yhat).map(|(a, b)| (a - my) * (b - mp)).sum();
    let sxx: f64 = y.iter().map(|a| (a - my).powi(2)).sum();
    let syy: f64 = yhat.iter().map(|b| (b - mp).powi(2)).sum();
    if sxx == 0.0 {
        return Err(MetricError::ZeroVariance("observed values"));
    }
    if syy == 0.0 {
        return Err(MetricError::ZeroVariance("predictions"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Components of r_m².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rm2Parts {
    pub r2: f64,
    pub r02: f64,
    pub rm2: f64,
}

pub fn rm2_parts(y: &[f64], yhat: &[f64]) -> Result<Rm2Parts> {
    check(y, yhat, 3)?;
    let r = pearson(y, yhat)?;
    let r2 = r * r;
    let k = y.iter().zip(yhat).map(|(a, b)| a * b).sum::<f64>() / yhat.iter().map(|b| b * b).sum::<f64>();
    let my = mean(y);
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - k * b).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|a| (a - my).powi(2)).sum();
    let r02 = 1.0 - ss_res / ss_tot;
    Ok(Rm2Parts { r2, r02, rm2: r2 * (1.0 - (r2 - r02).abs().sqrt()) })
}

/// `r² · (1 − sqrt|r² − r0²|)` with r0² from the through-origin fit of y on ŷ.
pub fn rm2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    Ok(rm2_parts(y, yhat)?.rm2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scenario: String,
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    pub ci: f64,
    pub rm2: f64,
    pub pearson_r: f64,
}

impl EvaluationReport {
    pub fn compute(scenario: impl Into<String>, y: &[f64], yhat: &[f64]) -> Result<Self> {
        check(y, yhat, 3)?;
        Ok(Self {
            scenario: scenario.into(),
            n: y.len(),
            mse: mse(y, yhat)?,
            mae: mae(y, yhat)?,
            ci: concordance_index(y, yhat)?,
            rm2: rm2(y, yhat)?,
            pearson_r: pearson(y, yhat)?,
        })
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario = {}", self.scenario);
        let _ = writeln!(s, "n = {}", self.n);
        for (k, v) in
            [("mse", self.mse), ("mae", self.mae), ("ci", self.ci), ("rm2", self.rm2), ("pearson_r", self.pearson_r)]
        {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Mean and sample standard deviation of each metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub scenario: String,
    pub runs: usize,
    pub mean: EvaluationReport,
    pub std: EvaluationReport,
}

impl AggregateReport {
    pub fn from_runs(reports: &[EvaluationReport]) -> Option<Self> {
        let first = reports.first()?;
        let n = reports.len() as f64;
        let stat = |f: fn(&EvaluationReport) -> f64| {
            let m = reports.iter().map(f).sum::<f64>() / n;
            let var = if reports.len() > 1 {
                reports.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (m, var.sqrt())
        };
        let fields: [fn(&EvaluationReport) -> f64; 5] = [|r| r.mse, |r| r.mae, |r| r.ci, |r| r.rm2, |r| r.pearson_r];
        let [mse, mae, ci, rm2, pr] = fields.map(stat);
        let build = |pick: fn((f64, f64)) -> f64| EvaluationReport {
            scenario: first.scenario.clone(),
            n: first.n,
            mse: pick(mse),
            mae: pick(mae),
            ci: pick(ci),
            rm2: pick(rm2),
            pearson_r: pick(pr),
        };
        Some(Self { scenario: first.scenario.clone(), runs: reports.len(), mean: build(|p| p.0), std: build(|p| p.1) })
    }

    /// `key = mean (std)` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario = {}", self.scenario);
        let _ = writeln!(s, "runs = {}", self.runs);
        let _ = writeln!(s, "n = {}", self.mean.n);
        let pairs = [
            ("mse", self.mean.mse, self.std.mse),
            ("mae", self.mean.mae, self.std.mae),
            ("ci", self.mean.ci, self.std.ci),
            ("rm2", self.mean.rm2, self.std.rm2),
            ("pearson_r", self.mean.pearson_r, self.std.pearson_r),
        ];
        for (k, m, sd) in pairs {
            let _ = writeln!(s, "{k} = {m} ({sd})");
        }
        s
    }
}
