#![allow(dead_code)]

use dta_core::data::{AffinityRecord, UnknownPolicy, Vocabulary};
use dta_core::model::{DtaModel, ModelConfig};
use dta_core::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DRUG_ALPHABET: &str = "()=CNOS1c2n";
pub const TARGET_ALPHABET: &str = "ACDEFGHIKLMNPQRSTVWY";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_string(rng: &mut impl Rng, alphabet: &str, min: usize, max: usize) -> String {
    let chars: Vec<char> = alphabet.chars().collect();
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| chars[rng.gen_range(0..chars.len())]).collect()
}

pub fn vocabularies() -> (Vocabulary, Vocabulary) {
    (
        Vocabulary::from_tokens(DRUG_ALPHABET, UnknownPolicy::Reject).unwrap(),
        Vocabulary::from_tokens(TARGET_ALPHABET, UnknownPolicy::Reject).unwrap(),
    )
}

pub fn micro_config() -> ModelConfig {
    let (d, t) = vocabularies();
    ModelConfig::micro(d.table_size(), t.table_size())
}

/// Random tokens of exactly the configured lengths, padding included.
pub fn random_tokens(rng: &mut impl Rng, cfg: &ModelConfig) -> (Vec<usize>, Vec<usize>) {
    let (d, t) = vocabularies();
    let ds = random_string(rng, DRUG_ALPHABET, cfg.drug_len / 2, cfg.drug_len);
    let ts = random_string(rng, TARGET_ALPHABET, cfg.target_len / 2, cfg.target_len);
    (d.encode(&ds, cfg.drug_len).unwrap(), t.encode(&ts, cfg.target_len).unwrap())
}

/// `n` records whose affinities come from a frozen random micro model,
/// standardized to zero mean and unit variance.
pub fn teacher_records(n: usize, seed: u64) -> Vec<AffinityRecord> {
    let cfg = micro_config();
    let teacher = DtaModel::new(cfg.clone(), seed ^ 0x07ea_c4e5).unwrap();
    let (dv, tv) = vocabularies();
    let mut r = rng(seed);
    let mut recs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let smiles = random_string(&mut r, DRUG_ALPHABET, cfg.drug_len / 2, cfg.drug_len);
        let seq = random_string(&mut r, TARGET_ALPHABET, cfg.target_len / 2, cfg.target_len);
        let y = teacher
            .predict(&dv.encode(&smiles, cfg.drug_len).unwrap(), &tv.encode(&seq, cfg.target_len).unwrap())
            .unwrap();
        ys.push(y);
        recs.push(AffinityRecord::new(format!("D{i}"), smiles, format!("T{i}"), seq, 0.0).unwrap());
    }
    let mean = ys.iter().sum::<f64>() / n as f64;
    let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    for (rec, y) in recs.iter_mut().zip(ys) {
        rec.affinity = (y - mean) / sd;
    }
    recs
}

/// Result of a central finite-difference comparison.
#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
    pub worst: String,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of a scalar function of `inputs` against
/// central differences. `build` receives fresh leaves for the inputs and
/// returns the scalar output. Entries whose ±h evaluations change the
/// decision signature (a relu kink or top-k tie crossed) are skipped.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, floor: f64, mut build: F) -> FdReport
where
    F: FnMut(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &leaves);
    let signature = g.decision_signature();
    g.backward(out).unwrap();
    let grads: Vec<Tensor> = leaves.iter().map(|&v| g.grad(v).unwrap_or_else(|| Tensor::zeros(g.shape(v)))).collect();

    let mut eval = |vals: &[Tensor]| {
        let mut g = Graph::new();
        let leaves: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &leaves);
        (g.value(out).data()[0], g.decision_signature())
    };
    let mut report = FdReport::default();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[k].data_mut()[j] = orig + h;
            let (plus, sp) = eval(&work);
            work[k].data_mut()[j] = orig - h;
            let (minus, sm) = eval(&work);
            work[k].data_mut()[j] = orig;
            if sp != signature || sm != signature {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads[k].data()[j];
            let e = rel_err(analytic, numeric, floor);
            report.checked += 1;
            if e > report.max_rel {
                report.max_rel = e;
                report.worst = format!("input {k} entry {j}: analytic {analytic:e}, numeric {numeric:e}");
            }
        }
    }
    report
}

pub mod model_fd;
pub mod ops;

/// Per-column top-k by a full stable sort: descending value, ties to the lower row.
pub fn topk_oracle(x: &Tensor, k: usize) -> (Vec<f64>, Vec<usize>) {
    let (l, c) = x.dims2();
    let mut values = vec![0.0; k * c];
    let mut indices = vec![0; k * c];
    for col in 0..c {
        let mut rows: Vec<(f64, usize)> = (0..l).map(|r| (x.at(r, col), r)).collect();
        rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for (i, (v, r)) in rows.into_iter().take(k).enumerate() {
            values[i * c + col] = v;
            indices[i * c + col] = r;
        }
    }
    (values, indices)
}

/// Random L × C map; with `ties` the entries come from a five-value set.
pub fn random_map(rng: &mut impl Rng, ties: bool) -> Tensor {
    let (l, c) = (rng.gen_range(1..=12), rng.gen_range(1..=6));
    let data = (0..l * c).map(|_| if ties { rng.gen_range(0..5) as f64 } else { rng.gen_range(-1.0..1.0) }).collect();
    Tensor::new(vec![l, c], data).unwrap()
}

/// Checks that the Jacobian of `sum(topk(x))` is the selection indicator,
/// by central differences on a tie-free map. Returns the number of entries
/// compared.
pub fn topk_gradient_is_indicator(x: &Tensor, k: usize) -> std::result::Result<usize, String> {
    let eval = |t: &Tensor| {
        let mut g = Graph::new();
        let v = g.constant(t.clone());
        let (top, _) = g.topk_per_channel(v, k).unwrap();
        let s = g.sum(top);
        g.value(s).data()[0]
    };
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let (top, idx) = g.topk_per_channel(v, k).unwrap();
    let s = g.sum(top);
    g.backward(s).unwrap();
    let grad = g.grad(v).unwrap();
    let (_, c) = x.dims2();
    let mut selected = vec![false; x.len()];
    for (i, &r) in idx.iter().enumerate() {
        selected[r * c + i % c] = true;
    }
    let h = 1e-7;
    let mut work = x.clone();
    for j in 0..x.len() {
        let orig = x.data()[j];
        work.data_mut()[j] = orig + h;
        let p = eval(&work);
        work.data_mut()[j] = orig - h;
        let m = eval(&work);
        work.data_mut()[j] = orig;
        let fd = (p - m) / (2.0 * h);
        let expect = if selected[j] { 1.0 } else { 0.0 };
        if (fd - expect).abs() > 1e-6 || grad.data()[j] != expect {
            return Err(format!("entry {j}: fd {fd}, analytic {}, expected {expect}", grad.data()[j]));
        }
    }
    Ok(x.len())
}

/// Random sparse interaction grid of up to `max` drugs × `max` targets.
pub fn random_grid(rng: &mut impl Rng, max: usize) -> Vec<AffinityRecord> {
    let (nd, nt) = (rng.gen_range(1..=max), rng.gen_range(1..=max));
    let density: f64 = rng.gen_range(0.05..=1.0);
    let mut out = Vec::new();
    for d in 0..nd {
        for t in 0..nt {
            if rng.gen::<f64>() < density {
                out.push(
                    AffinityRecord::new(format!("d{d:02}"), "CC", format!("t{t:02}"), "MK", rng.gen_range(4.0..10.0))
                        .unwrap(),
                );
            }
        }
    }
    if out.is_empty() {
        out.push(AffinityRecord::new("d00", "CC", "t00", "MK", 5.0).unwrap());
    }
    out
}

/// Partition, disjointness and count invariants of a cold-start split.
pub fn split_invariants(
    records: &[AffinityRecord],
    b: &dta_core::data::SplitBundle,
    rho: f64,
) -> std::result::Result<(), String> {
    use std::collections::{BTreeSet, HashMap};
    let key = |r: &AffinityRecord| format!("{}|{}|{}", r.drug_id, r.target_id, r.affinity.to_bits());
    let mut counts: HashMap<String, i64> = HashMap::new();
    for r in records {
        *counts.entry(key(r)).or_default() += 1;
    }
    for (_, subset) in b.subsets() {
        for r in subset {
            *counts.entry(key(r)).or_default() -= 1;
        }
    }
    if counts.values().any(|&c| c != 0) {
        return Err("subsets do not partition the input".into());
    }
    let drugs: BTreeSet<&str> = records.iter().map(|r| r.drug_id.as_str()).collect();
    let targets: BTreeSet<&str> = records.iter().map(|r| r.target_id.as_str()).collect();
    let kd = (rho * drugs.len() as f64).floor() as usize;
    let kp = (rho * targets.len() as f64).floor() as usize;
    if b.unseen_drugs.len() != kd || b.unseen_targets.len() != kp {
        return Err(format!(
            "unseen counts {}/{} differ from floor(rho·n) = {kd}/{kp}",
            b.unseen_drugs.len(),
            b.unseen_targets.len()
        ));
    }
    let ud: BTreeSet<&str> = b.unseen_drugs.iter().map(String::as_str).collect();
    let ut: BTreeSet<&str> = b.unseen_targets.iter().map(String::as_str).collect();
    let train_drugs: BTreeSet<&str> = b.train.iter().map(|r| r.drug_id.as_str()).collect();
    let train_targets: BTreeSet<&str> = b.train.iter().map(|r| r.target_id.as_str()).collect();
    if b.train.iter().any(|r| ud.contains(r.drug_id.as_str()) || ut.contains(r.target_id.as_str())) {
        return Err("train contains an unseen entity".into());
    }
    if b.s2_unseen_drug.iter().any(|r| train_drugs.contains(r.drug_id.as_str()) || ut.contains(r.target_id.as_str())) {
        return Err("s2 record with a training drug or an unseen target".into());
    }
    if b.s3_unseen_target
        .iter()
        .any(|r| train_targets.contains(r.target_id.as_str()) || ud.contains(r.drug_id.as_str()))
    {
        return Err("s3 record with a training target or an unseen drug".into());
    }
    if b.s4_unseen_pair
        .iter()
        .any(|r| train_drugs.contains(r.drug_id.as_str()) || train_targets.contains(r.target_id.as_str()))
    {
        return Err("s4 record shares an entity with train".into());
    }
    if b.s2_unseen_drug
        .iter()
        .chain(&b.s3_unseen_target)
        .chain(&b.s4_unseen_pair)
        .chain(&b.val)
        .any(|r| !ud.contains(r.drug_id.as_str()) && !ut.contains(r.target_id.as_str()))
    {
        return Err("a seen×seen interaction left train".into());
    }
    Ok(())
}

/// Random (y, ŷ) pair of length 2..=200; a third of the cases draw both
/// vectors from a handful of levels so ties dominate.
pub fn random_ci_case(rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.gen_range(2..=200);
    let tie_heavy = rng.gen_bool(1.0 / 3.0);
    let levels = rng.gen_range(1..=5);
    let draw = |rng: &mut dyn rand::RngCore| -> f64 {
        if tie_heavy {
            rng.gen_range(0..levels) as f64
        } else {
            rng.gen_range(-3.0..3.0)
        }
    };
    let y = (0..n).map(|_| draw(rng)).collect();
    let yhat = (0..n).map(|_| draw(rng)).collect();
    (y, yhat)
}
