use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dta_core::data::{
    cold_start_split, load_dataset, random_split, write_records, AffinityRecord, AffinityTransform, ErrorPolicy,
    LoadOptions,
};
use dta_core::metrics::AggregateReport;
use dta_core::train::{evaluate, saliency, train, Checkpoint, TrainConfig, TrainError, TrainOptions};
use serde_json::json;

#[derive(Parser)]
#[command(name = "dta", version, about = "Drug-target affinity: split, train, evaluate, predict, explain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitMode {
    Cold,
    Random,
}

#[derive(clap::Args)]
struct DataFlags {
    /// Affinity column holds Kd in nM; convert to pKd on load.
    #[arg(long)]
    kd: bool,
    /// Skip malformed rows (reported on stderr) instead of failing.
    #[arg(long)]
    skip_bad_rows: bool,
}

impl DataFlags {
    fn options(&self) -> LoadOptions {
        LoadOptions {
            on_error: if self.skip_bad_rows { ErrorPolicy::SkipAndReport } else { ErrorPolicy::FailFast },
            affinity: if self.kd { AffinityTransform::KdNanomolarToPkd } else { AffinityTransform::AsIs },
            ..LoadOptions::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Partition a dataset into labelled subsets.
    Split {
        #[arg(long)]
        data: PathBuf,
        /// Fraction of drugs and of targets held out as unseen (cold mode).
        #[arg(long, default_value_t = 0.2)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "cold")]
        mode: SplitMode,
        /// Train,val,test fractions for random mode.
        #[arg(long, default_value = "0.8,0.1,0.1")]
        fractions: String,
        #[command(flatten)]
        load: DataFlags,
    },
    /// Fit a model with early stopping on the validation set.
    Train {
        /// `key = value` config file; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override a config key, e.g. `--set max_epochs=5`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Stop after this many optimizer steps.
        #[arg(long)]
        max_steps: Option<u64>,
        #[command(flatten)]
        load: DataFlags,
    },
    /// Score one or more checkpoints on a dataset.
    Eval {
        /// Repeat to aggregate runs as mean (std).
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        scenario: String,
        /// Text report path; a `.json` file is written alongside.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        load: DataFlags,
    },
    /// Write the dataset back with a `prediction` column.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        load: DataFlags,
    },
    /// Per-residue Grad-CAM scores for one drug/target pair.
    Saliency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        drug_id: String,
        #[arg(long)]
        target_id: String,
        #[arg(long)]
        data: PathBuf,
        /// CSV of position,residue,score; the full report goes to a `.json` alongside.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        load: DataFlags,
    },
}

fn load(path: &Path, flags: &DataFlags) -> Result<(Vec<AffinityRecord>, u8)> {
    let outcome = load_dataset(path, &flags.options()).with_context(|| format!("loading {}", path.display()))?;
    for skipped in &outcome.skipped {
        eprintln!("{}: skipped row {}: {}", path.display(), skipped.row, skipped.message);
    }
    if outcome.records.is_empty() {
        bail!("{} contains no usable records", path.display());
    }
    Ok((outcome.records, outcome.delimiter))
}

fn write_table(path: &Path, delimiter: u8, records: &[AffinityRecord], extra: &[(&str, Vec<String>)]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_records(file, delimiter, records, extra)?;
    Ok(())
}

fn json_sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn parse_fractions(text: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("--fractions {text:?}"))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => bail!("--fractions needs three comma-separated values, got {text:?}"),
    }
}

fn run_split(
    data: &Path,
    rho: f64,
    seed: u64,
    out: &Path,
    mode: SplitMode,
    fractions: &str,
    flags: &DataFlags,
) -> Result<()> {
    let (records, delimiter) = load(data, flags)?;
    fs::create_dir_all(out)?;
    let (labelled, meta): (Vec<(&str, Vec<AffinityRecord>)>, _) = match mode {
        SplitMode::Cold => {
            let b = cold_start_split(&records, rho, seed)?;
            for w in &b.warnings {
                eprintln!("warning: {w}");
            }
            let meta = json!({
                "mode": "cold",
                "seed": seed,
                "rho": rho,
                "records": records.len(),
                "active_drugs": b.active_drugs,
                "active_targets": b.active_targets,
                "unseen_drugs": b.unseen_drugs,
                "unseen_targets": b.unseen_targets,
                "counts": b.subsets().iter().map(|(l, s)| (l.to_string(), json!(s.len()))).collect::<serde_json::Map<_, _>>(),
                "warnings": b.warnings,
            });
            (b.subsets().into_iter().map(|(l, s)| (l, s.to_vec())).collect(), meta)
        }
        SplitMode::Random => {
            let f = parse_fractions(fractions)?;
            let s = random_split(&records, f, seed)?;
            let meta = json!({
                "mode": "random",
                "seed": seed,
                "fractions": [f.0, f.1, f.2],
                "records": records.len(),
                "counts": {"train": s.train.len(), "val": s.val.len(), "test": s.test.len()},
            });
            (vec![("train", s.train), ("val", s.val), ("test", s.test)], meta)
        }
    };

    let ext = if delimiter == b'\t' { "tsv" } else { "csv" };
    let mut all = Vec::new();
    let mut labels = Vec::new();
    for (label, subset) in &labelled {
        write_table(&out.join(format!("{label}.{ext}")), delimiter, subset, &[])?;
        all.extend(subset.iter().cloned());
        labels.extend(std::iter::repeat_n(label.to_string(), subset.len()));
        println!("{label}: {}", subset.len());
    }
    write_table(&out.join(format!("manifest.{ext}")), delimiter, &all, &[("split_label", labels)])?;
    write_json(&out.join("split_meta.json"), &meta)?;
    Ok(())
}

fn resolve_config(config: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
    }
    for item in overrides {
        let (k, v) = item.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {item:?}"))?;
        cfg.set(k, v).with_context(|| format!("--set {item}"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[allow(clippy::too_many_arguments)]
fn run_train(
    config: Option<&Path>,
    train_path: &Path,
    val_path: &Path,
    out: &Path,
    resume: Option<&Path>,
    overrides: &[String],
    max_steps: Option<u64>,
    flags: &DataFlags,
) -> Result<()> {
    let cfg = resolve_config(config, overrides)?;
    let (train_set, _) = load(train_path, flags)?;
    let (val_set, _) = load(val_path, flags)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.conf"), cfg.to_text())?;
    let resume = resume.map(Checkpoint::load).transpose().context("loading --resume checkpoint")?;

    let outcome = match train(&cfg, &train_set, &val_set, TrainOptions { max_steps, resume }) {
        Ok(o) => o,
        Err(TrainError::Diverged { epoch, step, reason, last_good }) => {
            let path = out.join("last_good.ckpt");
            last_good.save(&path)?;
            bail!(
                "training diverged at epoch {epoch}, step {step}: {reason}; last good state saved to {}",
                path.display()
            );
        }
        Err(e) => return Err(e.into()),
    };

    let mut history = fs::File::create(out.join("history.jsonl"))?;
    for rec in &outcome.history {
        writeln!(history, "{}", serde_json::to_string(rec)?)?;
        println!(
            "epoch {:>4}  steps {:>6}  train {:.5}  val {:.5}{}",
            rec.epoch,
            rec.steps,
            rec.train_loss,
            rec.val_loss,
            if rec.improved { "  *" } else { "" }
        );
    }
    outcome.last.save(out.join("last.ckpt"))?;
    match &outcome.best {
        Some(best) => {
            best.save(out.join("best.ckpt"))?;
            println!(
                "stopped: {:?}; best val MSE {:.5} at epoch {}",
                outcome.stop, best.progress.best_val_loss, best.progress.epoch
            );
        }
        None => {
            println!("stopped: {:?}; no epoch improved on the resumed best loss, best.ckpt not written", outcome.stop)
        }
    }
    Ok(())
}

fn run_eval(
    checkpoints: &[PathBuf],
    data: &Path,
    scenario: &str,
    report: Option<&Path>,
    flags: &DataFlags,
) -> Result<()> {
    let (records, _) = load(data, flags)?;
    let mut runs = Vec::new();
    for path in checkpoints {
        let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        runs.push(evaluate(&ck.predictor, &records, scenario)?);
    }
    let (text, value) = if let [single] = &runs[..] {
        (single.to_text(), serde_json::to_value(single)?)
    } else {
        let agg = AggregateReport::from_runs(&runs).expect("at least one checkpoint");
        (agg.to_text(), json!({ "aggregate": agg, "runs": runs }))
    };
    print!("{text}");
    if let Some(path) = report {
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
        write_json(&json_sidecar(path), &value)?;
    }
    Ok(())
}

fn run_predict(checkpoint: &Path, data: &Path, out: &Path, flags: &DataFlags) -> Result<()> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (records, delimiter) = load(data, flags)?;
    let preds = ck.predictor.predict_records(&records)?;
    write_table(out, delimiter, &records, &[("prediction", preds.iter().map(f64::to_string).collect())])?;
    println!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

fn run_saliency(
    checkpoint: &Path,
    drug_id: &str,
    target_id: &str,
    data: &Path,
    out: &Path,
    flags: &DataFlags,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (records, _) = load(data, flags)?;
    let record = records
        .iter()
        .find(|r| r.drug_id == drug_id && r.target_id == target_id)
        .with_context(|| format!("no record for drug {drug_id:?} and target {target_id:?} in {}", data.display()))?;
    let rep = saliency(&ck.predictor, record)?;
    let mut w = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    writeln!(w, "position,residue,score")?;
    for s in &rep.scores {
        writeln!(w, "{},{},{}", s.position, s.residue.map(String::from).unwrap_or_default(), s.score)?;
    }
    write_json(&json_sidecar(out), &serde_json::to_value(&rep)?)?;
    if rep.flat_zero {
        eprintln!("warning: saliency map is zero everywhere");
    }
    println!("prediction {:.5}; {} positions written to {}", rep.prediction, rep.scores.len(), out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Split { data, rho, seed, out, mode, fractions, load } => {
            run_split(&data, rho, seed, &out, mode, &fractions, &load)
        }
        Command::Train { config, train, val, out, resume, overrides, max_steps, load } => {
            run_train(config.as_deref(), &train, &val, &out, resume.as_deref(), &overrides, max_steps, &load)
        }
        Command::Eval { checkpoint, data, scenario, report, load } => {
            run_eval(&checkpoint, &data, &scenario, report.as_deref(), &load)
        }
        Command::Predict { checkpoint, data, out, load } => run_predict(&checkpoint, &data, &out, &load),
        Command::Saliency { checkpoint, drug_id, target_id, data, out, load } => {
            run_saliency(&checkpoint, &drug_id, &target_id, &data, &out, &load)
        }
    }
}
