mod common;

use dta_core::data::AffinityRecord;
use dta_core::tensor::{ParamStore, Tensor};
use dta_core::train::{
    evaluate, saliency, train, AdamHyper, AdamState, Checkpoint, Predictor, StopReason, TrainConfig, TrainError,
    TrainOptions,
};

fn scalar_store(v: f64) -> ParamStore {
    let mut s = ParamStore::new();
    s.add("theta", Tensor::scalar(v)).unwrap();
    s
}

fn small_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig::micro();
    c.seed = seed;
    c.batch_size = 4;
    c.max_epochs = 3;
    c.patience = 3;
    c.learning_rate = 1e-3;
    c
}

#[test]
fn adam_first_step_is_exactly_lr() {
    for lr in [5e-4, 1e-3, 0.1] {
        let mut s = scalar_store(0.0);
        let mut a = AdamState::new(&s);
        let hp = AdamHyper { eps: 0.0, ..AdamHyper::new(lr, 0.0) };
        a.step(&mut s, &[Some(Tensor::scalar(1.0))], &hp).unwrap();
        assert_eq!(-s.value(s.id_of("theta").unwrap()).data()[0], lr);

        let mut s = scalar_store(0.0);
        let mut a = AdamState::new(&s);
        a.step(&mut s, &[Some(Tensor::scalar(1.0))], &AdamHyper::new(lr, 0.0)).unwrap();
        let moved = -s.value(s.id_of("theta").unwrap()).data()[0];
        assert!((moved - lr).abs() <= lr * 1e-8, "{moved} vs {lr}");
    }
}

/// Textbook Adam with L2 folded into the gradient, evaluated step by step.
fn reference_adam(theta0: f64, grads: &[f64], lr: f64, wd: f64) -> f64 {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut th, mut m, mut v) = (theta0, 0.0, 0.0);
    for (t, g) in grads.iter().enumerate() {
        let g = g + wd * th;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let k = (t + 1) as i32;
        let mh = m / (1.0 - b1.powi(k));
        let vh = v / (1.0 - b2.powi(k));
        th -= lr * mh / (vh.sqrt() + eps);
    }
    th
}

#[test]
fn adam_two_steps_match_reference() {
    for (theta0, g1, g2, wd) in [(0.3, 1.0, -0.5, 0.0), (-1.2, 0.2, 0.7, 1e-4), (2.0, -3.0, -3.0, 0.01)] {
        let mut s = scalar_store(theta0);
        let mut a = AdamState::new(&s);
        let hp = AdamHyper::new(5e-4, wd);
        a.step(&mut s, &[Some(Tensor::scalar(g1))], &hp).unwrap();
        a.step(&mut s, &[Some(Tensor::scalar(g2))], &hp).unwrap();
        let got = s.value(s.id_of("theta").unwrap()).data()[0];
        let want = reference_adam(theta0, &[g1, g2], 5e-4, wd);
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        assert_eq!(a.step, 2);
    }
}

#[test]
fn identical_seeds_give_identical_histories() {
    let data = common::teacher_records(12, 3);
    let run = || train(&small_config(7), &data[..8], &data[8..], TrainOptions::default()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.history.len(), 3);
    let c = train(&small_config(8), &data[..8], &data[8..], TrainOptions::default()).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn patience_zero_stops_after_one_epoch() {
    let data = common::teacher_records(8, 4);
    let mut cfg = small_config(1);
    cfg.patience = 0;
    let out = train(&cfg, &data, &data, TrainOptions::default()).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.stop, StopReason::Patience);
}

#[test]
fn max_steps_caps_training() {
    let data = common::teacher_records(8, 4);
    let out = train(&small_config(1), &data, &data, TrainOptions { max_steps: Some(3), resume: None }).unwrap();
    assert_eq!(out.stop, StopReason::MaxSteps);
    assert_eq!(out.last.progress.step, 3);
    assert_eq!(out.history.last().unwrap().steps, 3);
}

#[test]
fn best_checkpoint_holds_minimum_validation_loss() {
    let data = common::teacher_records(12, 5);
    let out = train(&small_config(2), &data[..8], &data[8..], TrainOptions::default()).unwrap();
    let min = out.history.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    let best = out.best.unwrap();
    assert_eq!(best.progress.best_val_loss, min);
    let report = evaluate(&best.predictor, &data[8..], "val").unwrap();
    assert_eq!(report.mse, min);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let data = common::teacher_records(12, 6);
    let out = train(&small_config(3), &data[..8], &data[8..], TrainOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("last.ckpt");
    out.last.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let before = out.last.predictor.predict_records(&data).unwrap();
    let after = back.predictor.predict_records(&data).unwrap();
    assert_eq!(
        before.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        after.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(back.progress, out.last.progress);
    assert_eq!(back.predictor.config, out.last.predictor.config);
    let (m0, m1) = (out.last.optimizer.as_ref().unwrap(), back.optimizer.as_ref().unwrap());
    assert_eq!(m0.step, m1.step);
    assert_eq!(m0.m, m1.m);
    assert_eq!(m0.v, m1.v);
    assert_eq!(evaluate(&out.last.predictor, &data, "all").unwrap(), evaluate(&back.predictor, &data, "all").unwrap());
}

#[test]
fn resume_continues_the_same_trajectory() {
    let data = common::teacher_records(12, 7);
    let mut cfg = small_config(4);
    cfg.max_epochs = 4;
    cfg.patience = 4;
    let full = train(&cfg, &data[..8], &data[8..], TrainOptions::default()).unwrap();
    let mut short = cfg.clone();
    short.max_epochs = 2;
    short.patience = 2;
    let first = train(&short, &data[..8], &data[8..], TrainOptions::default()).unwrap();
    let mut bytes = Vec::new();
    first.last.write_to(&mut bytes).unwrap();
    let resumed = Checkpoint::read_from(bytes.as_slice()).unwrap();
    let second = train(&cfg, &data[..8], &data[8..], TrainOptions { max_steps: None, resume: Some(resumed) }).unwrap();
    let joined: Vec<_> = first.history.iter().chain(&second.history).cloned().collect();
    assert_eq!(joined, full.history);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    assert!(matches!(Checkpoint::read_from(&b"NOTACKPT"[..]), Err(TrainError::Checkpoint(_))));
    let data = common::teacher_records(4, 8);
    let p = Predictor::for_records(small_config(0), &data).unwrap();
    let ck = Checkpoint { predictor: p, optimizer: None, progress: Default::default() };
    let mut bytes = Vec::new();
    ck.write_to(&mut bytes).unwrap();
    bytes[8] = 9;
    assert!(matches!(Checkpoint::read_from(bytes.as_slice()), Err(TrainError::Checkpoint(_))));
    bytes[8] = 1;
    bytes.truncate(bytes.len() - 1);
    assert!(Checkpoint::read_from(bytes.as_slice()).is_err());
}

#[test]
fn evaluation_is_pure_and_rejects_empty_input() {
    let data = common::teacher_records(6, 9);
    let p = Predictor::for_records(small_config(0), &data).unwrap();
    assert_eq!(evaluate(&p, &data, "S1").unwrap(), evaluate(&p, &data, "S1").unwrap());
    assert!(matches!(evaluate(&p, &[], "S1"), Err(TrainError::EmptyDataset(_))));
}

#[test]
fn unseen_tokens_are_reported_per_record() {
    let data = common::teacher_records(6, 10);
    let p = Predictor::for_records(small_config(0), &data).unwrap();
    let mut bad = data[..3].to_vec();
    bad[1].sequence.insert(0, 'U');
    bad[2].smiles.insert(0, '#');
    match p.predict_records(&bad) {
        Err(TrainError::Encode(list)) => assert_eq!(list.iter().map(|(i, _)| *i).collect::<Vec<_>>(), vec![1, 2]),
        other => panic!("expected an encoding error, got {other:?}"),
    }
}

#[test]
fn config_text_round_trips() {
    let mut cfg = TrainConfig::micro();
    cfg.mlp_hidden = vec![12, 6];
    cfg.seed = 99;
    let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
    assert_eq!(back, cfg);
    assert!(TrainConfig::from_text("learning_rate = 0").is_err());
    assert!(TrainConfig::from_text("nonsense = 1").is_err());
    assert!(TrainConfig::from_text("seed = 1\nseed = 2").is_err());
}

#[test]
fn divergence_keeps_last_good_state() {
    let data = common::teacher_records(8, 11);
    let mut cfg = small_config(5);
    cfg.learning_rate = 1e300;
    match train(&cfg, &data, &data, TrainOptions::default()) {
        Err(TrainError::Diverged { last_good, step, .. }) => {
            assert!(step >= 1);
            let preds = last_good.predictor.predict_records(&data).unwrap();
            assert!(preds.iter().all(|v| v.is_finite()));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

fn first_record() -> (Predictor, AffinityRecord) {
    let data = common::teacher_records(4, 12);
    (Predictor::for_records(small_config(0), &data).unwrap(), data[0].clone())
}

#[test]
fn saliency_map_is_normalized_and_centered() {
    let (p, rec) = first_record();
    let rep = saliency(&p, &rec).unwrap();
    let width = p.model.protein.receptive_width();
    assert_eq!(rep.scores.len(), p.model.config.target_len - width + 1);
    assert!(!rep.flat_zero);
    assert!(rep.scores.iter().all(|s| (0.0..=1.0).contains(&s.score)));
    assert!(rep.scores.iter().any(|s| s.score == 1.0));
    let residues: Vec<char> = rec.sequence.chars().collect();
    for (i, s) in rep.scores.iter().enumerate() {
        assert_eq!(s.position, i + (width - 1) / 2);
        assert_eq!(s.residue, residues.get(s.position).copied());
    }
    assert_eq!(rep.prediction, p.predict_records(&[rec]).unwrap()[0]);
}

#[test]
fn saliency_is_scale_free_in_the_output_layer() {
    let (mut p, rec) = first_record();
    let base = saliency(&p, &rec).unwrap();
    let (w, _) = p.model.fusion.output_layer();
    p.model.store.value_mut(w).data_mut().iter_mut().for_each(|v| *v *= 3.0);
    let scaled = saliency(&p, &rec).unwrap();
    for (a, b) in base.scores.iter().zip(&scaled.scores) {
        assert!((a.score - b.score).abs() < 1e-12);
    }
}

#[test]
fn saliency_is_flat_when_output_ignores_features() {
    let (mut p, rec) = first_record();
    let (w, _) = p.model.fusion.output_layer();
    p.model.store.value_mut(w).data_mut().iter_mut().for_each(|v| *v = 0.0);
    let rep = saliency(&p, &rec).unwrap();
    assert!(rep.flat_zero);
    assert!(rep.scores.iter().all(|s| s.score == 0.0));
}

#[test]
fn saliency_covers_long_targets() {
    let mut cfg = small_config(0);
    cfg.target_len = 1000;
    let mut data = common::teacher_records(2, 13);
    data[0].sequence = data[0].sequence.repeat(40);
    let p = Predictor::for_records(cfg, &data).unwrap();
    let rep = saliency(&p, &data[0]).unwrap();
    assert_eq!(rep.scores.len(), 1000 - p.model.protein.receptive_width() + 1);
}

/// Shifting every row of the feature map by ε·α keeps each channel's order,
/// so the top-k selection is fixed and the directional derivative of ŷ along
/// that shift must equal L'·|α|² (positive).
#[test]
fn saliency_channel_weights_match_directional_difference() {
    use dta_core::model::Mode;
    use dta_core::tensor::Graph;
    let (p, rec) = first_record();
    let rep = saliency(&p, &rec).unwrap();
    let m = &p.model;
    let pair = p.encode(&rec).unwrap();
    let mut g = Graph::new();
    let dual = m.drug.dual_view(&mut g, &m.store, &pair.drug_tokens, m.config.lambda, &mut Mode::Eval).unwrap();
    let (z_ins, z_dis) = (g.value(dual.z_ins).clone(), g.value(dual.z_dis).clone());
    let h_conv = m.protein.conv_stack(&mut g, &m.store, &pair.target_tokens, &mut Mode::Eval).unwrap();
    let h = g.value(h_conv).clone();
    let (rows, cols) = h.dims2();
    let alpha = &rep.channel_weights;
    let predict_shifted = |eps: f64| {
        let mut shifted = h.clone();
        for r in 0..rows {
            for c in 0..cols {
                shifted.data_mut()[r * cols + c] += eps * alpha[c];
            }
        }
        let mut g = Graph::new();
        let hv = g.constant(shifted);
        let sal = m.protein.extract_salient(&mut g, hv, m.config.top_k).unwrap();
        let (zi, zd) = (g.constant(z_ins.clone()), g.constant(z_dis.clone()));
        let head = m.head(&mut g, zi, zd, sal.values, &mut Mode::Eval).unwrap();
        g.value(head.prediction).data()[0]
    };
    assert_eq!(predict_shifted(0.0), rep.prediction);
    let eps = 1e-4 / alpha.iter().map(|a| a.abs()).fold(1e-12, f64::max);
    let fd = (predict_shifted(eps) - predict_shifted(-eps)) / (2.0 * eps);
    let expect = rows as f64 * alpha.iter().map(|a| a * a).sum::<f64>();
    assert!(fd > 0.0);
    assert!((fd - expect).abs() <= 1e-5 * expect, "fd {fd} vs {expect}");

    let raw: Vec<f64> = (0..rows).map(|r| (0..cols).map(|c| alpha[c] * h.at(r, c)).sum::<f64>().max(0.0)).collect();
    let max = raw.iter().copied().fold(0.0, f64::max);
    for (s, v) in rep.scores.iter().zip(raw) {
        assert!((s.score - v / max).abs() < 1e-12);
    }
}
