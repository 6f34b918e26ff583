//! Finite-difference check of the full model with respect to every parameter.

use dta_core::model::{DtaModel, Mode, StepNoise};
use dta_core::tensor::{Graph, Tensor};

use super::{rel_err, FdReport};

/// Training-mode squared error for one pair with the noise of `(seed, 0, 0)`
/// replayed on every evaluation.
fn loss(model: &DtaModel, drug: &[usize], target: &[usize], y: f64, seed: u64) -> (Vec<u64>, f64) {
    let mut g = Graph::new();
    let mut noise = StepNoise::for_item(seed, 0, 0);
    let trace = model.forward(&mut g, drug, target, &mut Mode::Train(&mut noise)).unwrap();
    let obs = g.constant(Tensor::scalar(y));
    let l = g.mse_loss(trace.prediction, obs).unwrap();
    (g.decision_signature(), g.value(l).data()[0])
}

/// Central differences over every entry of every parameter. Pinned padding
/// rows are skipped, as are entries whose perturbation crosses a relu kink or
/// changes a top-k selection.
pub fn check_model(
    model: &mut DtaModel,
    drug: &[usize],
    target: &[usize],
    y: f64,
    seed: u64,
    h: f64,
    floor: f64,
) -> FdReport {
    let mut g = Graph::new();
    let mut noise = StepNoise::for_item(seed, 0, 0);
    let trace = model.forward(&mut g, drug, target, &mut Mode::Train(&mut noise)).unwrap();
    let obs = g.constant(Tensor::scalar(y));
    let l = g.mse_loss(trace.prediction, obs).unwrap();
    let signature = g.decision_signature();
    g.backward(l).unwrap();
    let ids: Vec<_> = model.store.ids().collect();
    let grads: Vec<Tensor> = ids
        .iter()
        .map(|&id| g.param_grad(id).unwrap_or_else(|| Tensor::zeros(model.store.value(id).shape())))
        .collect();
    drop(g);

    let mut report = FdReport::default();
    for (k, &id) in ids.iter().enumerate() {
        let pinned = model.store.get(id).pinned_row;
        let cols = *model.store.value(id).shape().last().unwrap();
        for j in 0..model.store.value(id).len() {
            if pinned == Some(j / cols) {
                continue;
            }
            let orig = model.store.value(id).data()[j];
            model.store.value_mut(id).data_mut()[j] = orig + h;
            let (sp, plus) = loss(model, drug, target, y, seed);
            model.store.value_mut(id).data_mut()[j] = orig - h;
            let (sm, minus) = loss(model, drug, target, y, seed);
            model.store.value_mut(id).data_mut()[j] = orig;
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
                report.worst = format!("{}[{j}]: analytic {analytic:e}, numeric {numeric:e}", model.store.get(id).name);
            }
        }
    }
    report
}
