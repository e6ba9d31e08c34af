use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::WlacExample;
use crate::error::Result;
use crate::model::{Codec, JointModel, LossBatch};
use crate::nn::{Graph, ParamId};
use crate::seed;

use super::{batch_losses, check_alpha, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub rel_error: f64,
}

/// Compares back-propagated gradients of the combined loss with central
/// differences on at least `samples` scalars. Every parameter tensor that
/// receives a gradient contributes one entry; the rest are drawn uniformly.
pub fn gradient_check(
    model: &mut JointModel,
    codec: &Codec,
    batch: &[WlacExample],
    alpha: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<GradCheckEntry>> {
    const EPS: f64 = 1e-5;
    check_alpha(alpha)?;
    let cfg = TrainConfig::default();
    let refs: Vec<&WlacExample> = batch.iter().collect();
    let batch = LossBatch::from_examples(codec, model.config(), &refs)?;
    let combined = |m: &JointModel| -> Result<f64> {
        let (w, t) = batch_losses(m, &batch, cfg.smoothing())?;
        Ok(alpha * w + (1.0 - alpha) * t)
    };

    let grads = {
        let mut g = Graph::new(model.params());
        let nodes = model.loss_nodes(&mut g, &batch, true, true, cfg.smoothing())?;
        g.backward(&[(nodes.wlac.expect("requested"), alpha), (nodes.mt.expect("requested"), 1.0 - alpha)])
    };

    let mut rng = seed::rng(seed);
    let tensors: Vec<(ParamId, usize)> = grads.iter().map(|(id, t)| (id, t.len())).collect();
    let mut picks: BTreeSet<(ParamId, usize)> = tensors.iter().map(|&(id, len)| (id, rng.random_range(0..len))).collect();
    let total: usize = tensors.iter().map(|t| t.1).sum();
    while picks.len() < samples.min(total) {
        let mut r = rng.random_range(0..total);
        for &(id, len) in &tensors {
            if r < len {
                picks.insert((id, r));
                break;
            }
            r -= len;
        }
    }

    let mut out = Vec::with_capacity(picks.len());
    for (id, index) in picks {
        let analytic = grads.get(id).expect("sampled from gradients").data()[index];
        let original = model.params().get(id).data()[index];
        model.params_mut().get_mut(id).data_mut()[index] = original + EPS;
        let up = combined(model)?;
        model.params_mut().get_mut(id).data_mut()[index] = original - EPS;
        let down = combined(model)?;
        model.params_mut().get_mut(id).data_mut()[index] = original;
        let numeric = (up - down) / (2.0 * EPS);
        let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        out.push(GradCheckEntry {
            param: model.params().name(id).to_owned(),
            index,
            analytic,
            numeric,
            rel_error,
        });
    }
    Ok(out)
}
