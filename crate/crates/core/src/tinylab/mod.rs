// SPDX-License-Identifier: MIT OR Apache-2.0

//! A small decoder-only transformer with full activation tracing, residual
//! patching, MLP ablation and a regularized training objective with a
//! hand-written backward pass.

mod forward;
mod params;
mod toy;
mod train;

pub use forward::{
    accuracy, answer_prob, answer_prob_logits, batch_answer_probs, direct_effect, filter_de_pairs, forward,
    forward_with, layer_sweep, mean_mlp_sq_norm, mlp_zero_run, predicted_label, prob_of, Alignment,
    DirectEffect, ForwardTrace, Intervention, LayerClass, LayerSweep,
};
pub use params::{
    load_checkpoint, save_checkpoint, Block, Params, Probe, Probes, TensorSet, TinyLMConfig, TrainState, INIT_STD, LN_EPS,
    TOY_INIT_STD,
};
pub use toy::{decode, toy_config, toy_gold, toy_task, token_id, vocabulary, SEQ_LEN};
pub use train::{
    finetune, grad_check, hls_loss, objective_fn, total_loss, total_loss_and_grad, ula_loss, GradCheck, HlsPositions, LossParts,
    RegularizationConfig, StepLog, TrainConfig, PRETRAIN_CHECK_TOLERANCE,
};

use crate::error::{Error, Result};
use crate::model::Label;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationSet {
    pub items: Vec<(Vec<usize>, Label)>,
    /// (original, altered) item indices.
    pub pair_index: Option<Vec<(usize, usize)>>,
}

impl EvaluationSet {
    pub fn validate(&self, max_seq: usize) -> Result<()> {
        if let Some(i) = self.items.iter().position(|(t, _)| t.len() > max_seq) {
            return Err(Error::SequenceTooLong {
                len: self.items[i].0.len(),
                max: max_seq,
            });
        }
        for &(o, a) in self.pair_index.iter().flatten() {
            if o >= self.items.len() || a >= self.items.len() {
                return Err(Error::Invalid(format!("pair ({o}, {a}) out of range")));
            }
        }
        Ok(())
    }

    /// True when every indexed pair has equal-length sequences.
    pub fn pairs_equal_length(&self) -> bool {
        self.pair_index
            .iter()
            .flatten()
            .all(|&(o, a)| self.items[o].0.len() == self.items[a].0.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeRow {
    pub pair: usize,
    pub effect: DirectEffect,
}

/// Direct effect at every layer `0..=L` for every pair, with the altered
/// item's gold as the target.
pub fn de_sweep(params: &Params, set: &EvaluationSet, alignment: Alignment) -> Result<Vec<DeRow>> {
    let pairs = set
        .pair_index
        .as_ref()
        .ok_or_else(|| Error::Invalid("evaluation set has no pair index".into()))?;
    let mut rows = Vec::new();
    for (k, &(o, a)) in pairs.iter().enumerate() {
        for l in 0..=params.cfg.n_layers {
            let effect = direct_effect(params, &set.items[o].0, &set.items[a].0, l, set.items[a].1, alignment)?;
            rows.push(DeRow { pair: k, effect });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests;
