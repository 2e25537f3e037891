//! Masked-language-model pretraining of the encoder on an IPA word corpus.
//! Cross-entropy is computed only at masked positions; after the configured
//! epochs the encoder is frozen and becomes a fixed feature extractor.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phonosym_core::corpus::PretrainCorpus;
use phonosym_core::tokenizer::TokenizerRules;

use crate::encoder::{FrozenEncoder, TransformerEncoder};
use crate::optim::{Adam, AdamConfig};
use crate::tape::Tape;
use crate::vocab::TokenVocab;
use crate::NnError;

/// BERT-style corruption: each position is selected with `mask_prob`; a
/// selected position becomes `[MASK]` with `mask_frac`, а random real token
/// with `random_frac`, and keeps its identity otherwise.
#[derive(Debug, Clone)]
pub struct MaskingPolicy {
    pub mask_prob: f64,
    pub mask_frac: f64,
    pub random_frac: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        MaskingPolicy {
            mask_prob: 0.15,
            mask_frac: 0.8,
            random_frac: 0.1,
        }
    }
}

impl MaskingPolicy {
    pub fn keep_frac(&self) -> f64 {
        1.0 - self.mask_frac - self.random_frac
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.mask_prob <= 0.0 || self.mask_prob > 1.0 {
            return Err(NnError::BadConfig(
                "mask probability must be in (0, 1]; zero leaves no supervised positions".into(),
            ));
        }
        if self.mask_frac < 0.0 || self.random_frac < 0.0 || self.mask_frac + self.random_frac > 1.0 {
            return Err(NnError::BadConfig("replacement split must be a partition".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub policy: MaskingPolicy,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 2,
            batch_size: 64,
            adam: AdamConfig::default(),
            policy: MaskingPolicy::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainStats {
    /// Mean masked-token cross-entropy of the untrained model on the
    /// evaluation masks.
    pub initial_loss: f64,
    pub initial_top1: f64,
    pub final_loss: f64,
    pub final_top1: f64,
    pub epoch_losses: Vec<f64>,
    /// Words dropped or shortened because they exceeded max_len.
    pub truncated: usize,
}

/// Corrupt one sequence. Guarantees at least one supervised position.
fn apply_mask(
    ids: &[usize],
    policy: &MaskingPolicy,
    vocab: &TokenVocab,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut input = ids.to_vec();
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    for (i, &id) in ids.iter().enumerate() {
        if rng.gen::<f64>() < policy.mask_prob {
            positions.push(i);
            targets.push(id);
        }
    }
    if positions.is_empty() {
        let i = rng.gen_range(0..ids.len());
        positions.push(i);
        targets.push(ids[i]);
    }
    for &i in &positions {
        let u = rng.gen::<f64>();
        if u < policy.mask_frac {
            input[i] = vocab.mask_id();
        } else if u < policy.mask_frac + policy.random_frac {
            input[i] = rng.gen_range(vocab.first_real_id()..vocab.len());
        } // else keep
    }
    (input, positions, targets)
}

fn prepare_sequences(
    corpus: &PretrainCorpus,
    vocab: &TokenVocab,
    rules: &TokenizerRules,
    max_len: usize,
) -> Result<(Vec<Vec<usize>>, usize), NnError> {
    let mut seqs = Vec::with_capacity(corpus.items.len());
    let mut truncated = 0usize;
    for (_, ipa) in &corpus.items {
        let mut ids = vocab.encode(ipa, rules)?;
        if ids.is_empty() {
            continue;
        }
        if ids.len() > max_len {
            ids.truncate(max_len);
            truncated += 1;
        }
        seqs.push(ids);
    }
    if seqs.is_empty() {
        return Err(NnError::EmptyCorpus);
    }
    Ok((seqs, truncated))
}

/// Mean masked cross-entropy and masked top-1 accuracy in eval mode, with
/// masks drawn deterministically from `seed`.
pub fn evaluate_mlm(
    encoder: &TransformerEncoder,
    seqs: &[Vec<usize>],
    vocab: &TokenVocab,
    policy: &MaskingPolicy,
    seed: u64,
) -> Result<(f64, f64), NnError> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total_loss = 0.0;
    let mut total_correct = 0usize;
    let mut total = 0usize;
    for ids in seqs {
        let (input, positions, targets) = apply_mask(ids, policy, vocab, &mut rng);
        let hidden = encoder.hidden_eval(&input)?;
        let mut rows = crate::matrix::Matrix::zeros(positions.len(), hidden.cols);
        for (r, &pos) in positions.iter().enumerate() {
            rows.row_mut(r).copy_from_slice(hidden.row(pos));
        }
        let logits = encoder.mlm_logits_eval(&rows);
        let probs = crate::tape::softmax_rows_value(&logits);
        for (r, &t) in targets.iter().enumerate() {
            total_loss -= probs.row(r)[t].max(1e-300).ln();
            let argmax = probs
                .row(r)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if argmax == t {
                total_correct += 1;
            }
            total += 1;
        }
    }
    Ok((total_loss / total as f64, total_correct as f64 / total as f64))
}

/// Train with masked-LM cross-entropy and freeze the encoder. The returned
/// stats carry before/after evaluations on deterministic masks.
pub fn mlm_pretrain(
    mut encoder: TransformerEncoder,
    corpus: &PretrainCorpus,
    vocab: &TokenVocab,
    rules: &TokenizerRules,
    config: &PretrainConfig,
) -> Result<(FrozenEncoder, PretrainStats), NnError> {
    config.policy.validate()?;
    if vocab.len() > encoder.config.vocab_size {
        return Err(NnError::BadConfig(format!(
            "vocabulary has {} entries but the encoder was built for {}",
            vocab.len(),
            encoder.config.vocab_size
        )));
    }
    let (seqs, truncated) = prepare_sequences(corpus, vocab, rules, encoder.config.max_len)?;

    let eval_seed = config.seed ^ 0x9e3779b97f4a7c15;
    let (initial_loss, initial_top1) = evaluate_mlm(&encoder, &seqs, vocab, &config.policy, eval_seed)?;

    let mut adam = Adam::new(&encoder.params, config.adam.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_masked = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let nodes = encoder.inject(&mut tape);
            let mut masked_count = 0usize;
            let mut batch_loss = None;
            for &si in batch {
                let (input, positions, targets) = apply_mask(&seqs[si], &config.policy, vocab, &mut rng);
                let hidden = encoder.forward_tape(&mut tape, &nodes, &input, true, &mut rng)?;
                let rows = tape.row_gather(hidden, &positions);
                let logits0 = tape.matmul(rows, nodes.mlm_w);
                let logits = tape.add_row(logits0, nodes.mlm_b);
                masked_count += targets.len();
                let l = tape.ce_loss_rows(logits, targets);
                batch_loss = Some(match batch_loss {
                    None => l,
                    Some(acc) => tape.add(acc, l),
                });
            }
            let total = tape.scale(batch_loss.expect("non-empty batch"), 1.0 / masked_count as f64);
            epoch_loss += tape.value(total).data[0] * masked_count as f64;
            epoch_masked += masked_count;
            tape.backward(total);
            encoder.params.zero_grads();
            tape.accumulate_param_grads(&mut encoder.params);
            adam.step(&mut encoder.params);
        }
        epoch_losses.push(epoch_loss / epoch_masked as f64);
    }

    let (final_loss, final_top1) = evaluate_mlm(&encoder, &seqs, vocab, &config.policy, eval_seed)?;
    Ok((
        encoder.freeze(),
        PretrainStats {
            initial_loss,
            initial_top1,
            final_loss,
            final_top1,
            epoch_losses,
            truncated,
        },
    ))
}
