//! Finite-difference verification of the autodiff engine on the full
//! encoder + projection + heads graph.
//!
//! The checked graph wires the adversary without gradient reversal so the
//! analytic gradient is the true gradient of the forward loss; the GRL
//! wiring itself is verified separately by the composite scaling check in
//! the scrubber tests. Perturbed forwards reuse cached per-stage
//! activations: a parameter in layer k only triggers recomputation from
//! stage k onward, which makes exhaustive per-entry checks tractable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::{attn_sublayer_eval_batched, embed_eval_with, ffn_sublayer_eval_with, EncoderConfig, TransformerEncoder};
use crate::matrix::Matrix;
use crate::scrubber::{scrub_logits_eval_with, ScrubberModel};
use crate::tape::{softmax_rows_value, ParamStore, Tape};

/// One gradient-check batch: sequences with both task labels.
#[derive(Debug, Clone)]
pub struct GradBatch {
    pub sequences: Vec<Vec<usize>>,
    pub y_size: Vec<usize>,
    pub y_bin: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub parameters: usize,
    pub checked: usize,
    pub failures: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
}

/// Guarded relative error: differences below the guard count as agreement
/// for near-zero gradients, where central differences are pure noise.
fn rel_err(analytic: f64, fd: f64, guard: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(guard)
}

// Recompute stage for a parameter name. Stages are sublayer-granular:
// 0 = embeddings, 2l+1 = attention sublayer of layer l, 2l+2 = its
// feed-forward sublayer; anything past the last sublayer touches only the
// heads. Feed-forward parameters of a layer thus skip the attention
// recompute of their own layer.
fn stage_of(name: &str, layers: usize) -> usize {
    if name.starts_with("emb.") {
        return 0;
    }
    for l in 0..layers {
        if name.starts_with(&format!("l{l}.ffn.")) || name.starts_with(&format!("l{l}.ln2.")) {
            return 2 * l + 2;
        }
        if name.starts_with(&format!("l{l}.")) {
            return 2 * l + 1;
        }
    }
    2 * layers + 1 // proj/size/adv/mlm: heads only
}

struct StageCache {
    /// stages[s] = packed activations of every sequence after stage s
    /// (0 = embeddings); each sequence occupies a row block.
    stages: Vec<Matrix>,
}

/// All batches flattened and packed row-wise so one staged evaluation
/// yields every batch's loss from a single pair of perturbed forwards.
struct FlatBatches {
    sequences: Vec<Vec<usize>>,
    /// Half-open row ranges of each sequence in the packed matrices.
    seq_bounds: Vec<(usize, usize)>,
    /// Half-open sequence-index ranges per batch.
    ranges: Vec<(usize, usize)>,
    y_size: Vec<Vec<usize>>,
    y_bin: Vec<Vec<usize>>,
}

impl FlatBatches {
    fn new(batches: &[GradBatch]) -> FlatBatches {
        let mut sequences = Vec::new();
        let mut ranges = Vec::new();
        for b in batches {
            let start = sequences.len();
            sequences.extend(b.sequences.iter().cloned());
            ranges.push((start, sequences.len()));
        }
        let mut seq_bounds = Vec::with_capacity(sequences.len());
        let mut row = 0usize;
        for seq in &sequences {
            seq_bounds.push((row, row + seq.len()));
            row += seq.len();
        }
        FlatBatches {
            sequences,
            seq_bounds,
            ranges,
            y_size: batches.iter().map(|b| b.y_size.clone()).collect(),
            y_bin: batches.iter().map(|b| b.y_bin.clone()).collect(),
        }
    }

    fn packed_embed(&self, cfg: &EncoderConfig, store: &ParamStore) -> Matrix {
        let total_rows = self.seq_bounds.last().map_or(0, |&(_, e)| e);
        let mut packed = Matrix::zeros(total_rows, cfg.hidden);
        for (seq, &(start, _)) in self.sequences.iter().zip(&self.seq_bounds) {
            let e = embed_eval_with(cfg, store, seq);
            for r in 0..e.rows {
                packed.row_mut(start + r).copy_from_slice(e.row(r));
            }
        }
        packed
    }
}

fn pooled_matrix(packed: &Matrix, seq_bounds: &[(usize, usize)], dim: usize) -> Matrix {
    let mut pooled = Matrix::zeros(seq_bounds.len(), dim);
    for (r, &(start, end)) in seq_bounds.iter().enumerate() {
        let inv = 1.0 / (end - start) as f64;
        for c in 0..dim {
            let mut s = 0.0;
            for row in start..end {
                s += packed.row(row)[c];
            }
            pooled.row_mut(r)[c] = s * inv;
        }
    }
    pooled
}

fn heads_loss_value(store: &ParamStore, pooled: &Matrix, y_size: &[usize], y_bin: &[usize]) -> f64 {
    let (size_logits, bin_logits) = scrub_logits_eval_with(store, pooled);
    let sp = softmax_rows_value(&size_logits);
    let bp = softmax_rows_value(&bin_logits);
    let n = y_size.len() as f64;
    let mut loss = 0.0;
    for (r, &t) in y_size.iter().enumerate() {
        loss -= sp.row(r)[t].max(1e-300).ln();
    }
    for (r, &t) in y_bin.iter().enumerate() {
        loss -= bp.row(r)[t].max(1e-300).ln();
    }
    loss / n
}

/// Per-batch losses with recomputation starting at sublayer `from_stage`,
/// reading earlier activations from the cache.
fn losses_from_stage(
    cfg: &EncoderConfig,
    store: &ParamStore,
    flat: &FlatBatches,
    cache: &StageCache,
    from_stage: usize,
) -> Vec<f64> {
    let final_stage = 2 * cfg.layers; // index of the last packed stage
    let finals: Matrix;
    if from_stage > final_stage {
        finals = cache.stages[final_stage].clone();
    } else {
        let mut x = if from_stage == 0 {
            flat.packed_embed(cfg, store)
        } else {
            cache.stages[from_stage - 1].clone()
        };
        for s in from_stage.max(1)..=final_stage {
            let l = (s - 1) / 2;
            x = if s % 2 == 1 {
                attn_sublayer_eval_batched(cfg, store, l, &x, &flat.seq_bounds)
            } else {
                ffn_sublayer_eval_with(cfg, store, l, &x)
            };
        }
        finals = x;
    }
    let pooled_all = pooled_matrix(&finals, &flat.seq_bounds, cfg.hidden);
    flat.ranges
        .iter()
        .zip(flat.y_size.iter().zip(&flat.y_bin))
        .map(|(&(start, end), (ys, yb))| {
            let mut pooled = Matrix::zeros(end - start, cfg.hidden);
            for r in start..end {
                pooled.row_mut(r - start).copy_from_slice(pooled_all.row(r));
            }
            heads_loss_value(store, &pooled, ys, yb)
        })
        .collect()
}

/// Analytic gradients of the combined graph via the tape, keyed by the
/// combined store's parameter ids.
fn analytic_gradients(
    encoder: &TransformerEncoder,
    scrubber: &ScrubberModel,
    store: &mut ParamStore,
    batch: &GradBatch,
) -> Vec<Matrix> {
    let mut tape = Tape::new();
    let enc_nodes = encoder.inject_with(&mut tape, store);
    let scrub_nodes = scrubber.inject_with(&mut tape, store);
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused: eval mode
    let mut pooled_nodes = Vec::with_capacity(batch.sequences.len());
    for ids in &batch.sequences {
        let h = encoder
            .forward_tape(&mut tape, &enc_nodes, ids, false, &mut rng)
            .expect("gradcheck sequences are valid");
        pooled_nodes.push(tape.mean_rows(h));
    }
    let pooled = tape.concat_rows(pooled_nodes);
    let (total, _, _) = scrubber.heads_loss(
        &mut tape,
        &scrub_nodes,
        pooled,
        batch.y_size.clone(),
        batch.y_bin.clone(),
        0.0,
        false,
        false,
        &mut rng,
    );
    tape.backward(total);
    store.zero_grads();
    tape.accumulate_param_grads(store);
    (0..store.len()).map(|i| store.grad(i).clone()).collect()
}

/// Exhaustive central-difference check of every parameter entry of the
/// encoder + projection + heads graph on every batch.
pub fn check_scrub_graph(
    encoder: &TransformerEncoder,
    scrubber: &ScrubberModel,
    batches: &[GradBatch],
    h: f64,
    tol: f64,
    guard: f64,
) -> GradCheckReport {
    // one combined store so a single tape covers both parameter sets
    let mut combined = ParamStore::new();
    for (name, value) in encoder.params.iter() {
        combined.add(name, value.clone());
    }
    for (name, value) in scrubber.params.iter() {
        combined.add(name, value.clone());
    }

    let mut report = GradCheckReport {
        parameters: combined.param_count(),
        checked: 0,
        failures: 0,
        max_rel_err: 0.0,
        worst_param: String::new(),
    };

    // per-batch analytic gradients (one backward sweep per batch)
    let per_batch_grads: Vec<Vec<Matrix>> = batches
        .iter()
        .map(|batch| analytic_gradients(encoder, scrubber, &mut combined, batch))
        .collect();

    // cache per-stage activations of the unperturbed model over the union
    // of all batches' sequences; one perturbed forward then yields every
    // batch's loss at once
    let flat = FlatBatches::new(batches);
    let cfg = &encoder.config;
    let mut stages: Vec<Matrix> = Vec::with_capacity(2 * cfg.layers + 1);
    stages.push(flat.packed_embed(cfg, &combined));
    for s in 1..=2 * cfg.layers {
        let l = (s - 1) / 2;
        let next = if s % 2 == 1 {
            attn_sublayer_eval_batched(cfg, &combined, l, &stages[s - 1], &flat.seq_bounds)
        } else {
            ffn_sublayer_eval_with(cfg, &combined, l, &stages[s - 1])
        };
        stages.push(next);
    }
    let cache = StageCache { stages };

    let work: Vec<(usize, usize)> = (0..combined.len())
        .flat_map(|pid| (0..combined.value(pid).len()).map(move |i| (pid, i)))
        .collect();
    let results: Vec<(f64, usize)> = work
        .par_chunks(2048)
        .flat_map_iter(|chunk| {
            let mut local = combined.clone();
            let mut out = Vec::with_capacity(chunk.len() * batches.len());
            for &(pid, i) in chunk {
                let stage = stage_of(local.name(pid), cfg.layers);
                let orig = local.value(pid).data[i];
                local.value_mut(pid).data[i] = orig + h;
                let up = losses_from_stage(cfg, &local, &flat, &cache, stage);
                local.value_mut(pid).data[i] = orig - h;
                let down = losses_from_stage(cfg, &local, &flat, &cache, stage);
                local.value_mut(pid).data[i] = orig;
                for (b, (u, d)) in up.iter().zip(&down).enumerate() {
                    let fd = (u - d) / (2.0 * h);
                    let err = rel_err(per_batch_grads[b][pid].data[i], fd, guard);
                    out.push((err, pid));
                }
            }
            out
        })
        .collect();
    for (err, pid) in results {
        report.checked += 1;
        if err >= tol {
            report.failures += 1;
        }
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_param = combined.name(pid).to_string();
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scrubber::ScrubberConfig;
    use rand::Rng;

    fn batch_for(vocab: usize, seqs: usize, len: usize, seed: u64) -> GradBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GradBatch {
            sequences: (0..seqs)
                .map(|_| (0..len).map(|_| rng.gen_range(0..vocab)).collect())
                .collect(),
            y_size: (0..seqs).map(|_| rng.gen_range(0..2)).collect(),
            y_bin: (0..seqs).map(|_| rng.gen_range(0..3)).collect(),
        }
    }

    #[test]
    fn staged_loss_matches_full_recompute() {
        let cfg = EncoderConfig {
            layers: 2,
            hidden: 16,
            heads: 2,
            ffn: 24,
            vocab_size: 9,
            max_len: 6,
            dropout: 0.0,
        };
        let enc = TransformerEncoder::new(cfg.clone(), 4).unwrap();
        let scrub = ScrubberModel::new(16, ScrubberConfig { projection: 8, head_hidden: 4, ..ScrubberConfig::default() }, 5);
        let batches = vec![batch_for(9, 3, 4, 6), batch_for(9, 2, 3, 7)];
        let mut combined = ParamStore::new();
        for (name, value) in enc.params.iter() {
            combined.add(name, value.clone());
        }
        for (name, value) in scrub.params.iter() {
            combined.add(name, value.clone());
        }
        let flat = FlatBatches::new(&batches);
        let mut stages = vec![flat.packed_embed(&cfg, &combined)];
        for s in 1..=2 * cfg.layers {
            let l = (s - 1) / 2;
            let next = if s % 2 == 1 {
                attn_sublayer_eval_batched(&cfg, &combined, l, &stages[s - 1], &flat.seq_bounds)
            } else {
                ffn_sublayer_eval_with(&cfg, &combined, l, &stages[s - 1])
            };
            stages.push(next);
        }
        let cache = StageCache { stages };
        let full = losses_from_stage(&cfg, &combined, &flat, &cache, 0);
        for from in 0..=2 * cfg.layers + 1 {
            let v = losses_from_stage(&cfg, &combined, &flat, &cache, from);
            for (a, b) in v.iter().zip(&full) {
                assert_eq!(a.to_bits(), b.to_bits(), "stage {from}");
            }
        }
    }

    #[test]
    fn small_graph_passes_exhaustive_check() {
        let cfg = EncoderConfig {
            layers: 2,
            hidden: 16,
            heads: 2,
            ffn: 24,
            vocab_size: 9,
            max_len: 6,
            dropout: 0.0,
        };
        let enc = TransformerEncoder::new(cfg, 14).unwrap();
        let scrub = ScrubberModel::new(
            16,
            ScrubberConfig { projection: 8, head_hidden: 4, ..ScrubberConfig::default() },
            15,
        );
        let batches: Vec<GradBatch> = (0..2).map(|s| batch_for(9, 2, 3, 20 + s)).collect();
        let report = check_scrub_graph(&enc, &scrub, &batches, 1e-5, 1e-4, 1e-6);
        assert_eq!(report.failures, 0, "max rel err {} at {}", report.max_rel_err, report.worst_param);
        assert!(report.checked > 0);
    }

    #[test]
    fn mlm_head_gradients_match_finite_differences() {
        // a masked-LM loss graph covering the MLM head, small enough for
        // brute-force full recomputation
        let cfg = EncoderConfig {
            layers: 1,
            hidden: 8,
            heads: 2,
            ffn: 12,
            vocab_size: 7,
            max_len: 5,
            dropout: 0.0,
        };
        let enc = TransformerEncoder::new(cfg.clone(), 3).unwrap();
        let ids = vec![2usize, 5, 1, 6];
        let masked = vec![1usize, 3];
        let targets = vec![4usize, 0];

        let loss_of = |enc: &TransformerEncoder| -> f64 {
            let hidden = enc.hidden_eval(&ids).unwrap();
            let mut rows = Matrix::zeros(masked.len(), hidden.cols);
            for (r, &m) in masked.iter().enumerate() {
                rows.row_mut(r).copy_from_slice(hidden.row(m));
            }
            let logits = enc.mlm_logits_eval(&rows);
            let probs = softmax_rows_value(&logits);
            let mut loss = 0.0;
            for (r, &t) in targets.iter().enumerate() {
                loss -= probs.row(r)[t].max(1e-300).ln();
            }
            loss
        };

        let mut enc = enc;
        // analytic
        let mut tape = Tape::new();
        let nodes = enc.inject(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = enc.forward_tape(&mut tape, &nodes, &ids, false, &mut rng).unwrap();
        let rows = tape.row_gather(h, &masked);
        let l0 = tape.matmul(rows, nodes.mlm_w);
        let logits = tape.add_row(l0, nodes.mlm_b);
        let loss = tape.ce_loss_rows(logits, targets.clone());
        tape.backward(loss);
        enc.params.zero_grads();
        tape.accumulate_param_grads(&mut enc.params);
        let grads: Vec<Matrix> = (0..enc.params.len()).map(|i| enc.params.grad(i).clone()).collect();

        let step = 1e-5;
        for pid in 0..enc.params.len() {
            for i in 0..enc.params.value(pid).len() {
                let orig = enc.params.value(pid).data[i];
                enc.params.value_mut(pid).data[i] = orig + step;
                let up = loss_of(&enc);
                enc.params.value_mut(pid).data[i] = orig - step;
                let down = loss_of(&enc);
                enc.params.value_mut(pid).data[i] = orig;
                let fd = (up - down) / (2.0 * step);
                let err = rel_err(grads[pid].data[i], fd, 1e-6);
                assert!(
                    err < 1e-4,
                    "param {} [{i}]: analytic {}, fd {fd}",
                    enc.params.name(pid),
                    grads[pid].data[i]
                );
            }
        }
    }
}
