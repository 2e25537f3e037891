//! Gradient-reversal scrubber: a 128-to-64 projection over frozen encoder
//! features feeding a size classifier and a bin adversary. The adversary is
//! attached through a gradient reversal layer, so one total loss trains the
//! adversary to read genealogical bins while pushing the shared projection
//! to erase them; ramping lambda from 0 to 1 hands the projection over to
//! the adversarial pressure as training proceeds.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use phonosym_core::corpus::{Lexicon, SizeLabel};
use phonosym_core::stats::{self, StatsError, Tail, TestResult};
use phonosym_core::tokenizer::TokenizerRules;
use phonosym_core::typology::{Bin, TertileBinning};

use crate::encoder::FrozenEncoder;
use crate::matrix::{matmul, Matrix};
use crate::optim::{Adam, AdamConfig};
use crate::tape::{softmax_rows_value, ParamStore, Tape};
use crate::vocab::TokenVocab;
use crate::NnError;

/// lambda(p) = lambda_max * (2 / (1 + exp(-10 p)) - 1), p = epoch / total.
#[derive(Debug, Clone)]
pub struct LambdaSchedule {
    pub lambda_max: f64,
    pub total_epochs: usize,
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule {
            lambda_max: 1.0,
            total_epochs: 20,
        }
    }
}

impl LambdaSchedule {
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        let p = epoch as f64 / self.total_epochs as f64;
        self.lambda_max * (2.0 / (1.0 + (-10.0 * p).exp()) - 1.0)
    }
}

/// Which training regime a run used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    Adversarial,
    Baseline,
}

impl Condition {
    pub fn name(&self) -> &'static str {
        match self {
            Condition::Adversarial => "adversarial",
            Condition::Baseline => "baseline",
        }
    }
}

/// Target language plus the similarity-bin label of every training
/// language. Normally derived from a tertile binning; arbitrary labelings
/// (e.g. family-level adversaries) can be built with `new`.
#[derive(Debug, Clone)]
pub struct FoldSpec {
    pub target: String,
    pub bins: BTreeMap<String, Bin>,
}

impl FoldSpec {
    pub fn new(target: String, bins: BTreeMap<String, Bin>) -> FoldSpec {
        FoldSpec { target, bins }
    }

    pub fn from_binning(binning: &TertileBinning) -> FoldSpec {
        let mut bins = BTreeMap::new();
        for bin in Bin::ALL {
            for lang in binning.languages_in(bin) {
                bins.insert(lang.clone(), bin);
            }
        }
        FoldSpec {
            target: binning.target.clone(),
            bins,
        }
    }

    fn validate(&self, encoded: &EncodedLexicon) -> Result<(), NnError> {
        let mut languages: Vec<&String> = encoded.words.iter().map(|w| &w.language).collect();
        languages.sort();
        languages.dedup();
        if !languages.iter().any(|l| **l == self.target) {
            return Err(NnError::FoldMismatch(format!(
                "target {} not present in the lexicon",
                self.target
            )));
        }
        for lang in &languages {
            if **lang != self.target && !self.bins.contains_key(*lang) {
                return Err(NnError::FoldMismatch(format!(
                    "training language {lang} has no bin label"
                )));
            }
        }
        for lang in self.bins.keys() {
            if lang == &self.target {
                return Err(NnError::FoldMismatch(format!(
                    "target {lang} must not carry a bin label"
                )));
            }
            if !languages.iter().any(|l| *l == lang) {
                return Err(NnError::FoldMismatch(format!(
                    "bin label for unknown language {lang}"
                )));
            }
        }
        Ok(())
    }
}

/// Lexicon words encoded once by the frozen feature extractor.
#[derive(Debug, Clone)]
pub struct EncodedWord {
    pub language: String,
    pub features: Vec<f64>,
    pub size: SizeLabel,
}

#[derive(Debug, Clone)]
pub struct EncodedLexicon {
    pub dim: usize,
    pub words: Vec<EncodedWord>,
}

/// Run every lexicon word through the frozen encoder (mean pooling).
pub fn encode_lexicon(
    lexicon: &Lexicon,
    encoder: &FrozenEncoder,
    vocab: &TokenVocab,
    rules: &TokenizerRules,
) -> Result<EncodedLexicon, NnError> {
    let mut words = Vec::with_capacity(lexicon.entries.len());
    for e in &lexicon.entries {
        let ids = vocab.encode(&e.ipa, rules)?;
        let features = encoder.encode_mean(&ids)?;
        words.push(EncodedWord {
            language: e.language.clone(),
            features,
            size: e.size_label,
        });
    }
    Ok(EncodedLexicon {
        dim: encoder.config().hidden,
        words,
    })
}

#[derive(Debug, Clone)]
pub struct ScrubberConfig {
    /// Width of the shared projection (the scrubbed representation).
    pub projection: usize,
    /// Hidden width of both two-layer heads.
    pub head_hidden: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for ScrubberConfig {
    fn default() -> Self {
        ScrubberConfig {
            projection: 64,
            head_hidden: 32,
            dropout: 0.1,
            batch_size: 32,
            adam: AdamConfig::default(),
        }
    }
}

/// Projection + size head + bin adversary. The frozen encoder is not part
/// of this store, so no training step can touch it.
pub struct ScrubberModel {
    pub config: ScrubberConfig,
    pub params: ParamStore,
    input_dim: usize,
}

const SIZE_CLASSES: usize = 2;
pub const BIN_CLASSES: usize = 3;

impl ScrubberModel {
    pub fn new(input_dim: usize, config: ScrubberConfig, seed: u64) -> ScrubberModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 0.05).expect("valid std");
        let mut rand_m = |rows: usize, cols: usize| {
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(&mut rng)).collect())
        };
        let mut p = ParamStore::new();
        let proj_w = rand_m(input_dim, config.projection);
        p.add("proj.w", proj_w);
        p.add("proj.b", Matrix::zeros(1, config.projection));
        let size_w1 = rand_m(config.projection, config.head_hidden);
        p.add("size.w1", size_w1);
        p.add("size.b1", Matrix::zeros(1, config.head_hidden));
        let size_w2 = rand_m(config.head_hidden, SIZE_CLASSES);
        p.add("size.w2", size_w2);
        p.add("size.b2", Matrix::zeros(1, SIZE_CLASSES));
        let adv_w1 = rand_m(config.projection, config.head_hidden);
        p.add("adv.w1", adv_w1);
        p.add("adv.b1", Matrix::zeros(1, config.head_hidden));
        let adv_w2 = rand_m(config.head_hidden, BIN_CLASSES);
        p.add("adv.w2", adv_w2);
        p.add("adv.b2", Matrix::zeros(1, BIN_CLASSES));
        ScrubberModel {
            config,
            params: p,
            input_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn inject(&self, tape: &mut Tape) -> ScrubberNodes {
        self.inject_with(tape, &self.params)
    }

    /// Inject from an external store carrying this model's parameter names.
    pub fn inject_with(&self, tape: &mut Tape, p: &ParamStore) -> ScrubberNodes {
        let node = |tape: &mut Tape, name: &str| tape.param(p, p.id(name));
        ScrubberNodes {
            proj_w: node(tape, "proj.w"),
            proj_b: node(tape, "proj.b"),
            size_w1: node(tape, "size.w1"),
            size_b1: node(tape, "size.b1"),
            size_w2: node(tape, "size.w2"),
            size_b2: node(tape, "size.b2"),
            adv_w1: node(tape, "adv.w1"),
            adv_b1: node(tape, "adv.b1"),
            adv_w2: node(tape, "adv.w2"),
            adv_b2: node(tape, "adv.b2"),
        }
    }

    /// Projection + both heads from an arbitrary feature node. Returns
    /// (total loss, size CE mean, bin CE mean) node ids. `lambda` controls
    /// the reversal strength; `use_grl` can be disabled to wire the
    /// adversary straight through (used by the gradient diagnostics).
    #[allow(clippy::too_many_arguments)]
    pub fn heads_loss(
        &self,
        tape: &mut Tape,
        nodes: &ScrubberNodes,
        xn: usize,
        y_size: Vec<usize>,
        y_bin: Vec<usize>,
        lambda: f64,
        use_grl: bool,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> (usize, usize, usize) {
        let dp = if train { self.config.dropout } else { 0.0 };
        let n = y_size.len() as f64;
        let z0 = tape.matmul(xn, nodes.proj_w);
        let z1 = tape.add_row(z0, nodes.proj_b);
        let z = tape.dropout(z1, dp, rng);

        let s0 = tape.matmul(z, nodes.size_w1);
        let s1 = tape.add_row(s0, nodes.size_b1);
        let s2 = tape.relu(s1);
        let s3 = tape.dropout(s2, dp, rng);
        let s4 = tape.matmul(s3, nodes.size_w2);
        let size_logits = tape.add_row(s4, nodes.size_b2);
        let size_sum = tape.ce_loss_rows(size_logits, y_size);
        let size_loss = tape.scale(size_sum, 1.0 / n);

        let g = if use_grl { tape.grl(z, lambda) } else { z };
        let a0 = tape.matmul(g, nodes.adv_w1);
        let a1 = tape.add_row(a0, nodes.adv_b1);
        let a2 = tape.relu(a1);
        let a3 = tape.dropout(a2, dp, rng);
        let a4 = tape.matmul(a3, nodes.adv_w2);
        let bin_logits = tape.add_row(a4, nodes.adv_b2);
        let bin_sum = tape.ce_loss_rows(bin_logits, y_bin);
        let bin_loss = tape.scale(bin_sum, 1.0 / n);

        let total = tape.add(size_loss, bin_loss);
        (total, size_loss, bin_loss)
    }

    /// Batch training graph over a feature matrix leaf.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_graph(
        &self,
        tape: &mut Tape,
        x: Matrix,
        y_size: Vec<usize>,
        y_bin: Vec<usize>,
        lambda: f64,
        use_grl: bool,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> (usize, usize, usize) {
        let nodes = self.inject(tape);
        let xn = tape.leaf(x);
        self.heads_loss(tape, &nodes, xn, y_size, y_bin, lambda, use_grl, train, rng)
    }

    /// Eval-mode forward over a feature matrix: (size logits, bin logits).
    pub fn logits_eval(&self, x: &Matrix) -> (Matrix, Matrix) {
        scrub_logits_eval_with(&self.params, x)
    }
}

/// Node ids of the scrubber parameters on one tape.
pub struct ScrubberNodes {
    proj_w: usize,
    proj_b: usize,
    size_w1: usize,
    size_b1: usize,
    size_w2: usize,
    size_b2: usize,
    adv_w1: usize,
    adv_b1: usize,
    adv_w2: usize,
    adv_b2: usize,
}

/// Eval-mode scrubber forward against an arbitrary store.
pub fn scrub_logits_eval_with(p: &ParamStore, x: &Matrix) -> (Matrix, Matrix) {
    let get = |name: &str| p.value(p.id(name));
    let z = crate::encoder::add_row_value(&matmul(x, get("proj.w")), get("proj.b"));
    let head = |w1: &str, b1: &str, w2: &str, b2: &str| {
        let mut h = crate::encoder::add_row_value(&matmul(&z, get(w1)), get(b1));
        h.data.iter_mut().for_each(|d| *d = d.max(0.0));
        crate::encoder::add_row_value(&matmul(&h, get(w2)), get(b2))
    };
    (
        head("size.w1", "size.b1", "size.w2", "size.b2"),
        head("adv.w1", "adv.b1", "adv.w2", "adv.b2"),
    )
}

fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn feature_matrix(encoded: &EncodedLexicon, idxs: &[usize]) -> Matrix {
    let mut m = Matrix::zeros(idxs.len(), encoded.dim);
    for (r, &i) in idxs.iter().enumerate() {
        m.row_mut(r).copy_from_slice(&encoded.words[i].features);
    }
    m
}

/// Per-epoch training metrics of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub lambda: f64,
    pub train_size_acc: f64,
    pub train_bin_acc: f64,
    pub test_size_acc: f64,
    pub size_loss: f64,
    pub bin_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub target: String,
    pub condition: Condition,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
}

/// Train the scrubber for one fold under one condition. Deterministic for
/// a fixed (fold, condition, seed).
pub fn train_scrubber(
    fold: &FoldSpec,
    encoded: &EncodedLexicon,
    schedule: &LambdaSchedule,
    config: &ScrubberConfig,
    condition: Condition,
    seed: u64,
) -> Result<RunRecord, NnError> {
    fold.validate(encoded)?;
    let train_idx: Vec<usize> = (0..encoded.words.len())
        .filter(|&i| encoded.words[i].language != fold.target)
        .collect();
    let test_idx: Vec<usize> = (0..encoded.words.len())
        .filter(|&i| encoded.words[i].language == fold.target)
        .collect();
    let y_size: Vec<usize> = train_idx.iter().map(|&i| encoded.words[i].size.index()).collect();
    let y_bin: Vec<usize> = train_idx
        .iter()
        .map(|&i| fold.bins[&encoded.words[i].language].index())
        .collect();
    let test_y: Vec<usize> = test_idx.iter().map(|&i| encoded.words[i].size.index()).collect();

    let train_x = feature_matrix(encoded, &train_idx);
    let test_x = feature_matrix(encoded, &test_idx);

    let mut model = ScrubberModel::new(encoded.dim, config.clone(), seed);
    let mut adam = Adam::new(&model.params, config.adam.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1e995);

    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    let mut epochs = Vec::with_capacity(schedule.total_epochs);
    for epoch in 0..schedule.total_epochs {
        let lambda = match condition {
            Condition::Adversarial => schedule.lambda_at(epoch),
            Condition::Baseline => 0.0,
        };
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut bx = Matrix::zeros(chunk.len(), encoded.dim);
            let mut bs = Vec::with_capacity(chunk.len());
            let mut bb = Vec::with_capacity(chunk.len());
            for (r, &o) in chunk.iter().enumerate() {
                bx.row_mut(r).copy_from_slice(train_x.row(o));
                bs.push(y_size[o]);
                bb.push(y_bin[o]);
            }
            let mut tape = Tape::new();
            let (total, _, _) = model.loss_graph(&mut tape, bx, bs, bb, lambda, true, true, &mut rng);
            tape.backward(total);
            model.params.zero_grads();
            tape.accumulate_param_grads(&mut model.params);
            adam.step(&mut model.params);
        }

        // end-of-epoch metrics in eval mode over the full splits
        let (size_logits, bin_logits) = model.logits_eval(&train_x);
        let size_probs = softmax_rows_value(&size_logits);
        let bin_probs = softmax_rows_value(&bin_logits);
        let mut size_correct = 0usize;
        let mut bin_correct = 0usize;
        let mut size_loss = 0.0;
        let mut bin_loss = 0.0;
        for r in 0..train_idx.len() {
            if argmax_row(size_logits.row(r)) == y_size[r] {
                size_correct += 1;
            }
            if argmax_row(bin_logits.row(r)) == y_bin[r] {
                bin_correct += 1;
            }
            size_loss -= size_probs.row(r)[y_size[r]].max(1e-300).ln();
            bin_loss -= bin_probs.row(r)[y_bin[r]].max(1e-300).ln();
        }
        let (test_logits, _) = model.logits_eval(&test_x);
        let test_correct = (0..test_idx.len())
            .filter(|&r| argmax_row(test_logits.row(r)) == test_y[r])
            .count();
        epochs.push(EpochMetrics {
            lambda,
            train_size_acc: size_correct as f64 / train_idx.len() as f64,
            train_bin_acc: bin_correct as f64 / train_idx.len() as f64,
            test_size_acc: test_correct as f64 / test_idx.len() as f64,
            size_loss: size_loss / train_idx.len() as f64,
            bin_loss: bin_loss / train_idx.len() as f64,
        });
    }
    Ok(RunRecord {
        target: fold.target.clone(),
        condition,
        seed,
        epochs,
    })
}

/// Paper epoch-selection rules. Adversarial: among epochs >= 8, maximize
/// (train size - train bin accuracy) subject to train bin accuracy at or
/// above chance; if no epoch satisfies the constraint, drop it. Baseline:
/// among epochs > 10, maximize train bin accuracy. Ties take the earliest.
pub fn select_epoch(
    record: &RunRecord,
    condition: Condition,
    chance_bin: f64,
) -> Result<usize, NnError> {
    let min_epoch = match condition {
        Condition::Adversarial => 8,
        Condition::Baseline => 11,
    };
    if record.epochs.len() <= min_epoch {
        return Err(NnError::ShortRecord(format!(
            "{} selection needs more than {} epochs, record has {}",
            condition.name(),
            min_epoch,
            record.epochs.len()
        )));
    }
    let candidates = min_epoch..record.epochs.len();
    match condition {
        Condition::Adversarial => {
            let gap = |e: usize| record.epochs[e].train_size_acc - record.epochs[e].train_bin_acc;
            let feasible: Vec<usize> = candidates
                .clone()
                .filter(|&e| record.epochs[e].train_bin_acc >= chance_bin)
                .collect();
            let pool: Vec<usize> = if feasible.is_empty() {
                candidates.collect()
            } else {
                feasible
            };
            let mut best = pool[0];
            for &e in &pool[1..] {
                if gap(e) > gap(best) {
                    best = e;
                }
            }
            Ok(best)
        }
        Condition::Baseline => {
            let mut best = min_epoch;
            for e in candidates {
                if record.epochs[e].train_bin_acc > record.epochs[best].train_bin_acc {
                    best = e;
                }
            }
            Ok(best)
        }
    }
}

// ---------------------------------------------------------------------------
// Full evaluation suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub runs: usize,
    pub schedule: LambdaSchedule,
    pub scrubber: ScrubberConfig,
    pub chance_size: f64,
    pub chance_bin: f64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            runs: 5,
            schedule: LambdaSchedule::default(),
            scrubber: ScrubberConfig::default(),
            chance_size: 0.5,
            chance_bin: 1.0 / 3.0,
            seed: 0,
        }
    }
}

/// Selected-epoch metrics of one run.
#[derive(Debug, Clone)]
pub struct RunSelection {
    pub seed: u64,
    pub epoch: usize,
    pub train_size_acc: f64,
    pub train_bin_acc: f64,
    pub test_size_acc: f64,
}

/// Per-language suite outcome under one condition. `size_test`/`bin_test`
/// are `None` when the five runs show no variation (flagged, not tested).
#[derive(Debug, Clone)]
pub struct LanguageOutcome {
    pub language: String,
    pub condition: Condition,
    pub runs: Vec<RunSelection>,
    pub size_test: Option<TestResult>,
    pub bin_test: Option<TestResult>,
}

impl LanguageOutcome {
    pub fn mean_test_size(&self) -> f64 {
        self.runs.iter().map(|r| r.test_size_acc).sum::<f64>() / self.runs.len() as f64
    }

    pub fn mean_train_bin(&self) -> f64 {
        self.runs.iter().map(|r| r.train_bin_acc).sum::<f64>() / self.runs.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub mean_test_size_acc: f64,
    pub mean_train_bin_acc: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config_echo: String,
    pub chance_size: f64,
    pub chance_bin: f64,
    pub outcomes: Vec<LanguageOutcome>,
    pub summaries: Vec<ConditionSummary>,
    /// Paired t across languages: adversarial vs baseline mean size accuracy.
    pub paired_size: Option<TestResult>,
    /// Adversarial-condition languages with above-chance size (p < 0.05)
    /// and bin accuracy not significantly off chance at p >= 0.01 / 0.05.
    pub suppressed_bin01: Vec<String>,
    pub suppressed_bin05: Vec<String>,
    /// Languages whose runs had zero variance and could not be tested.
    pub not_testable: Vec<String>,
    pub records: Vec<RunRecord>,
}

fn ok_or_flagged(r: Result<TestResult, StatsError>) -> Option<TestResult> {
    match r {
        Ok(t) => Some(t),
        Err(_) => None,
    }
}

fn mix(seed: u64, s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ seed.rotate_left(29);
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// The full protocol: every target x {adversarial, baseline} x `runs`
/// seeded runs, epoch selection, per-language significance, aggregate
/// means, and the cross-condition paired comparison.
pub fn evaluate_suite(
    lexicon: &Lexicon,
    binnings: &[TertileBinning],
    encoder: &FrozenEncoder,
    vocab: &TokenVocab,
    rules: &TokenizerRules,
    config: &SuiteConfig,
) -> Result<ExperimentReport, NnError> {
    let fingerprint_before = encoder.param_fingerprint();
    let encoded = encode_lexicon(lexicon, encoder, vocab, rules)?;

    let mut jobs = Vec::new();
    for binning in binnings {
        let fold = FoldSpec::from_binning(binning);
        for condition in [Condition::Adversarial, Condition::Baseline] {
            for run in 0..config.runs {
                let seed = mix(config.seed, &format!("{}/{}/{run}", binning.target, condition.name()));
                jobs.push((fold.clone(), condition, seed));
            }
        }
    }
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|(fold, condition, seed)| {
            train_scrubber(fold, &encoded, &config.schedule, &config.scrubber, *condition, *seed)
        })
        .collect::<Result<_, _>>()?;

    let mut outcomes = Vec::new();
    let mut not_testable = Vec::new();
    for binning in binnings {
        for condition in [Condition::Adversarial, Condition::Baseline] {
            let mut runs = Vec::new();
            for record in records
                .iter()
                .filter(|r| r.target == binning.target && r.condition == condition)
            {
                let epoch = select_epoch(record, condition, config.chance_bin)?;
                let m = &record.epochs[epoch];
                runs.push(RunSelection {
                    seed: record.seed,
                    epoch,
                    train_size_acc: m.train_size_acc,
                    train_bin_acc: m.train_bin_acc,
                    test_size_acc: m.test_size_acc,
                });
            }
            let size_samples: Vec<f64> = runs.iter().map(|r| r.test_size_acc).collect();
            let bin_samples: Vec<f64> = runs.iter().map(|r| r.train_bin_acc).collect();
            let size_test = ok_or_flagged(stats::one_sample_t(
                &size_samples,
                config.chance_size,
                Tail::OneSidedGreater,
            ));
            let bin_test =
                ok_or_flagged(stats::one_sample_t(&bin_samples, config.chance_bin, Tail::TwoSided));
            if (size_test.is_none() || bin_test.is_none())
                && condition == Condition::Adversarial
                && !not_testable.contains(&binning.target)
            {
                not_testable.push(binning.target.clone());
            }
            outcomes.push(LanguageOutcome {
                language: binning.target.clone(),
                condition,
                runs,
                size_test,
                bin_test,
            });
        }
    }

    let summary_for = |condition: Condition| {
        let langs: Vec<&LanguageOutcome> =
            outcomes.iter().filter(|o| o.condition == condition).collect();
        let n = langs.len() as f64;
        ConditionSummary {
            condition,
            mean_test_size_acc: langs.iter().map(|o| o.mean_test_size()).sum::<f64>() / n,
            mean_train_bin_acc: langs.iter().map(|o| o.mean_train_bin()).sum::<f64>() / n,
        }
    };
    let summaries = vec![summary_for(Condition::Adversarial), summary_for(Condition::Baseline)];

    let adv: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.condition == Condition::Adversarial)
        .map(|o| o.mean_test_size())
        .collect();
    let base: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.condition == Condition::Baseline)
        .map(|o| o.mean_test_size())
        .collect();
    let paired_size = ok_or_flagged(stats::paired_t(&adv, &base));

    let mut suppressed_bin01 = Vec::new();
    let mut suppressed_bin05 = Vec::new();
    for o in outcomes.iter().filter(|o| o.condition == Condition::Adversarial) {
        if let (Some(st), Some(bt)) = (&o.size_test, &o.bin_test) {
            if st.p < 0.05 && bt.p >= 0.01 {
                suppressed_bin01.push(o.language.clone());
            }
            if st.p < 0.05 && bt.p >= 0.05 {
                suppressed_bin05.push(o.language.clone());
            }
        }
    }

    assert_eq!(
        fingerprint_before,
        encoder.param_fingerprint(),
        "frozen encoder parameters changed during scrubber training"
    );

    Ok(ExperimentReport {
        config_echo: format!(
            "runs={} total_epochs={} lambda_max={} projection={} head_hidden={} dropout={} batch={} lr={} seed={}",
            config.runs,
            config.schedule.total_epochs,
            config.schedule.lambda_max,
            config.scrubber.projection,
            config.scrubber.head_hidden,
            config.scrubber.dropout,
            config.scrubber.batch_size,
            config.scrubber.adam.lr,
            config.seed
        ),
        chance_size: config.chance_size,
        chance_bin: config.chance_bin,
        outcomes,
        summaries,
        paired_size,
        suppressed_bin01,
        suppressed_bin05,
        not_testable,
        records,
    })
}

impl ExperimentReport {
    /// Structured text document: provenance header, per-condition summary,
    /// per-language table, significance lists.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("# scrub report v1\n");
        out.push_str(&format!("config\t{}\n", self.config_echo));
        out.push_str(&format!(
            "chance\tsize={:.4}\tbin={:.4}\n\n",
            self.chance_size, self.chance_bin
        ));
        out.push_str("[summary]\n");
        out.push_str("condition\ttest_size_acc\ttrain_bin_acc\n");
        for s in &self.summaries {
            out.push_str(&format!(
                "{}\t{:.4}\t{:.4}\n",
                s.condition.name(),
                s.mean_test_size_acc,
                s.mean_train_bin_acc
            ));
        }
        match &self.paired_size {
            Some(t) => out.push_str(&format!(
                "paired_t_size\tt({:.0})={:.4}\tp={:.4}\n",
                t.df, t.statistic, t.p
            )),
            None => out.push_str("paired_t_size\tnot_testable\n"),
        }
        out.push('\n');
        out.push_str("[languages]\n");
        out.push_str(
            "language\tcondition\tmean_test_size\tmean_train_bin\tsize_p\tbin_p\tsize_sig05\tbin_ns01\tbin_ns05\n",
        );
        for o in &self.outcomes {
            let fmt_p = |t: &Option<TestResult>| match t {
                Some(t) => format!("{:.4}", t.p),
                None => "no_var".to_string(),
            };
            let size_sig = o.size_test.as_ref().map(|t| t.p < 0.05);
            let bin_ns01 = o.bin_test.as_ref().map(|t| t.p >= 0.01);
            let bin_ns05 = o.bin_test.as_ref().map(|t| t.p >= 0.05);
            let fmt_b = |b: Option<bool>| match b {
                Some(true) => "yes",
                Some(false) => "no",
                None => "-",
            };
            out.push_str(&format!(
                "{}\t{}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}\t{}\n",
                o.language,
                o.condition.name(),
                o.mean_test_size(),
                o.mean_train_bin(),
                fmt_p(&o.size_test),
                fmt_p(&o.bin_test),
                fmt_b(size_sig),
                fmt_b(bin_ns01),
                fmt_b(bin_ns05),
            ));
        }
        out.push('\n');
        out.push_str("[suppression]\n");
        out.push_str(&format!(
            "size_above_chance_and_bin_ns_p01\t{}\t{}\n",
            self.suppressed_bin01.len(),
            self.suppressed_bin01.join(",")
        ));
        out.push_str(&format!(
            "size_above_chance_and_bin_ns_p05\t{}\t{}\n",
            self.suppressed_bin05.len(),
            self.suppressed_bin05.join(",")
        ));
        out.push_str(&format!(
            "not_testable\t{}\t{}\n",
            self.not_testable.len(),
            self.not_testable.join(",")
        ));
        out
    }

    /// Per-epoch curves as TSV for external plotting.
    pub fn curves_tsv(&self) -> String {
        let mut out = String::from(
            "target\tcondition\tseed\tepoch\tlambda\ttrain_size_acc\ttrain_bin_acc\ttest_size_acc\tsize_loss\tbin_loss\n",
        );
        for r in &self.records {
            for (e, m) in r.epochs.iter().enumerate() {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                    r.target,
                    r.condition.name(),
                    r.seed,
                    e,
                    m.lambda,
                    m.train_size_acc,
                    m.train_bin_acc,
                    m.test_size_acc,
                    m.size_loss,
                    m.bin_loss
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_schedule_endpoints_and_monotonicity() {
        let s = LambdaSchedule::default();
        assert_eq!(s.lambda_at(0), 0.0);
        assert!((s.lambda_at(10) - 0.986614).abs() < 1e-5);
        assert!((s.lambda_at(20) - 0.999909).abs() < 1e-5);
        for e in 0..20 {
            assert!(s.lambda_at(e + 1) >= s.lambda_at(e));
            assert!(s.lambda_at(e) < s.lambda_max);
        }
        // by epoch 8 of 20 the ramp is nearly saturated
        assert!(s.lambda_at(8) / s.lambda_max > 0.96);
    }

    fn toy_encoded(langs: usize, words_per_lang: usize, dim: usize) -> EncodedLexicon {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dist = Normal::new(0.0, 1.0).unwrap();
        let mut words = Vec::new();
        for l in 0..langs {
            for w in 0..words_per_lang {
                let features: Vec<f64> = (0..dim).map(|_| dist.sample(&mut rng)).collect();
                words.push(EncodedWord {
                    language: format!("lang{l}"),
                    features,
                    size: if w % 2 == 0 { SizeLabel::Small } else { SizeLabel::Large },
                });
            }
        }
        EncodedLexicon { dim, words }
    }

    fn toy_fold(langs: usize) -> FoldSpec {
        let mut bins = BTreeMap::new();
        for l in 1..langs {
            let bin = match l % 3 {
                0 => Bin::MostSimilar,
                1 => Bin::SomewhatSimilar,
                _ => Bin::LeastSimilar,
            };
            bins.insert(format!("lang{l}"), bin);
        }
        FoldSpec::new("lang0".into(), bins)
    }

    #[test]
    fn same_seed_same_record() {
        let encoded = toy_encoded(7, 8, 12);
        let fold = toy_fold(7);
        let schedule = LambdaSchedule { total_epochs: 12, ..LambdaSchedule::default() };
        let cfg = ScrubberConfig { batch_size: 8, ..ScrubberConfig::default() };
        let a = train_scrubber(&fold, &encoded, &schedule, &cfg, Condition::Adversarial, 5).unwrap();
        let b = train_scrubber(&fold, &encoded, &schedule, &cfg, Condition::Adversarial, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fold_mismatch_is_detected() {
        let encoded = toy_encoded(4, 4, 6);
        let mut fold = toy_fold(4);
        fold.bins.remove("lang2");
        assert!(matches!(
            train_scrubber(
                &fold,
                &encoded,
                &LambdaSchedule::default(),
                &ScrubberConfig::default(),
                Condition::Baseline,
                1
            ),
            Err(NnError::FoldMismatch(_))
        ));
    }

    #[test]
    fn grl_composite_projection_gradient() {
        // projection gradient from the bin loss with GRL equals -lambda x
        // the gradient with GRL replaced by identity
        let encoded = toy_encoded(4, 6, 10);
        let model = ScrubberModel::new(10, ScrubberConfig::default(), 3);
        let idxs: Vec<usize> = (0..12).collect();
        let x = feature_matrix(&encoded, &idxs);
        let y_size: Vec<usize> = idxs.iter().map(|&i| encoded.words[i].size.index()).collect();
        let y_bin: Vec<usize> = idxs.iter().map(|&i| i % 3).collect();

        let proj_grad = |use_grl: bool, lambda: f64| -> Matrix {
            let mut tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (_, _, bin_loss) = model.loss_graph(
                &mut tape,
                x.clone(),
                y_size.clone(),
                y_bin.clone(),
                lambda,
                use_grl,
                false,
                &mut rng,
            );
            tape.backward(bin_loss);
            let mut store = ScrubberModel::new(10, ScrubberConfig::default(), 3).params;
            store.zero_grads();
            tape.accumulate_param_grads(&mut store);
            store.grad(store.id("proj.w")).clone()
        };
        for lambda in [0.0, 0.3, 1.0] {
            let with = proj_grad(true, lambda);
            let without = proj_grad(false, lambda);
            for (a, b) in with.data.iter().zip(&without.data) {
                assert!(
                    (a - (-lambda) * b).abs() < 1e-9,
                    "lambda={lambda}: {a} vs {}",
                    -lambda * b
                );
            }
        }
    }

    #[test]
    fn lambda_zero_matches_detached_wiring_bitwise() {
        // with lambda = 0 the scrubber must equal two independently wired
        // heads: the size branch trained through the projection, the
        // adversary trained on detached projection outputs
        let encoded = toy_encoded(5, 6, 8);
        let fold = toy_fold(5);
        let epochs = 3usize;
        let cfg = ScrubberConfig { batch_size: 8, dropout: 0.0, ..ScrubberConfig::default() };
        let schedule = LambdaSchedule { total_epochs: epochs, ..LambdaSchedule::default() };
        let joint = train_scrubber(&fold, &encoded, &schedule, &cfg, Condition::Baseline, 9).unwrap();

        // hand-rolled detached trainer replicating the loop structure
        let train_idx: Vec<usize> = (0..encoded.words.len())
            .filter(|&i| encoded.words[i].language != fold.target)
            .collect();
        let y_size: Vec<usize> = train_idx.iter().map(|&i| encoded.words[i].size.index()).collect();
        let y_bin: Vec<usize> = train_idx
            .iter()
            .map(|&i| fold.bins[&encoded.words[i].language].index())
            .collect();
        let train_x = feature_matrix(&encoded, &train_idx);
        let mut model = ScrubberModel::new(encoded.dim, cfg.clone(), 9);
        let mut adam = Adam::new(&model.params, cfg.adam.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(9 ^ 0x5bd1e995);
        let mut order: Vec<usize> = (0..train_idx.len()).collect();
        for _epoch in 0..epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let mut bx = Matrix::zeros(chunk.len(), encoded.dim);
                let mut bs = Vec::new();
                let mut bb = Vec::new();
                for (r, &o) in chunk.iter().enumerate() {
                    bx.row_mut(r).copy_from_slice(train_x.row(o));
                    bs.push(y_size[o]);
                    bb.push(y_bin[o]);
                }
                let n = bs.len() as f64;
                let p = &model.params;
                // graph 1: projection + size head only
                let mut t1 = Tape::new();
                let pw = t1.param(p, p.id("proj.w"));
                let pb = t1.param(p, p.id("proj.b"));
                let sw1 = t1.param(p, p.id("size.w1"));
                let sb1 = t1.param(p, p.id("size.b1"));
                let sw2 = t1.param(p, p.id("size.w2"));
                let sb2 = t1.param(p, p.id("size.b2"));
                let xn = t1.leaf(bx.clone());
                let z0 = t1.matmul(xn, pw);
                let z = t1.add_row(z0, pb);
                let h0 = t1.matmul(z, sw1);
                let h1 = t1.add_row(h0, sb1);
                let h2 = t1.relu(h1);
                let h3 = t1.matmul(h2, sw2);
                let logits = t1.add_row(h3, sb2);
                let l = t1.ce_loss_rows(logits, bs);
                let loss1 = t1.scale(l, 1.0 / n);
                t1.backward(loss1);
                // graph 2: adversary on the detached projection values
                let z_detached = t1.value(z).clone();
                let mut t2 = Tape::new();
                let aw1 = t2.param(p, p.id("adv.w1"));
                let ab1 = t2.param(p, p.id("adv.b1"));
                let aw2 = t2.param(p, p.id("adv.w2"));
                let ab2 = t2.param(p, p.id("adv.b2"));
                let zn = t2.leaf(z_detached);
                let g0 = t2.matmul(zn, aw1);
                let g1 = t2.add_row(g0, ab1);
                let g2 = t2.relu(g1);
                let g3 = t2.matmul(g2, aw2);
                let blogits = t2.add_row(g3, ab2);
                let bl = t2.ce_loss_rows(blogits, bb);
                let loss2 = t2.scale(bl, 1.0 / n);
                t2.backward(loss2);

                model.params.zero_grads();
                t1.accumulate_param_grads(&mut model.params);
                t2.accumulate_param_grads(&mut model.params);
                adam.step(&mut model.params);
            }
        }
        // compare eval outputs bitwise on the training matrix
        let (size_logits, bin_logits) = model.logits_eval(&train_x);
        let reference = train_scrubber(&fold, &encoded, &schedule, &cfg, Condition::Baseline, 9).unwrap();
        assert_eq!(joint, reference); // determinism of the reference
        let mut ref_model = ScrubberModel::new(encoded.dim, cfg.clone(), 9);
        let mut ref_adam = Adam::new(&ref_model.params, cfg.adam.clone());
        let mut ref_rng = ChaCha8Rng::seed_from_u64(9 ^ 0x5bd1e995);
        let mut ref_order: Vec<usize> = (0..train_idx.len()).collect();
        for epoch in 0..epochs {
            let _ = epoch;
            ref_order.shuffle(&mut ref_rng);
            for chunk in ref_order.chunks(cfg.batch_size) {
                let mut bx = Matrix::zeros(chunk.len(), encoded.dim);
                let mut bs = Vec::new();
                let mut bb = Vec::new();
                for (r, &o) in chunk.iter().enumerate() {
                    bx.row_mut(r).copy_from_slice(train_x.row(o));
                    bs.push(y_size[o]);
                    bb.push(y_bin[o]);
                }
                let mut tape = Tape::new();
                let (total, _, _) =
                    ref_model.loss_graph(&mut tape, bx, bs, bb, 0.0, true, true, &mut ref_rng);
                tape.backward(total);
                ref_model.params.zero_grads();
                tape.accumulate_param_grads(&mut ref_model.params);
                ref_adam.step(&mut ref_model.params);
            }
        }
        let (ref_size, ref_bin) = ref_model.logits_eval(&train_x);
        let bits = |m: &Matrix| m.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&size_logits), bits(&ref_size));
        assert_eq!(bits(&bin_logits), bits(&ref_bin));
    }

    #[test]
    fn epoch_selection_rules() {
        let mk = |metrics: Vec<(f64, f64)>| RunRecord {
            target: "t".into(),
            condition: Condition::Adversarial,
            seed: 0,
            epochs: metrics
                .into_iter()
                .map(|(s, b)| EpochMetrics {
                    lambda: 1.0,
                    train_size_acc: s,
                    train_bin_acc: b,
                    test_size_acc: 0.5,
                    size_loss: 0.0,
                    bin_loss: 0.0,
                })
                .collect(),
        };
        // epoch 12 maximizes the gap with bin above chance
        let mut metrics = vec![(0.5, 0.9); 20];
        metrics[12] = (0.9, 0.34);
        metrics[15] = (0.8, 0.30); // bigger gap but bin below chance
        let r = mk(metrics);
        assert_eq!(select_epoch(&r, Condition::Adversarial, 1.0 / 3.0).unwrap(), 12);

        // all epochs below chance: constraint dropped, plain argmax of gap
        let mut metrics = vec![(0.5, 0.2); 20];
        metrics[9] = (0.95, 0.1);
        let r = mk(metrics);
        assert_eq!(select_epoch(&r, Condition::Adversarial, 1.0 / 3.0).unwrap(), 9);

        // baseline: highest bin accuracy after epoch 10
        let mut metrics = vec![(0.5, 0.4); 20];
        metrics[15] = (0.5, 0.8);
        metrics[5] = (0.5, 0.95); // too early to be eligible
        let mut r = mk(metrics);
        r.condition = Condition::Baseline;
        assert_eq!(select_epoch(&r, Condition::Baseline, 1.0 / 3.0).unwrap(), 15);

        // short record
        let r = mk(vec![(0.5, 0.5); 8]);
        assert!(select_epoch(&r, Condition::Adversarial, 1.0 / 3.0).is_err());
    }
}
