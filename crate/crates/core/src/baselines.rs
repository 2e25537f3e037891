//! Interpretable baseline classifiers over bag-of-segment counts, the
//! leave-one-language-out x similarity-tertile harness, feature-importance
//! summaries, and the ablation battery.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::corpus::{Lexicon, SizeLabel, WordEntry};
use crate::features::{featurize, scramble_labels, AblationFilter, FeatureError, SegmentVocabulary};
use crate::stats::{self, StatsError, Tail, TestResult};
use crate::tokenizer::TokenizerRules;
use crate::typology::{Bin, TertileBinning};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Logistic,
    Tree,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Tree => "tree",
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training data has a single class; both labels are required")]
    SingleClass,
    #[error("training data is empty")]
    Empty,
    #[error("feature matrix contains a non-finite value")]
    NonFinite,
    #[error("feature/label length mismatch: {x} rows vs {y} labels")]
    LengthMismatch { x: usize, y: usize },
    #[error("training bin for target {target} / {bin} is empty")]
    EmptyBin { target: String, bin: &'static str },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

/// Full-batch gradient descent on the L2-regularized mean cross-entropy
///   J(w, b) = (1/n) sum_i [ln(1 + e^{z_i}) - y_i z_i] + (l2 / 2) |w|^2
/// with z = w.x + b and the bias left unregularized. The penalty does not
/// rescale with n, so duplicating every sample leaves the optimum (and the
/// decision boundary) unchanged. The default step is the inverse of a
/// Lipschitz bound on the gradient, so descent is monotone; iteration
/// stops on a small gradient sup-norm.
#[derive(Debug, Clone)]
pub struct LogisticConfig {
    pub l2: f64,
    /// Fixed step size; `None` computes 1/L from the data.
    pub step: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2: 1.0,
            step: None,
            max_iters: 500_000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config: LogisticConfig,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn decision_value(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision_value(x))
    }

    /// Large iff the predicted probability reaches 0.5.
    pub fn predict(&self, x: &[f64]) -> SizeLabel {
        if self.decision_value(x) >= 0.0 {
            SizeLabel::Large
        } else {
            SizeLabel::Small
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// The exact objective minimized by `train_logistic`; exposed so an
/// external optimizer can be pointed at the same function.
pub fn logistic_objective(x: &[Vec<f64>], y: &[SizeLabel], w: &[f64], b: f64, l2: f64) -> f64 {
    let n = x.len() as f64;
    let mut loss = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let z = w.iter().zip(xi).map(|(wv, xv)| wv * xv).sum::<f64>() + b;
        loss += log1p_exp(z) - (yi.index() as f64) * z;
    }
    let reg: f64 = w.iter().map(|v| v * v).sum::<f64>() * l2 / 2.0;
    loss / n + reg
}

fn check_training_inputs(x: &[Vec<f64>], y: &[SizeLabel]) -> Result<(), TrainError> {
    if x.is_empty() {
        return Err(TrainError::Empty);
    }
    if x.len() != y.len() {
        return Err(TrainError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if !y.iter().any(|l| *l == SizeLabel::Small) || !y.iter().any(|l| *l == SizeLabel::Large) {
        return Err(TrainError::SingleClass);
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFinite);
    }
    Ok(())
}

pub fn train_logistic(
    x: &[Vec<f64>],
    y: &[SizeLabel],
    config: &LogisticConfig,
) -> Result<LogisticModel, TrainError> {
    check_training_inputs(x, y)?;
    let n = x.len() as f64;
    let dim = x[0].len();
    // Lipschitz bound on grad J: trace(X~'X~)/(4n) + l2 with the bias
    // treated as an all-ones column.
    let step = config.step.unwrap_or_else(|| {
        let trace: f64 = x.iter().flatten().map(|v| v * v).sum::<f64>() + n;
        1.0 / (trace / (4.0 * n) + config.l2)
    });
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut grad_w = vec![0.0; dim];
    let mut iterations = 0;
    for iter in 0..config.max_iters {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (xi, yi) in x.iter().zip(y) {
            let z = w.iter().zip(xi).map(|(wv, xv)| wv * xv).sum::<f64>() + b;
            let r = sigmoid(z) - yi.index() as f64;
            for (g, xv) in grad_w.iter_mut().zip(xi) {
                *g += r * xv;
            }
            grad_b += r;
        }
        for (g, wv) in grad_w.iter_mut().zip(&w) {
            *g = *g / n + config.l2 * wv;
        }
        grad_b /= n;
        let sup = grad_w
            .iter()
            .chain(std::iter::once(&grad_b))
            .fold(0.0f64, |m, g| m.max(g.abs()));
        iterations = iter + 1;
        if sup < config.tol {
            break;
        }
        for (wv, g) in w.iter_mut().zip(&grad_w) {
            *wv -= step * g;
        }
        b -= step * grad_b;
    }
    Ok(LogisticModel {
        weights: w,
        bias: b,
        config: config.clone(),
        iterations,
    })
}

// ---------------------------------------------------------------------------
// Decision tree (CART, Gini)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_split: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 6,
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf { label: SizeLabel },
    Split {
        feature: usize,
        /// Count threshold: x[feature] <= threshold goes left.
        threshold: u32,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

#[derive(Debug, Clone)]
pub struct DecisionTree {
    pub root: TreeNode,
    pub config: TreeConfig,
}

impl DecisionTree {
    pub fn predict(&self, x: &[u32]) -> SizeLabel {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { label } => return *label,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Feature index of the root split, if the tree is not a single leaf.
    pub fn root_feature(&self) -> Option<usize> {
        match &self.root {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split { feature, .. } => Some(*feature),
        }
    }

    pub fn depth(&self) -> usize {
        fn d(node: &TreeNode) -> usize {
            match node {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }
}

fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p0 = counts[0] as f64 / n;
    let p1 = counts[1] as f64 / n;
    1.0 - p0 * p0 - p1 * p1
}

/// Best (feature, threshold) by Gini impurity reduction over all observed
/// half-point splits; ties go to the lowest feature index, then the lowest
/// threshold. Returns `None` when no split strictly reduces impurity.
pub fn best_split(x: &[Vec<u32>], y: &[SizeLabel]) -> Option<(usize, u32, f64)> {
    let n = x.len();
    let dim = x[0].len();
    let mut label_counts = [0usize; 2];
    for yi in y {
        label_counts[yi.index()] += 1;
    }
    let parent = gini(label_counts);
    let mut best: Option<(usize, u32, f64)> = None;
    for f in 0..dim {
        // sort (value, label) for this feature; candidate thresholds lie
        // between consecutive distinct values
        let mut vals: Vec<(u32, usize)> = x.iter().zip(y).map(|(xi, yi)| (xi[f], yi.index())).collect();
        vals.sort_by_key(|(v, _)| *v);
        let mut left = [0usize; 2];
        let mut right = label_counts;
        let mut i = 0;
        while i < n {
            let v = vals[i].0;
            while i < n && vals[i].0 == v {
                left[vals[i].1] += 1;
                right[vals[i].1] -= 1;
                i += 1;
            }
            if i == n {
                break; // splitting above the max value puts everything left
            }
            let nl = (left[0] + left[1]) as f64;
            let nr = (right[0] + right[1]) as f64;
            let weighted = (nl * gini(left) + nr * gini(right)) / n as f64;
            let reduction = parent - weighted;
            if reduction > 1e-12 && best.map_or(true, |(_, _, r)| reduction > r) {
                best = Some((f, v, reduction));
            }
        }
    }
    best
}

fn majority(y: &[SizeLabel]) -> SizeLabel {
    let mut counts = [0usize; 2];
    for yi in y {
        counts[yi.index()] += 1;
    }
    // ties resolve to small, the lower class index
    if counts[1] > counts[0] {
        SizeLabel::Large
    } else {
        SizeLabel::Small
    }
}

fn grow(x: &[Vec<u32>], y: &[SizeLabel], depth: usize, config: &TreeConfig) -> TreeNode {
    let pure = y.iter().all(|l| *l == y[0]);
    if pure || depth >= config.max_depth || y.len() < config.min_samples_split {
        return TreeNode::Leaf { label: majority(y) };
    }
    let Some((feature, threshold, _)) = best_split(x, y) else {
        return TreeNode::Leaf { label: majority(y) };
    };
    let (mut lx, mut ly, mut rx, mut ry) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (xi, yi) in x.iter().zip(y) {
        if xi[feature] <= threshold {
            lx.push(xi.clone());
            ly.push(*yi);
        } else {
            rx.push(xi.clone());
            ry.push(*yi);
        }
    }
    TreeNode::Split {
        feature,
        threshold,
        left: Box::new(grow(&lx, &ly, depth + 1, config)),
        right: Box::new(grow(&rx, &ry, depth + 1, config)),
    }
}

/// Greedy CART with the Gini criterion over integer count features.
/// Single-class data degenerates to a leaf.
pub fn train_tree(x: &[Vec<u32>], y: &[SizeLabel], config: &TreeConfig) -> Result<DecisionTree, TrainError> {
    if x.is_empty() {
        return Err(TrainError::Empty);
    }
    if x.len() != y.len() {
        return Err(TrainError::LengthMismatch { x: x.len(), y: y.len() });
    }
    Ok(DecisionTree {
        root: grow(x, y, 0, config),
        config: config.clone(),
    })
}

// ---------------------------------------------------------------------------
// Leave-one-language-out x tertile harness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub logistic: LogisticConfig,
    pub tree: TreeConfig,
    pub filter: AblationFilter,
    /// Seed for the scrambled-labels condition (applied to each target's
    /// evaluation split).
    pub scramble_seed: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            logistic: LogisticConfig::default(),
            tree: TreeConfig::default(),
            filter: AblationFilter::None,
            scramble_seed: 0,
        }
    }
}

/// One evaluated (target language, bin) cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub target: String,
    pub bin: Bin,
    pub correct: usize,
    pub total: usize,
}

impl CellResult {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// A fitted model retained for importance analysis.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Logistic(LogisticModel),
    Tree(DecisionTree),
}

#[derive(Debug, Clone)]
pub struct FitRecord {
    pub target: String,
    pub bin: Bin,
    pub vocab: SegmentVocabulary,
    pub model: FittedModel,
}

/// Per-bin aggregate: mean accuracy, 95% CI half-width, and the one-sample
/// t against chance over per-language accuracies (one-sided greater).
/// `per_language_test` is `None` when the accuracies have no variance.
#[derive(Debug, Clone)]
pub struct BinSummary {
    pub bin: Bin,
    pub mean: f64,
    pub ci95: f64,
    pub per_language_test: Option<TestResult>,
    pub pooled_test: Option<TestResult>,
    pub cohens_d: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BinAccuracyTable {
    pub kind: ModelKind,
    pub cells: Vec<CellResult>,
}

impl BinAccuracyTable {
    pub fn accuracies_in(&self, bin: Bin) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.bin == bin)
            .map(|c| c.accuracy())
            .collect()
    }

    pub fn bin_mean(&self, bin: Bin) -> f64 {
        let acc = self.accuracies_in(bin);
        acc.iter().sum::<f64>() / acc.len() as f64
    }

    pub fn overall_mean(&self) -> f64 {
        let acc: Vec<f64> = self.cells.iter().map(|c| c.accuracy()).collect();
        acc.iter().sum::<f64>() / acc.len() as f64
    }

    pub fn summarize(&self, chance: f64) -> Vec<BinSummary> {
        Bin::ALL
            .iter()
            .map(|&bin| {
                let acc = self.accuracies_in(bin);
                let (mean, ci95) = stats::mean_ci95(&acc);
                let per_language_test =
                    ok_or_degenerate(stats::one_sample_t(&acc, chance, Tail::OneSidedGreater));
                let pooled: Vec<f64> = self
                    .cells
                    .iter()
                    .filter(|c| c.bin == bin)
                    .flat_map(|c| {
                        std::iter::repeat(1.0)
                            .take(c.correct)
                            .chain(std::iter::repeat(0.0).take(c.total - c.correct))
                    })
                    .collect();
                let pooled_test =
                    ok_or_degenerate(stats::one_sample_t(&pooled, chance, Tail::OneSidedGreater));
                let cohens_d = ok_or_degenerate(stats::cohens_d(&acc, chance));
                BinSummary {
                    bin,
                    mean,
                    ci95,
                    per_language_test,
                    pooled_test,
                    cohens_d,
                }
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("target\tbin\tmodel\tcorrect\ttotal\taccuracy\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{:.6}\n",
                c.target,
                c.bin.name(),
                self.kind.name(),
                c.correct,
                c.total,
                c.accuracy()
            ));
        }
        out
    }
}

fn ok_or_degenerate<T>(r: Result<T, StatsError>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(StatsError::ZeroVariance) => None,
        Err(_) => None,
    }
}

fn collect_features(
    entries: &[&WordEntry],
    vocab: &SegmentVocabulary,
    filter: &AblationFilter,
    rules: &TokenizerRules,
) -> (Vec<Vec<u32>>, Vec<SizeLabel>) {
    let mut xs = Vec::with_capacity(entries.len());
    let mut ys = Vec::with_capacity(entries.len());
    for e in entries {
        xs.push(featurize(e, vocab, filter, rules).counts);
        ys.push(e.size_label);
    }
    (xs, ys)
}

fn to_f64_rows(rows: &[Vec<u32>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect()
}

/// Fit one (target, bin) cell and evaluate on the full held-out language.
fn run_cell(
    lexicon: &Lexicon,
    binning: &TertileBinning,
    bin: Bin,
    kind: ModelKind,
    config: &HarnessConfig,
    rules: &TokenizerRules,
) -> Result<(CellResult, FitRecord), TrainError> {
    let train_langs = binning.languages_in(bin);
    if train_langs.is_empty() {
        return Err(TrainError::EmptyBin {
            target: binning.target.clone(),
            bin: bin.name(),
        });
    }
    let train_entries: Vec<&WordEntry> = lexicon
        .entries
        .iter()
        .filter(|e| train_langs.iter().any(|l| *l == e.language))
        .collect();
    if train_entries.is_empty() {
        return Err(TrainError::EmptyBin {
            target: binning.target.clone(),
            bin: bin.name(),
        });
    }
    let vocab = SegmentVocabulary::build(train_entries.iter().copied(), rules)?;
    let (train_x, train_y) = collect_features(&train_entries, &vocab, &config.filter, rules);

    let mut test_entries: Vec<WordEntry> = lexicon
        .entries
        .iter()
        .filter(|e| e.language == binning.target)
        .cloned()
        .collect();
    if matches!(config.filter, AblationFilter::ScrambledLabels) {
        test_entries = scramble_labels(&test_entries, config.scramble_seed);
    }
    let test_refs: Vec<&WordEntry> = test_entries.iter().collect();
    let (test_x, test_y) = collect_features(&test_refs, &vocab, &config.filter, rules);

    let (correct, model) = match kind {
        ModelKind::Logistic => {
            let m = train_logistic(&to_f64_rows(&train_x), &train_y, &config.logistic)?;
            let c = test_x
                .iter()
                .zip(&test_y)
                .filter(|(xi, yi)| {
                    let xf: Vec<f64> = xi.iter().map(|&v| v as f64).collect();
                    m.predict(&xf) == **yi
                })
                .count();
            (c, FittedModel::Logistic(m))
        }
        ModelKind::Tree => {
            let m = train_tree(&train_x, &train_y, &config.tree)?;
            let c = test_x
                .iter()
                .zip(&test_y)
                .filter(|(xi, yi)| m.predict(xi) == **yi)
                .count();
            (c, FittedModel::Tree(m))
        }
    };
    let cell = CellResult {
        target: binning.target.clone(),
        bin,
        correct,
        total: test_y.len(),
    };
    let fit = FitRecord {
        target: binning.target.clone(),
        bin,
        vocab,
        model,
    };
    Ok((cell, fit))
}

#[derive(Debug)]
pub struct LooOutcome {
    pub table: BinAccuracyTable,
    pub fits: Vec<FitRecord>,
}

/// For each target language and each tertile, train on that tertile's
/// languages only and evaluate on all held-out target words.
pub fn run_loo_bins(
    lexicon: &Lexicon,
    binnings: &[TertileBinning],
    kind: ModelKind,
    config: &HarnessConfig,
    rules: &TokenizerRules,
) -> Result<LooOutcome, TrainError> {
    let mut cells = Vec::with_capacity(binnings.len() * 3);
    let mut fits = Vec::with_capacity(binnings.len() * 3);
    for binning in binnings {
        for bin in Bin::ALL {
            let (cell, fit) = run_cell(lexicon, binning, bin, kind, config, rules)?;
            cells.push(cell);
            fits.push(fit);
        }
    }
    Ok(LooOutcome {
        table: BinAccuracyTable { kind, cells },
        fits,
    })
}

// ---------------------------------------------------------------------------
// Importance analysis
// ---------------------------------------------------------------------------

/// Per-segment logistic-regression coefficient behaviour across fits.
#[derive(Debug, Clone)]
pub struct SegmentImportance {
    pub segment: String,
    /// Number of fitted models whose vocabulary contains the segment.
    pub models: usize,
    pub positive_fraction: f64,
    /// max(positive fraction, negative fraction).
    pub consistency: f64,
    pub mean_coefficient: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ImportanceReport {
    pub lr: Vec<SegmentImportance>,
    /// Root-split segment histogram over decision-tree fits.
    pub dt_root_counts: BTreeMap<String, usize>,
    pub lr_models: usize,
    pub dt_models: usize,
}

impl ImportanceReport {
    /// Segments whose coefficient sign agrees in more than `threshold` of
    /// the models containing them, sorted by |mean coefficient| descending.
    pub fn consistent_lr(&self, threshold: f64) -> Vec<&SegmentImportance> {
        let mut v: Vec<&SegmentImportance> = self
            .lr
            .iter()
            .filter(|s| s.consistency > threshold)
            .collect();
        v.sort_by(|a, b| {
            b.mean_coefficient
                .abs()
                .partial_cmp(&a.mean_coefficient.abs())
                .unwrap()
                .then_with(|| a.segment.cmp(&b.segment))
        });
        v
    }

    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("section\tsegment\tmodels\tpositive_fraction\tconsistency\tmean_coefficient\n");
        for s in &self.lr {
            out.push_str(&format!(
                "lr\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
                s.segment, s.models, s.positive_fraction, s.consistency, s.mean_coefficient
            ));
        }
        for (seg, count) in &self.dt_root_counts {
            out.push_str(&format!("dt_root\t{seg}\t{count}\t\t\t\n"));
        }
        out
    }
}

/// A segment absent from a model's vocabulary contributes neither sign nor
/// mean for that model.
pub fn importance_report(fits: &[FitRecord]) -> ImportanceReport {
    let mut acc: BTreeMap<String, (usize, usize, f64)> = BTreeMap::new(); // (models, positive, coeff sum)
    let mut dt_root_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut lr_models = 0usize;
    let mut dt_models = 0usize;
    for fit in fits {
        match &fit.model {
            FittedModel::Logistic(m) => {
                lr_models += 1;
                for (seg, col) in fit.vocab.segments().iter().zip(0..) {
                    let w = m.weights[col];
                    let e = acc.entry(seg.clone()).or_default();
                    e.0 += 1;
                    if w > 0.0 {
                        e.1 += 1;
                    }
                    e.2 += w;
                }
            }
            FittedModel::Tree(t) => {
                dt_models += 1;
                if let Some(f) = t.root_feature() {
                    let seg = fit.vocab.segments()[f].clone();
                    *dt_root_counts.entry(seg).or_default() += 1;
                }
            }
        }
    }
    let lr = acc
        .into_iter()
        .map(|(segment, (models, positive, sum))| {
            let positive_fraction = positive as f64 / models as f64;
            SegmentImportance {
                segment,
                models,
                positive_fraction,
                consistency: positive_fraction.max(1.0 - positive_fraction),
                mean_coefficient: sum / models as f64,
            }
        })
        .collect();
    ImportanceReport {
        lr,
        dt_root_counts,
        lr_models,
        dt_models,
    }
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub condition_id: usize,
    pub condition: String,
    pub kind: ModelKind,
    pub overall_mean: f64,
    pub bin_means: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "condition_id\tcondition\tmodel\tmean\tmost_similar\tsomewhat_similar\tleast_similar\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                r.condition_id,
                r.condition,
                r.kind.name(),
                r.overall_mean,
                r.bin_means[0],
                r.bin_means[1],
                r.bin_means[2]
            ));
        }
        out
    }

    /// Text table in the layout of the ablation results table:
    /// one row per condition, LR and DT means plus bin-wise breakdown.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<4} {:<18} {:>8} {:>8}   {:<23} | {:<23}\n",
            "ID", "Condition", "LR Mean", "DT Mean", "LR Most/Some/Least", "DT Most/Some/Least"
        ));
        let ids: Vec<usize> = {
            let mut v: Vec<usize> = self.rows.iter().map(|r| r.condition_id).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        for id in ids {
            let lr = self
                .rows
                .iter()
                .find(|r| r.condition_id == id && r.kind == ModelKind::Logistic);
            let dt = self
                .rows
                .iter()
                .find(|r| r.condition_id == id && r.kind == ModelKind::Tree);
            let name = lr.or(dt).map(|r| r.condition.clone()).unwrap_or_default();
            let fmt_bins = |r: Option<&AblationRow>| match r {
                Some(r) => format!(
                    "{:>5.1} / {:>5.1} / {:>5.1}",
                    100.0 * r.bin_means[0],
                    100.0 * r.bin_means[1],
                    100.0 * r.bin_means[2]
                ),
                None => String::from("-"),
            };
            let fmt_mean = |r: Option<&AblationRow>| match r {
                Some(r) => format!("{:.1}", 100.0 * r.overall_mean),
                None => String::from("-"),
            };
            out.push_str(&format!(
                "{:<4} {:<18} {:>8} {:>8}   {:<23} | {:<23}\n",
                id,
                name,
                fmt_mean(lr),
                fmt_mean(dt),
                fmt_bins(lr),
                fmt_bins(dt)
            ));
        }
        out
    }
}

/// Ablation conditions 0-5 in table order.
pub fn standard_conditions(rules: &TokenizerRules) -> Vec<(usize, String, AblationFilter)> {
    let sets = crate::features::default_segment_sets(rules);
    vec![
        (0, "baseline".into(), AblationFilter::None),
        (1, "scrambled_labels".into(), AblationFilter::ScrambledLabels),
        (2, "no_vowels".into(), AblationFilter::NoVowels),
        (3, "high_frequency".into(), AblationFilter::HighFrequencyOnly(sets.high_frequency)),
        (4, "plosives_only".into(), AblationFilter::PlosivesOnly(sets.plosives)),
        (5, "nasals_only".into(), AblationFilter::NasalsOnly(sets.nasals)),
    ]
}

/// Re-run the harness per condition per model kind.
pub fn run_ablations(
    lexicon: &Lexicon,
    binnings: &[TertileBinning],
    conditions: &[(usize, String, AblationFilter)],
    base_config: &HarnessConfig,
    rules: &TokenizerRules,
) -> Result<AblationTable, TrainError> {
    let mut rows = Vec::new();
    for (id, name, filter) in conditions {
        for kind in [ModelKind::Logistic, ModelKind::Tree] {
            let config = HarnessConfig {
                filter: filter.clone(),
                ..base_config.clone()
            };
            let outcome = run_loo_bins(lexicon, binnings, kind, &config, rules)?;
            rows.push(AblationRow {
                condition_id: *id,
                condition: name.clone(),
                kind,
                overall_mean: outcome.table.overall_mean(),
                bin_means: [
                    outcome.table.bin_mean(Bin::MostSimilar),
                    outcome.table.bin_mean(Bin::SomewhatSimilar),
                    outcome.table.bin_mean(Bin::LeastSimilar),
                ],
            });
        }
    }
    Ok(AblationTable { rows })
}

/// Text table in the layout of the main accuracy table: mean accuracy by
/// model and similarity bin with significance stars from the per-language
/// one-sample t-test against chance (0.5).
pub fn render_accuracy_table(tables: &[&BinAccuracyTable]) -> String {
    fn stars(t: &Option<TestResult>) -> &'static str {
        match t {
            Some(r) if r.p < 0.001 => "***",
            Some(r) if r.p < 0.01 => "**",
            Some(r) if r.p < 0.05 => "*",
            Some(_) => "",
            None => "(no var)",
        }
    }
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:>22} {:>22} {:>22}\n",
        "Model", "Most Similar", "Somewhat Similar", "Least Similar"
    ));
    for table in tables {
        let sums = table.summarize(0.5);
        let cell = |s: &BinSummary| {
            format!(
                "{:.1}{} [±{:.1}]",
                100.0 * s.mean,
                stars(&s.per_language_test),
                100.0 * s.ci95
            )
        };
        out.push_str(&format!(
            "{:<14} {:>22} {:>22} {:>22}\n",
            table.kind.name(),
            cell(&sums[0]),
            cell(&sums[1]),
            cell(&sums[2])
        ));
    }
    out
}
