//! Synthetic multi-family lexicons, Swadesh lists, and pretraining corpora
//! with controllable planted size symbolism and family signatures.
//!
//! Words are sampled as independent segments from per-language categorical
//! distributions, so the Bayes accuracy of the optimal classifier is
//! exactly enumerable. Three knobs shape the distributions:
//!
//! * `bias` — a universal form-size link: with this probability a slot is
//!   drawn from the small-marker set ({i, e}-like) in small words and from
//!   the large-marker set ({a, o, u}-like) in large words.
//! * `family_signature` — family-specific segment preferences (a seeded
//!   Dirichlet perturbation shared within each family) plus cognate-style
//!   Swadesh lists, so LDN recovers family structure.
//! * `confound` — a family-correlated pseudo-size link: each family gets
//!   its own private marker pair, so size is predictable within a family
//!   but no rule transfers across families.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Lexicon, PretrainCorpus, SizeLabel, WordEntry};
use crate::typology::SwadeshList;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub families: usize,
    pub languages_per_family: usize,
    /// Balanced between small and large; must be even.
    pub words_per_language: usize,
    pub min_word_len: usize,
    pub max_word_len: usize,
    pub small_markers: Vec<String>,
    pub large_markers: Vec<String>,
    /// Neutral segments filling out the global pool.
    pub consonants: Vec<String>,
    /// Universal form-size bias in [0, 1].
    pub bias: f64,
    /// Family signature strength in [0, 1].
    pub family_signature: f64,
    /// Family-correlated pseudo-size bias in [0, 1] (0 = off).
    pub confound: f64,
    pub swadesh_concepts: usize,
    pub pretrain_words: usize,
    /// Zipf exponent of the base segment distribution.
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            families: 9,
            languages_per_family: 3,
            words_per_language: 30,
            min_word_len: 3,
            max_word_len: 7,
            small_markers: vec!["i".into(), "e".into()],
            large_markers: vec!["a".into(), "o".into(), "u".into()],
            consonants: [
                "p", "t", "k", "b", "d", "g", "m", "n", "ŋ", "s", "z", "f", "v",
                "l", "r", "w", "j", "h", "ʃ", "t\u{0361}ʃ", "ʔ",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            bias: 0.0,
            family_signature: 0.0,
            confound: 0.0,
            swadesh_concepts: 40,
            pretrain_words: 0,
            zipf_exponent: 1.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn pool(&self) -> Vec<String> {
        self.small_markers
            .iter()
            .chain(&self.large_markers)
            .chain(&self.consonants)
            .cloned()
            .collect()
    }

    pub fn echo(&self) -> String {
        format!(
            "families={} languages_per_family={} words_per_language={} len={}..{} bias={} family_signature={} confound={} swadesh_concepts={} pretrain_words={} zipf={} seed={}",
            self.families,
            self.languages_per_family,
            self.words_per_language,
            self.min_word_len,
            self.max_word_len,
            self.bias,
            self.family_signature,
            self.confound,
            self.swadesh_concepts,
            self.pretrain_words,
            self.zipf_exponent,
            self.seed
        )
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.families == 0
            || self.languages_per_family == 0
            || self.words_per_language == 0
            || self.words_per_language % 2 != 0
        {
            return Err(SynthError::BadConfig(
                "families, languages_per_family and (even) words_per_language must be positive".into(),
            ));
        }
        if self.min_word_len == 0 || self.min_word_len > self.max_word_len {
            return Err(SynthError::BadConfig("bad word length range".into()));
        }
        if self.small_markers.is_empty() || self.large_markers.is_empty() || self.consonants.len() < 4 {
            return Err(SynthError::BadConfig("degenerate segment pools".into()));
        }
        for v in [self.bias, self.family_signature, self.confound] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::BadConfig("bias knobs must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    BadConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Ground-truth sampling probabilities per language and label.
#[derive(Debug, Clone)]
pub struct LanguageTruth {
    pub language: String,
    pub family: String,
    /// P(segment | small) over the pool, index-aligned with `Manifest::pool`.
    pub probs_small: Vec<f64>,
    pub probs_large: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub pool: Vec<String>,
    pub languages: Vec<LanguageTruth>,
    pub config_echo: String,
}

#[derive(Debug)]
pub struct SynthOutput {
    pub lexicon: Lexicon,
    pub swadesh: Vec<SwadeshList>,
    pub pretrain: PretrainCorpus,
    pub manifest: Manifest,
}

// Stable 64-bit FNV-1a for deriving per-stream seeds.
fn mix_seed(seed: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ seed.rotate_left(17);
    for b in stream.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|k| 1.0 / (k as f64).powf(exponent)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

fn dirichlet_uniform(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Dirichlet(1, ..., 1) via normalized Exp(1) draws.
    let draws: Vec<f64> = (0..n)
        .map(|_| -(1.0 - rng.gen::<f64>()).ln())
        .collect();
    let sum: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / sum).collect()
}

struct LanguageModel {
    language: String,
    family: String,
    family_idx: usize,
    /// Neutral per-slot distribution over the pool.
    base: Vec<f64>,
}

/// Per-family private marker columns used by the confound knob.
struct FamilyMarkers {
    small: Vec<usize>,
    large: Vec<usize>,
}

struct Generator {
    config: SynthConfig,
    pool: Vec<String>,
    languages: Vec<LanguageModel>,
    family_markers: Vec<FamilyMarkers>,
}

impl Generator {
    fn new(config: &SynthConfig) -> Generator {
        let pool = config.pool();
        let p0 = zipf_weights(pool.len(), config.zipf_exponent);
        let gamma = config.family_signature;
        let n_cons = config.consonants.len();
        let cons_base = config.small_markers.len() + config.large_markers.len();

        let mut languages = Vec::new();
        let mut family_markers = Vec::new();
        for f in 0..config.families {
            let family = format!("fam{f:02}");
            let mut frng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &format!("family/{f}")));
            let perturb = dirichlet_uniform(pool.len(), &mut frng);
            let base: Vec<f64> = p0
                .iter()
                .zip(&perturb)
                .map(|(p, d)| (1.0 - gamma) * p + gamma * d)
                .collect();
            // private marker columns drawn from the consonant block so the
            // confound never aligns with the universal vowel markers
            let mut idxs: Vec<usize> = (0..n_cons).map(|i| cons_base + i).collect();
            for i in (1..idxs.len()).rev() {
                let j = frng.gen_range(0..=i);
                idxs.swap(i, j);
            }
            family_markers.push(FamilyMarkers {
                small: idxs[0..2].to_vec(),
                large: idxs[2..4].to_vec(),
            });
            for l in 0..config.languages_per_family {
                languages.push(LanguageModel {
                    language: format!("lang_f{f:02}n{l:02}"),
                    family: family.clone(),
                    family_idx: f,
                    base: base.clone(),
                });
            }
        }
        Generator {
            config: config.clone(),
            pool,
            languages,
            family_markers,
        }
    }

    /// Exact per-slot distribution for (language, label) — this is what the
    /// manifest records and what `expected_accuracy` enumerates over.
    fn slot_distribution(&self, lang: &LanguageModel, label: SizeLabel) -> Vec<f64> {
        let c = &self.config;
        let markers = match label {
            SizeLabel::Small => &c.small_markers,
            SizeLabel::Large => &c.large_markers,
        };
        let fam = &self.family_markers[lang.family_idx];
        let fam_cols = match label {
            SizeLabel::Small => &fam.small,
            SizeLabel::Large => &fam.large,
        };
        let p_bias = c.bias;
        let p_confound = (1.0 - c.bias) * c.confound;
        let p_base = 1.0 - p_bias - p_confound;
        let mut probs: Vec<f64> = lang.base.iter().map(|b| p_base * b).collect();
        for (i, seg) in self.pool.iter().enumerate() {
            if markers.contains(seg) {
                probs[i] += p_bias / markers.len() as f64;
            }
        }
        for &col in fam_cols {
            probs[col] += p_confound / fam_cols.len() as f64;
        }
        probs
    }

    fn sample_word(&self, probs: &WeightedIndex<f64>, len: usize, rng: &mut ChaCha8Rng) -> String {
        (0..len).map(|_| self.pool[probs.sample(rng)].as_str()).collect()
    }

    fn word_len(&self, rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(self.config.min_word_len..=self.config.max_word_len)
    }
}

/// Generate a full synthetic dataset; deterministic per seed.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    let g = Generator::new(config);

    // lexicon
    let mut entries = Vec::new();
    for lang in &g.languages {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &format!("lexicon/{}", lang.language)));
        let half = config.words_per_language / 2;
        for (label, count) in [(SizeLabel::Small, half), (SizeLabel::Large, half)] {
            let dist = WeightedIndex::new(g.slot_distribution(lang, label)).expect("valid distribution");
            for w in 0..count {
                let len = g.word_len(&mut rng);
                let ipa = g.sample_word(&dist, len, &mut rng);
                entries.push(WordEntry {
                    lemma: format!("{}_{}{w:03}", lang.language, label.as_str().chars().next().unwrap()),
                    language: lang.language.clone(),
                    family: lang.family.clone(),
                    ipa,
                    size_label: label,
                });
            }
        }
    }
    let lexicon = Lexicon::from_entries(entries);

    // Swadesh lists: per family and concept a prototype, mutated per
    // language with keep-probability = family_signature.
    let gamma = config.family_signature;
    let mut swadesh = Vec::new();
    let mut prototypes: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for f in 0..config.families {
        let mut prng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &format!("swadesh/proto/{f}")));
        let lang0 = g
            .languages
            .iter()
            .find(|l| l.family_idx == f)
            .expect("family has languages");
        let dist = WeightedIndex::new(lang0.base.clone()).expect("valid distribution");
        for c in 0..config.swadesh_concepts {
            let len = g.word_len(&mut prng);
            let proto: Vec<usize> = (0..len).map(|_| dist.sample(&mut prng)).collect();
            prototypes.insert((f, c), proto);
        }
    }
    for lang in &g.languages {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &format!("swadesh/{}", lang.language)));
        let dist = WeightedIndex::new(lang.base.clone()).expect("valid distribution");
        let mut entries = BTreeMap::new();
        for c in 0..config.swadesh_concepts {
            let proto = &prototypes[&(lang.family_idx, c)];
            let form: String = proto
                .iter()
                .map(|&seg| {
                    if rng.gen::<f64>() < gamma {
                        g.pool[seg].as_str()
                    } else {
                        g.pool[dist.sample(&mut rng)].as_str()
                    }
                })
                .collect();
            entries.insert(format!("c{c:03}"), form);
        }
        swadesh.push(SwadeshList {
            language: lang.language.clone(),
            entries,
        });
    }

    // pretraining corpus: unlabeled words round-robin across languages
    let mut items = Vec::new();
    let mut per_language: BTreeMap<String, usize> = BTreeMap::new();
    if config.pretrain_words > 0 {
        let dists: Vec<WeightedIndex<f64>> = g
            .languages
            .iter()
            .map(|l| WeightedIndex::new(l.base.clone()).expect("valid distribution"))
            .collect();
        let mut rngs: Vec<ChaCha8Rng> = g
            .languages
            .iter()
            .map(|l| ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &format!("pretrain/{}", l.language))))
            .collect();
        for w in 0..config.pretrain_words {
            let li = w % g.languages.len();
            let len = g.word_len(&mut rngs[li]);
            let word = g.sample_word(&dists[li], len, &mut rngs[li]);
            *per_language.entry(g.languages[li].language.clone()).or_default() += 1;
            items.push((g.languages[li].language.clone(), word));
        }
    }
    let pretrain = PretrainCorpus {
        items,
        per_language,
        skipped: 0,
    };

    let manifest = Manifest {
        pool: g.pool.clone(),
        languages: g
            .languages
            .iter()
            .map(|l| LanguageTruth {
                language: l.language.clone(),
                family: l.family.clone(),
                probs_small: g.slot_distribution(l, SizeLabel::Small),
                probs_large: g.slot_distribution(l, SizeLabel::Large),
            })
            .collect(),
        config_echo: config.echo(),
    };

    Ok(SynthOutput {
        lexicon,
        swadesh,
        pretrain,
        manifest,
    })
}

impl Manifest {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# config {}\n", self.config_echo));
        out.push_str("language\tfamily\tlabel\tsegment\tprobability\n");
        for lang in &self.languages {
            for (label, probs) in [("small", &lang.probs_small), ("large", &lang.probs_large)] {
                for (seg, p) in self.pool.iter().zip(probs) {
                    out.push_str(&format!(
                        "{}\t{}\t{}\t{}\t{:.12}\n",
                        lang.language, lang.family, label, seg, p
                    ));
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        fs::write(path, self.to_tsv()).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Analytic Bayes accuracy of the optimal per-segment-likelihood classifier
/// under the manifest's sampling distribution, by exact enumeration of the
/// multiset outcome space for each word length, averaged over lengths and
/// languages. Predictions at likelihood ties go to "large", mirroring the
/// classifiers' decision rule, so a bias of zero yields exactly 0.5.
pub fn expected_accuracy(config: &SynthConfig) -> Result<f64, SynthError> {
    config.validate()?;
    let g = Generator::new(config);
    let mut acc_sum = 0.0;
    for lang in &g.languages {
        let ps = g.slot_distribution(lang, SizeLabel::Small);
        let pl = g.slot_distribution(lang, SizeLabel::Large);
        let mut lang_acc = 0.0;
        let lengths = (config.min_word_len..=config.max_word_len).collect::<Vec<_>>();
        for &len in &lengths {
            lang_acc += bayes_accuracy_for_length(&ps, &pl, len);
        }
        acc_sum += lang_acc / lengths.len() as f64;
    }
    Ok(acc_sum / g.languages.len() as f64)
}

/// Enumerate all count vectors of total `len` over the pool, accumulating
/// P(multiset | small) and P(multiset | large) incrementally.
fn bayes_accuracy_for_length(ps: &[f64], pl: &[f64], len: usize) -> f64 {
    fn rec(
        ps: &[f64],
        pl: &[f64],
        seg: usize,
        remaining: usize,
        prob_s: f64,
        prob_l: f64,
        coef: f64,
        acc: &mut f64,
    ) {
        if seg == ps.len() - 1 {
            // last segment takes all remaining slots
            let k = remaining as f64;
            let ws = prob_s * ps[seg].powf(k);
            let wl = prob_l * pl[seg].powf(k);
            let mut c = coef;
            for i in 0..remaining {
                c /= (i + 1) as f64;
            }
            // equal-prior Bayes: correct mass is max(ws, wl); ties predict large
            *acc += 0.5 * c * ws.max(wl);
            return;
        }
        let mut prob_s_k = prob_s;
        let mut prob_l_k = prob_l;
        let mut coef_k = coef;
        for count in 0..=remaining {
            if count > 0 {
                prob_s_k *= ps[seg];
                prob_l_k *= pl[seg];
                coef_k /= count as f64;
            }
            rec(ps, pl, seg + 1, remaining - count, prob_s_k, prob_l_k, coef_k, acc);
        }
    }
    let mut acc = 0.0;
    let len_fact: f64 = (1..=len).map(|i| i as f64).product();
    rec(ps, pl, 0, len, 1.0, 1.0, len_fact, &mut acc);
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{tokenize, TokenizerRules};

    fn small_config() -> SynthConfig {
        SynthConfig {
            families: 2,
            languages_per_family: 2,
            words_per_language: 10,
            min_word_len: 2,
            max_word_len: 4,
            pretrain_words: 20,
            swadesh_concepts: 8,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn seed_determinism() {
        let cfg = SynthConfig { bias: 0.5, family_signature: 0.4, seed: 11, ..small_config() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.lexicon.entries, b.lexicon.entries);
        assert_eq!(a.pretrain.items, b.pretrain.items);
        for (x, y) in a.swadesh.iter().zip(&b.swadesh) {
            assert_eq!(x.entries, y.entries);
        }
    }

    #[test]
    fn everything_tokenizes_and_is_balanced() {
        let cfg = SynthConfig { bias: 0.8, family_signature: 0.5, seed: 3, ..small_config() };
        let out = generate(&cfg).unwrap();
        let rules = TokenizerRules::default();
        assert_eq!(out.lexicon.entries.len(), 4 * 10);
        for (lang, &(s, l)) in &out.lexicon.report.per_language {
            assert_eq!((s, l), (5, 5), "unbalanced language {lang}");
        }
        for e in &out.lexicon.entries {
            let toks = tokenize(&e.ipa, &rules).unwrap();
            assert!((cfg.min_word_len..=cfg.max_word_len).contains(&toks.len()));
        }
        for list in &out.swadesh {
            assert_eq!(list.entries.len(), 8);
        }
        assert_eq!(out.pretrain.items.len(), 20);
    }

    #[test]
    fn manifest_distributions_sum_to_one() {
        let cfg = SynthConfig { bias: 0.6, confound: 0.3, family_signature: 0.7, seed: 5, ..small_config() };
        let out = generate(&cfg).unwrap();
        for lang in &out.manifest.languages {
            for probs in [&lang.probs_small, &lang.probs_large] {
                let sum: f64 = probs.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(probs.iter().all(|p| *p >= 0.0));
            }
        }
    }

    #[test]
    fn zero_bias_means_label_independent_distributions() {
        let cfg = SynthConfig { bias: 0.0, confound: 0.0, family_signature: 0.5, seed: 9, ..small_config() };
        let out = generate(&cfg).unwrap();
        for lang in &out.manifest.languages {
            for (a, b) in lang.probs_small.iter().zip(&lang.probs_large) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn expected_accuracy_extremes() {
        let mut cfg = small_config();
        cfg.bias = 0.0;
        assert!((expected_accuracy(&cfg).unwrap() - 0.5).abs() < 1e-12);
        cfg.bias = 1.0;
        // disjoint marker sets make the mapping deterministic
        assert!((expected_accuracy(&cfg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expected_accuracy_matches_bruteforce_enumeration() {
        // Tiny pool so the naive sequence enumeration is cheap.
        let cfg = SynthConfig {
            families: 1,
            languages_per_family: 1,
            min_word_len: 4,
            max_word_len: 4,
            small_markers: vec!["i".into()],
            large_markers: vec!["a".into()],
            consonants: vec!["p".into(), "t".into(), "k".into(), "m".into()],
            bias: 0.5,
            ..small_config()
        };
        let got = expected_accuracy(&cfg).unwrap();

        // independent oracle: enumerate all pool^4 ordered words
        let g = Generator::new(&cfg);
        let lang = &g.languages[0];
        let ps = g.slot_distribution(lang, SizeLabel::Small);
        let pl = g.slot_distribution(lang, SizeLabel::Large);
        let k = ps.len();
        let mut acc = 0.0;
        let mut idx = vec![0usize; 4];
        loop {
            let (mut ws, mut wl) = (1.0, 1.0);
            for &i in &idx {
                ws *= ps[i];
                wl *= pl[i];
            }
            acc += 0.5 * ws.max(wl);
            // odometer increment
            let mut pos = 0;
            loop {
                idx[pos] += 1;
                if idx[pos] < k {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
                if pos == 4 {
                    break;
                }
            }
            if pos == 4 {
                break;
            }
        }
        assert!((got - acc).abs() < 1e-10, "got {got}, oracle {acc}");
    }

    #[test]
    fn bad_configs_rejected() {
        let mut cfg = small_config();
        cfg.words_per_language = 7;
        assert!(generate(&cfg).is_err());
        let mut cfg = small_config();
        cfg.bias = 1.5;
        assert!(generate(&cfg).is_err());
        let mut cfg = small_config();
        cfg.consonants.truncate(2);
        assert!(generate(&cfg).is_err());
    }
}
