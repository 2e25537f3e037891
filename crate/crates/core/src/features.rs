//! Bag-of-segment featurization and the ablation filters used to probe
//! which phoneme classes carry the size signal.
//!
//! Segment-set membership ignores attached length marks (/iː/ counts as
//! /i/) but keeps superscript modifiers distinct (/nʲ/ is not /n/).

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{SizeLabel, WordEntry};
use crate::tokenizer::{strip_length_marks, Category, SegmentToken, TokenizerRules};

/// Ordered segment inventory mapping each segment string to a column.
#[derive(Debug, Clone)]
pub struct SegmentVocabulary {
    segments: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl SegmentVocabulary {
    /// Union of all tokens over the given entries, in code-point order.
    pub fn build<'a, I>(entries: I, rules: &TokenizerRules) -> Result<SegmentVocabulary, FeatureError>
    where
        I: IntoIterator<Item = &'a WordEntry>,
    {
        let mut set = BTreeSet::new();
        let mut any = false;
        for entry in entries {
            any = true;
            for tok in entry.tokens(rules) {
                set.insert(tok.text);
            }
        }
        if !any {
            return Err(FeatureError::EmptyLexicon);
        }
        Ok(SegmentVocabulary::from_segments(set.into_iter().collect()))
    }

    pub fn from_segments(mut segments: Vec<String>) -> SegmentVocabulary {
        segments.sort();
        segments.dedup();
        let index = segments
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        SegmentVocabulary { segments, index }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn column(&self, segment: &str) -> Option<usize> {
        self.index.get(segment).copied()
    }
}

/// Per-word counts of in-vocabulary, filter-retained segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    pub counts: Vec<u32>,
    /// Tokens not present in the vocabulary (legitimate for held-out
    /// languages with unseen phonemes).
    pub oov: u32,
}

impl FeatureVector {
    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Table 2 conditions. `ScrambledLabels` passes features through untouched
/// (it permutes evaluation labels instead); the segment-set conditions
/// restrict which tokens are counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AblationFilter {
    None,
    ScrambledLabels,
    NoVowels,
    HighFrequencyOnly(BTreeSet<String>),
    PlosivesOnly(BTreeSet<String>),
    NasalsOnly(BTreeSet<String>),
}

impl AblationFilter {
    pub fn retains(&self, token: &SegmentToken, rules: &TokenizerRules) -> bool {
        match self {
            AblationFilter::None | AblationFilter::ScrambledLabels => true,
            AblationFilter::NoVowels => token.category != Category::Vowel,
            AblationFilter::HighFrequencyOnly(set)
            | AblationFilter::PlosivesOnly(set)
            | AblationFilter::NasalsOnly(set) => {
                set.contains(&strip_length_marks(&token.text, rules))
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationFilter::None => "baseline",
            AblationFilter::ScrambledLabels => "scrambled_labels",
            AblationFilter::NoVowels => "no_vowels",
            AblationFilter::HighFrequencyOnly(_) => "high_frequency",
            AblationFilter::PlosivesOnly(_) => "plosives_only",
            AblationFilter::NasalsOnly(_) => "nasals_only",
        }
    }
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot build a vocabulary from an empty lexicon")]
    EmptyLexicon,
}

/// Count filter-retained tokens into vocabulary columns; OOV tokens are
/// dropped and tallied.
pub fn featurize(
    word: &WordEntry,
    vocab: &SegmentVocabulary,
    filter: &AblationFilter,
    rules: &TokenizerRules,
) -> FeatureVector {
    let mut counts = vec![0u32; vocab.len()];
    let mut oov = 0u32;
    for tok in word.tokens(rules) {
        if !filter.retains(&tok, rules) {
            continue;
        }
        match vocab.column(&tok.text) {
            Some(col) => counts[col] += 1,
            None => oov += 1,
        }
    }
    FeatureVector { counts, oov }
}

/// Built-in segment sets for the ablation conditions.
#[derive(Debug, Clone)]
pub struct SegmentSets {
    pub vowels: BTreeSet<String>,
    pub plosives: BTreeSet<String>,
    pub nasals: BTreeSet<String>,
    pub high_frequency: BTreeSet<String>,
}

/// The standard IPA plosive and nasal rows, the vowel inventory from the
/// tokenizer's rule table, and a 23-item set of typologically common
/// segments. All are loadable from files as well (one segment per line).
pub fn default_segment_sets(rules: &TokenizerRules) -> SegmentSets {
    let vowels = ["i", "y", "ɨ", "ʉ", "ɯ", "u", "ɪ", "ʏ", "ʊ", "e", "ø", "ɘ",
        "ɵ", "ɤ", "o", "ə", "ɛ", "œ", "ɜ", "ɞ", "ʌ", "ɔ", "æ", "ɐ", "a", "ɶ",
        "ɑ", "ɒ", "ɚ", "ɝ"];
    let plosives = ["p", "b", "t", "d", "ʈ", "ɖ", "c", "ɟ", "k", "g", "ɡ", "q", "ɢ", "ʔ"];
    let nasals = ["m", "ɱ", "n", "ɳ", "ɲ", "ŋ", "ɴ"];
    let high_frequency = ["m", "k", "i", "a", "p", "u", "t", "s", "n", "l", "j",
        "w", "h", "b", "d", "g", "ŋ", "f", "e", "o", "r", "ʔ", "t\u{0361}ʃ"];
    let _ = rules; // sets are plain strings; rules only matter at match time
    SegmentSets {
        vowels: vowels.iter().map(|s| s.to_string()).collect(),
        plosives: plosives.iter().map(|s| s.to_string()).collect(),
        nasals: nasals.iter().map(|s| s.to_string()).collect(),
        high_frequency: high_frequency.iter().map(|s| s.to_string()).collect(),
    }
}

/// Parse a segment-set file: one segment per line, `#` comments.
pub fn parse_segment_set(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| match l.find('#') {
            Some(i) => l[..i].trim(),
            None => l.trim(),
        })
        .filter(|l| !l.is_empty())
        .map(|l| l.to_string())
        .collect()
}

/// Permute size labels among `entries` with a seeded shuffle, preserving
/// the label multiset. Applied to the evaluation split of each fold.
pub fn scramble_labels(entries: &[WordEntry], seed: u64) -> Vec<WordEntry> {
    let mut labels: Vec<SizeLabel> = entries.iter().map(|e| e.size_label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels.shuffle(&mut rng);
    entries
        .iter()
        .zip(labels)
        .map(|(e, size_label)| WordEntry {
            size_label,
            ..e.clone()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::TokenizerRules;

    fn word(ipa: &str, label: SizeLabel) -> WordEntry {
        WordEntry {
            lemma: ipa.to_string(),
            language: "toy".into(),
            family: "famA".into(),
            ipa: ipa.to_string(),
            size_label: label,
        }
    }

    #[test]
    fn vocabulary_is_sorted_union() {
        let rules = TokenizerRules::default();
        let entries = vec![word("ma", SizeLabel::Large), word("am", SizeLabel::Small)];
        let vocab = SegmentVocabulary::build(&entries, &rules).unwrap();
        assert_eq!(vocab.segments(), &["a".to_string(), "m".to_string()]);
    }

    #[test]
    fn vocabulary_monotone_under_new_word() {
        let rules = TokenizerRules::default();
        let base = vec![word("ma", SizeLabel::Large)];
        let more = vec![word("ma", SizeLabel::Large), word("ki", SizeLabel::Small)];
        let v0 = SegmentVocabulary::build(&base, &rules).unwrap();
        let v1 = SegmentVocabulary::build(&more, &rules).unwrap();
        for s in v0.segments() {
            assert!(v1.column(s).is_some());
        }
        assert_eq!(v1.len(), v0.len() + 2);
    }

    #[test]
    fn empty_lexicon_is_error() {
        let rules = TokenizerRules::default();
        assert!(matches!(
            SegmentVocabulary::build(std::iter::empty(), &rules),
            Err(FeatureError::EmptyLexicon)
        ));
    }

    #[test]
    fn featurize_counts() {
        let rules = TokenizerRules::default();
        let vocab = SegmentVocabulary::from_segments(vec!["a".into(), "m".into()]);
        let fv = featurize(&word("mama", SizeLabel::Large), &vocab, &AblationFilter::None, &rules);
        assert_eq!(fv.counts, vec![2, 2]);
        assert_eq!(fv.oov, 0);
    }

    #[test]
    fn no_vowels_filter_zeroes_vowels() {
        let rules = TokenizerRules::default();
        let vocab = SegmentVocabulary::from_segments(vec!["a".into(), "m".into()]);
        let fv = featurize(
            &word("mama", SizeLabel::Large),
            &vocab,
            &AblationFilter::NoVowels,
            &rules,
        );
        assert_eq!(fv.counts, vec![0, 2]);
    }

    #[test]
    fn affricate_is_not_a_plosive() {
        let rules = TokenizerRules::default();
        let sets = default_segment_sets(&rules);
        let vocab =
            SegmentVocabulary::from_segments(vec!["i".into(), "iː".into(), "p".into(), "t\u{0361}ʃ".into()]);
        let fv = featurize(
            &word("t\u{0361}ʃiːp", SizeLabel::Small),
            &vocab,
            &AblationFilter::PlosivesOnly(sets.plosives.clone()),
            &rules,
        );
        // only the final /p/ survives
        assert_eq!(fv.counts, vec![0, 0, 1, 0]);
    }

    #[test]
    fn length_marks_ignored_for_membership() {
        let rules = TokenizerRules::default();
        let sets = default_segment_sets(&rules);
        let vocab = SegmentVocabulary::from_segments(vec!["iː".into()]);
        let fv = featurize(
            &word("iː", SizeLabel::Small),
            &vocab,
            &AblationFilter::HighFrequencyOnly(sets.high_frequency.clone()),
            &rules,
        );
        assert_eq!(fv.counts, vec![1]);
    }

    #[test]
    fn default_sets_contents() {
        let rules = TokenizerRules::default();
        let sets = default_segment_sets(&rules);
        for n in ["m", "n", "ŋ", "ɲ"] {
            assert!(sets.nasals.contains(n), "missing nasal {n}");
        }
        for p in ["p", "b", "t", "d", "k", "g", "q", "ʔ"] {
            assert!(sets.plosives.contains(p), "missing plosive {p}");
        }
        assert_eq!(sets.high_frequency.len(), 23);
    }

    #[test]
    fn oov_tokens_dropped_and_counted() {
        let rules = TokenizerRules::default();
        let vocab = SegmentVocabulary::from_segments(vec!["a".into()]);
        let fv = featurize(&word("za", SizeLabel::Large), &vocab, &AblationFilter::None, &rules);
        assert_eq!(fv.counts, vec![1]);
        assert_eq!(fv.oov, 1);
    }

    #[test]
    fn scramble_preserves_histogram_and_is_seeded() {
        let entries: Vec<WordEntry> = ["ma", "mo", "mi", "me"]
            .iter()
            .enumerate()
            .map(|(i, ipa)| {
                word(
                    ipa,
                    if i < 2 { SizeLabel::Small } else { SizeLabel::Large },
                )
            })
            .collect();
        let a = scramble_labels(&entries, 7);
        let b = scramble_labels(&entries, 7);
        let c = scramble_labels(&entries, 8);
        let hist = |es: &[WordEntry]| {
            es.iter()
                .filter(|e| e.size_label == SizeLabel::Small)
                .count()
        };
        assert_eq!(hist(&a), 2);
        assert_eq!(hist(&c), 2);
        let labs = |es: &[WordEntry]| es.iter().map(|e| e.size_label).collect::<Vec<_>>();
        assert_eq!(labs(&a), labs(&b));
    }

    #[test]
    fn single_class_scramble_is_identity() {
        let entries = vec![word("ma", SizeLabel::Small), word("mo", SizeLabel::Small)];
        let out = scramble_labels(&entries, 3);
        assert!(out.iter().all(|e| e.size_label == SizeLabel::Small));
    }

    #[test]
    fn featurization_is_linear_in_concatenation() {
        let rules = TokenizerRules::default();
        let vocab = SegmentVocabulary::from_segments(vec!["a".into(), "k".into(), "m".into()]);
        let u = word("mak", SizeLabel::Small);
        let v = word("kam", SizeLabel::Large);
        let uv = word("makkam", SizeLabel::Small);
        let f = |w: &WordEntry| featurize(w, &vocab, &AblationFilter::None, &rules).counts;
        let sum: Vec<u32> = f(&u).iter().zip(f(&v)).map(|(a, b)| a + b).collect();
        assert_eq!(f(&uv), sum);
    }
}
