//! Language similarity from core-vocabulary lists: segment-level
//! Levenshtein distance, LDN/LDND aggregation, and per-target tertile
//! binning of the remaining languages.
//!
//! Edit distance runs over phoneme tokens, not raw characters, so a
//! diacritic never splits a segment.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::tokenizer::{tokenize, TokenizeError, TokenizerRules};

/// Core-vocabulary list: concept id -> IPA form (nominally 40 concepts).
#[derive(Debug, Clone)]
pub struct SwadeshList {
    pub language: String,
    pub entries: BTreeMap<String, String>,
}

/// How per-concept distances are normalized before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthNorm {
    /// Divide by the longer form's token count (the default).
    MaxLen,
    /// Divide by the mean of the two token counts.
    MeanLen,
}

/// Symmetric pairwise distances over an ordered language list.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub languages: Vec<String>,
    values: Vec<f64>, // row-major, languages.len()^2
}

/// Non-target languages split into thirds by ascending distance from the
/// target; nearest third first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TertileBinning {
    pub target: String,
    pub most_similar: Vec<String>,
    pub somewhat_similar: Vec<String>,
    pub least_similar: Vec<String>,
}

/// Bin identity used by classifiers and the adversary head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bin {
    MostSimilar,
    SomewhatSimilar,
    LeastSimilar,
}

impl Bin {
    pub const ALL: [Bin; 3] = [Bin::MostSimilar, Bin::SomewhatSimilar, Bin::LeastSimilar];

    pub fn index(&self) -> usize {
        match self {
            Bin::MostSimilar => 0,
            Bin::SomewhatSimilar => 1,
            Bin::LeastSimilar => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Bin::MostSimilar => "most_similar",
            Bin::SomewhatSimilar => "somewhat_similar",
            Bin::LeastSimilar => "least_similar",
        }
    }
}

impl TertileBinning {
    pub fn languages_in(&self, bin: Bin) -> &[String] {
        match bin {
            Bin::MostSimilar => &self.most_similar,
            Bin::SomewhatSimilar => &self.somewhat_similar,
            Bin::LeastSimilar => &self.least_similar,
        }
    }

    /// Bin of a given training language, if it belongs to this fold.
    pub fn bin_of(&self, language: &str) -> Option<Bin> {
        for bin in Bin::ALL {
            if self.languages_in(bin).iter().any(|l| l == language) {
                return Some(bin);
            }
        }
        None
    }
}

#[derive(Debug, Error)]
pub enum TypologyError {
    #[error("languages {a} and {b} share no concept ids")]
    NoSharedConcepts { a: String, b: String },
    #[error("LDND denominator is zero between {a} and {b} (degenerate lists)")]
    ZeroDenominator { a: String, b: String },
    #[error("language {0} not present in the distance matrix")]
    UnknownLanguage(String),
    #[error("tertile binning needs at least 3 non-target languages, found {0}")]
    TooFewLanguages(usize),
    #[error("swadesh entry for {language}/{concept} does not tokenize: {source}")]
    BadForm {
        language: String,
        concept: String,
        #[source]
        source: TokenizeError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
}

/// Minimal insert/delete/substitute count between two token sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn token_texts(
    list: &SwadeshList,
    concept: &str,
    rules: &TokenizerRules,
) -> Result<Vec<String>, TypologyError> {
    let form = &list.entries[concept];
    let toks = tokenize(form, rules).map_err(|source| TypologyError::BadForm {
        language: list.language.clone(),
        concept: concept.to_string(),
        source,
    })?;
    Ok(toks.into_iter().map(|t| t.text).collect())
}

fn normalized_ld(a: &[String], b: &[String], norm: LengthNorm) -> f64 {
    let denom = match norm {
        LengthNorm::MaxLen => a.len().max(b.len()) as f64,
        LengthNorm::MeanLen => (a.len() + b.len()) as f64 / 2.0,
    };
    if denom == 0.0 {
        return 0.0; // two empty forms count as identical
    }
    levenshtein(a, b) as f64 / denom
}

/// Mean normalized edit distance over shared concepts; in [0, 1] under
/// max-length normalization.
pub fn ldn(
    a: &SwadeshList,
    b: &SwadeshList,
    rules: &TokenizerRules,
    norm: LengthNorm,
) -> Result<f64, TypologyError> {
    let shared: Vec<&String> = a.entries.keys().filter(|k| b.entries.contains_key(*k)).collect();
    if shared.is_empty() {
        return Err(TypologyError::NoSharedConcepts {
            a: a.language.clone(),
            b: b.language.clone(),
        });
    }
    let mut sum = 0.0;
    for concept in &shared {
        let ta = token_texts(a, concept, rules)?;
        let tb = token_texts(b, concept, rules)?;
        sum += normalized_ld(&ta, &tb, norm);
    }
    Ok(sum / shared.len() as f64)
}

/// LDN divided by the mean normalized distance of cross-concept word pairs,
/// correcting for chance similarity between unrelated inventories.
pub fn ldnd(
    a: &SwadeshList,
    b: &SwadeshList,
    rules: &TokenizerRules,
    norm: LengthNorm,
) -> Result<f64, TypologyError> {
    let numerator = ldn(a, b, rules, norm)?;
    let ta: BTreeMap<&String, Vec<String>> = a
        .entries
        .keys()
        .map(|c| token_texts(a, c, rules).map(|t| (c, t)))
        .collect::<Result<_, _>>()?;
    let tb: BTreeMap<&String, Vec<String>> = b
        .entries
        .keys()
        .map(|c| token_texts(b, c, rules).map(|t| (c, t)))
        .collect::<Result<_, _>>()?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (ca, fa) in &ta {
        for (cb, fb) in &tb {
            if ca != cb {
                sum += normalized_ld(fa, fb, norm);
                n += 1;
            }
        }
    }
    if n == 0 || sum == 0.0 {
        return Err(TypologyError::ZeroDenominator {
            a: a.language.clone(),
            b: b.language.clone(),
        });
    }
    Ok(numerator / (sum / n as f64))
}

/// Which aggregate distance fills the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMeasure {
    Ldn,
    Ldnd,
}

impl DistanceMatrix {
    pub fn new(languages: Vec<String>) -> DistanceMatrix {
        let n = languages.len();
        DistanceMatrix {
            languages,
            values: vec![0.0; n * n],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.languages.len() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.languages.len();
        self.values[i * n + j] = v;
        self.values[j * n + i] = v;
    }

    pub fn index_of(&self, language: &str) -> Option<usize> {
        self.languages.iter().position(|l| l == language)
    }

    pub fn distance(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.get(self.index_of(a)?, self.index_of(b)?))
    }

    /// Pairwise distances over the given lists; language order is sorted.
    pub fn compute(
        lists: &[SwadeshList],
        measure: DistanceMeasure,
        rules: &TokenizerRules,
        norm: LengthNorm,
    ) -> Result<DistanceMatrix, TypologyError> {
        let mut ordered: Vec<&SwadeshList> = lists.iter().collect();
        ordered.sort_by(|a, b| a.language.cmp(&b.language));
        let mut m = DistanceMatrix::new(ordered.iter().map(|l| l.language.clone()).collect());
        for i in 0..ordered.len() {
            for j in (i + 1)..ordered.len() {
                let d = match measure {
                    DistanceMeasure::Ldn => ldn(ordered[i], ordered[j], rules, norm)?,
                    DistanceMeasure::Ldnd => ldnd(ordered[i], ordered[j], rules, norm)?,
                };
                m.set(i, j, d);
            }
        }
        Ok(m)
    }

    /// TSV with a header row and a leading language column.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for lang in &self.languages {
            out.push('\t');
            out.push_str(lang);
        }
        out.push('\n');
        for (i, lang) in self.languages.iter().enumerate() {
            out.push_str(lang);
            for j in 0..self.languages.len() {
                out.push_str(&format!("\t{:.6}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_tsv(text: &str, path: &str) -> Result<DistanceMatrix, TypologyError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| TypologyError::Parse {
            path: path.to_string(),
            line: 1,
            msg: "empty matrix file".into(),
        })?;
        let languages: Vec<String> = header
            .split('\t')
            .skip(1)
            .map(|s| s.trim().to_string())
            .collect();
        if languages.is_empty() {
            return Err(TypologyError::Parse {
                path: path.to_string(),
                line: 1,
                msg: "header names no languages".into(),
            });
        }
        let mut m = DistanceMatrix::new(languages.clone());
        let mut seen = 0usize;
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let mut cols = line.split('\t');
            let lang = cols.next().unwrap_or("").trim();
            let i = m.index_of(lang).ok_or_else(|| TypologyError::Parse {
                path: path.to_string(),
                line: lineno,
                msg: format!("row language '{lang}' not in header"),
            })?;
            for (j, cell) in cols.enumerate() {
                if j >= languages.len() {
                    return Err(TypologyError::Parse {
                        path: path.to_string(),
                        line: lineno,
                        msg: "too many columns".into(),
                    });
                }
                let v: f64 = cell.trim().parse().map_err(|_| TypologyError::Parse {
                    path: path.to_string(),
                    line: lineno,
                    msg: format!("bad distance value '{}'", cell.trim()),
                })?;
                m.values[i * languages.len() + j] = v;
            }
            seen += 1;
        }
        if seen != languages.len() {
            return Err(TypologyError::Parse {
                path: path.to_string(),
                line: 0,
                msg: format!("expected {} rows, found {seen}", languages.len()),
            });
        }
        Ok(m)
    }
}

/// Rank non-target languages by ascending distance from the target (ties
/// broken lexicographically by language id) and split into three contiguous
/// groups, remainder going to the earlier bins.
pub fn bin_tertiles(target: &str, matrix: &DistanceMatrix) -> Result<TertileBinning, TypologyError> {
    let ti = matrix
        .index_of(target)
        .ok_or_else(|| TypologyError::UnknownLanguage(target.to_string()))?;
    let mut others: Vec<(f64, &String)> = matrix
        .languages
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != ti)
        .map(|(i, lang)| (matrix.get(ti, i), lang))
        .collect();
    if others.len() < 3 {
        return Err(TypologyError::TooFewLanguages(others.len()));
    }
    others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(b.1)));
    let n = others.len();
    let base = n / 3;
    let rem = n % 3;
    let sizes = [
        base + usize::from(rem > 0),
        base + usize::from(rem > 1),
        base,
    ];
    let mut iter = others.into_iter().map(|(_, lang)| lang.clone());
    let most_similar: Vec<String> = iter.by_ref().take(sizes[0]).collect();
    let somewhat_similar: Vec<String> = iter.by_ref().take(sizes[1]).collect();
    let least_similar: Vec<String> = iter.collect();
    Ok(TertileBinning {
        target: target.to_string(),
        most_similar,
        somewhat_similar,
        least_similar,
    })
}

const SWADESH_HEADER: &str = "language\tconcept\tipa";

/// Load Swadesh lists from TSV `language<TAB>concept<TAB>ipa` with header.
pub fn load_swadesh(path: &Path, rules: &TokenizerRules) -> Result<Vec<SwadeshList>, TypologyError> {
    let text = fs::read_to_string(path).map_err(|source| TypologyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_swadesh(&text, &path.display().to_string(), rules)
}

pub fn parse_swadesh(
    text: &str,
    path: &str,
    rules: &TokenizerRules,
) -> Result<Vec<SwadeshList>, TypologyError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| TypologyError::Parse {
        path: path.to_string(),
        line: 1,
        msg: "empty swadesh file".into(),
    })?;
    if header.trim_end() != SWADESH_HEADER {
        return Err(TypologyError::Parse {
            path: path.to_string(),
            line: 1,
            msg: format!("expected header '{}'", SWADESH_HEADER.replace('\t', " ")),
        });
    }
    let mut by_lang: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(TypologyError::Parse {
                path: path.to_string(),
                line: lineno,
                msg: format!("expected 3 columns, found {}", cols.len()),
            });
        }
        let (lang, concept, ipa) = (cols[0].trim(), cols[1].trim(), cols[2].trim());
        if let Err(source) = tokenize(ipa, rules) {
            return Err(TypologyError::BadForm {
                language: lang.to_string(),
                concept: concept.to_string(),
                source,
            });
        }
        let entry = by_lang.entry(lang.to_string()).or_default();
        if entry.insert(concept.to_string(), ipa.to_string()).is_some() {
            return Err(TypologyError::Parse {
                path: path.to_string(),
                line: lineno,
                msg: format!("duplicate concept '{concept}' for language '{lang}'"),
            });
        }
    }
    Ok(by_lang
        .into_iter()
        .map(|(language, entries)| SwadeshList { language, entries })
        .collect())
}

pub fn write_swadesh(lists: &[SwadeshList], path: &Path) -> Result<(), TypologyError> {
    let mut out = String::from(SWADESH_HEADER);
    out.push('\n');
    for list in lists {
        for (concept, ipa) in &list.entries {
            out.push_str(&format!("{}\t{}\t{}\n", list.language, concept, ipa));
        }
    }
    fs::write(path, out).map_err(|source| TypologyError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(lang: &str, forms: &[(&str, &str)]) -> SwadeshList {
        SwadeshList {
            language: lang.to_string(),
            entries: forms
                .iter()
                .map(|(c, f)| (c.to_string(), f.to_string()))
                .collect(),
        }
    }

    #[test]
    fn levenshtein_basics() {
        let a = ["a", "b", "c"];
        assert_eq!(levenshtein(&a, &a), 0);
        assert_eq!(levenshtein(&a, &["a", "b", "d"]), 1);
        assert_eq!(levenshtein(&["k", "i", "t"], &["t", "i", "k", "i"]), 3);
        assert_eq!(levenshtein::<&str>(&[], &a), 3);
    }

    #[test]
    fn ldn_identical_is_zero() {
        let rules = TokenizerRules::default();
        let a = list("a", &[("c1", "kit"), ("c2", "ma")]);
        assert_eq!(ldn(&a, &a, &rules, LengthNorm::MaxLen).unwrap(), 0.0);
    }

    #[test]
    fn ldn_single_concept() {
        let rules = TokenizerRules::default();
        let a = list("a", &[("c1", "abk")]);
        let b = list("b", &[("c1", "abd")]);
        let d = ldn(&a, &b, &rules, LengthNorm::MaxLen).unwrap();
        assert!((d - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ldn_no_shared_concepts_errors() {
        let rules = TokenizerRules::default();
        let a = list("a", &[("c1", "ma")]);
        let b = list("b", &[("c2", "ki")]);
        assert!(matches!(
            ldn(&a, &b, &rules, LengthNorm::MaxLen),
            Err(TypologyError::NoSharedConcepts { .. })
        ));
    }

    #[test]
    fn ldnd_zero_numerator() {
        let rules = TokenizerRules::default();
        let a = list("a", &[("c1", "ma"), ("c2", "kit")]);
        let b = list("b", &[("c1", "ma"), ("c2", "kit")]);
        let d = ldnd(&a, &b, &rules, LengthNorm::MaxLen).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn ldnd_degenerate_denominator_errors() {
        let rules = TokenizerRules::default();
        let a = list("a", &[("c1", "ma"), ("c2", "ma")]);
        let b = list("b", &[("c1", "ma"), ("c2", "ma")]);
        assert!(matches!(
            ldnd(&a, &b, &rules, LengthNorm::MaxLen),
            Err(TypologyError::ZeroDenominator { .. })
        ));
    }

    #[test]
    fn tertiles_basic_and_remainder() {
        let langs: Vec<String> = (0..27).map(|i| format!("L{i:02}")).collect();
        let mut m = DistanceMatrix::new(langs.clone());
        for i in 0..27 {
            for j in (i + 1)..27 {
                m.set(i, j, (i + j) as f64 * 0.01);
            }
        }
        let bins = bin_tertiles("L00", &m).unwrap();
        assert_eq!(bins.most_similar.len(), 9);
        assert_eq!(bins.somewhat_similar.len(), 9);
        assert_eq!(bins.least_similar.len(), 8);
        let mut all: Vec<&String> = bins
            .most_similar
            .iter()
            .chain(&bins.somewhat_similar)
            .chain(&bins.least_similar)
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 26);
    }

    #[test]
    fn tertiles_three_languages_one_each() {
        let langs = vec!["t".to_string(), "a".to_string(), "b".to_string(), "c".to_string()];
        let mut m = DistanceMatrix::new(langs);
        let t = m.index_of("t").unwrap();
        m.set(t, m.index_of("a").unwrap(), 0.1);
        m.set(t, m.index_of("b").unwrap(), 0.5);
        m.set(t, m.index_of("c").unwrap(), 0.9);
        let bins = bin_tertiles("t", &m).unwrap();
        assert_eq!(bins.most_similar, vec!["a"]);
        assert_eq!(bins.somewhat_similar, vec!["b"]);
        assert_eq!(bins.least_similar, vec!["c"]);
    }

    #[test]
    fn tertiles_all_equal_uses_lexicographic_tiebreak() {
        let langs: Vec<String> = ["t", "d", "b", "c", "a"].iter().map(|s| s.to_string()).collect();
        let mut m = DistanceMatrix::new(langs);
        let t = m.index_of("t").unwrap();
        for l in ["a", "b", "c", "d"] {
            m.set(t, m.index_of(l).unwrap(), 0.5);
        }
        let bins = bin_tertiles("t", &m).unwrap();
        assert_eq!(bins.most_similar, vec!["a", "b"]);
        assert_eq!(bins.somewhat_similar, vec!["c"]);
        assert_eq!(bins.least_similar, vec!["d"]);
    }

    #[test]
    fn matrix_tsv_round_trip() {
        let mut m = DistanceMatrix::new(vec!["a".into(), "b".into()]);
        m.set(0, 1, 0.25);
        let text = m.to_tsv();
        let back = DistanceMatrix::parse_tsv(&text, "mem").unwrap();
        assert_eq!(back.languages, m.languages);
        assert!((back.get(0, 1) - 0.25).abs() < 1e-9);
        assert_eq!(back.get(0, 0), 0.0);
    }

    proptest! {
        #[test]
        fn levenshtein_is_a_metric(
            a in proptest::collection::vec(0u8..4, 0..8),
            b in proptest::collection::vec(0u8..4, 0..8),
            c in proptest::collection::vec(0u8..4, 0..8),
        ) {
            let dab = levenshtein(&a, &b);
            let dba = levenshtein(&b, &a);
            let dac = levenshtein(&a, &c);
            let dcb = levenshtein(&c, &b);
            prop_assert_eq!(dab, dba);
            prop_assert_eq!(levenshtein(&a, &a), 0);
            prop_assert!((dab == 0) == (a == b));
            prop_assert!(dab <= dac + dcb);
        }

        #[test]
        fn ldn_is_symmetric_and_bounded(
            wa in proptest::collection::vec("[aiumk]{1,6}", 1..5),
            wb in proptest::collection::vec("[aiumk]{1,6}", 1..5),
        ) {
            let rules = TokenizerRules::default();
            let mk = |lang: &str, ws: &[String]| SwadeshList {
                language: lang.to_string(),
                entries: ws.iter().enumerate().map(|(i, w)| (format!("c{i}"), w.clone())).collect(),
            };
            let n = wa.len().min(wb.len());
            let a = mk("a", &wa[..n].to_vec());
            let b = mk("b", &wb[..n].to_vec());
            let dab = ldn(&a, &b, &rules, LengthNorm::MaxLen).unwrap();
            let dba = ldn(&b, &a, &rules, LengthNorm::MaxLen).unwrap();
            prop_assert!((dab - dba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&dab));
        }
    }
}
