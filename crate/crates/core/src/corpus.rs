//! Data model, ingestion, validation, and persistence: lexicons of labeled
//! size adjectives, pretraining word corpora, and model checkpoints.
//!
//! Lexicon files are UTF-8 TSV with a header row
//! `language<TAB>family<TAB>lemma<TAB>ipa<TAB>size`; size is `small` or
//! `large`. Pretraining corpora are one word per line, `lang<TAB>ipa` or a
//! bare IPA string. Checkpoints are a text manifest followed by raw
//! little-endian IEEE-754 doubles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tokenizer::{tokenize, SegmentToken, TokenizerRules};

/// Binary size label of an adjective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SizeLabel {
    Small,
    Large,
}

impl SizeLabel {
    pub fn parse(s: &str) -> Option<SizeLabel> {
        match s {
            "small" => Some(SizeLabel::Small),
            "large" => Some(SizeLabel::Large),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SizeLabel::Small => "small",
            SizeLabel::Large => "large",
        }
    }

    /// 0 for small, 1 for large; the class index used by every classifier.
    pub fn index(&self) -> usize {
        match self {
            SizeLabel::Small => 0,
            SizeLabel::Large => 1,
        }
    }
}

impl fmt::Display for SizeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One adjective: orthographic lemma, language, family, IPA form, label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordEntry {
    pub lemma: String,
    pub language: String,
    pub family: String,
    pub ipa: String,
    pub size_label: SizeLabel,
}

impl WordEntry {
    pub fn tokens(&self, rules: &TokenizerRules) -> Vec<SegmentToken> {
        // Entries are validated at load time, so this cannot fail here.
        tokenize(&self.ipa, rules).expect("lexicon entry failed to tokenize")
    }
}

/// Per-language label counts plus any balance warnings found at load time.
#[derive(Debug, Clone, Default)]
pub struct LexiconReport {
    pub per_language: BTreeMap<String, (usize, usize)>, // (small, large)
    pub warnings: Vec<String>,
}

/// A loaded adjective collection with language and family indexes.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub entries: Vec<WordEntry>,
    pub languages: BTreeSet<String>,
    pub families: BTreeMap<String, String>,
    pub report: LexiconReport,
}

impl Lexicon {
    /// Build from entries, recomputing indexes and the validation report.
    pub fn from_entries(entries: Vec<WordEntry>) -> Lexicon {
        let mut languages = BTreeSet::new();
        let mut families = BTreeMap::new();
        let mut per_language: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for e in &entries {
            languages.insert(e.language.clone());
            families.insert(e.language.clone(), e.family.clone());
            let c = per_language.entry(e.language.clone()).or_default();
            match e.size_label {
                SizeLabel::Small => c.0 += 1,
                SizeLabel::Large => c.1 += 1,
            }
        }
        let mut warnings = Vec::new();
        for (lang, &(s, l)) in &per_language {
            if s != 15 || l != 15 {
                warnings.push(format!(
                    "language {lang}: {s} small / {l} large entries (expected 15/15)"
                ));
            }
        }
        Lexicon {
            entries,
            languages,
            families,
            report: LexiconReport {
                per_language,
                warnings,
            },
        }
    }

    pub fn entries_for(&self, language: &str) -> Vec<&WordEntry> {
        self.entries
            .iter()
            .filter(|e| e.language == language)
            .collect()
    }

    /// Training precondition: at least two entries of each label per language.
    pub fn check_trainable(&self, languages: &[String]) -> Result<(), CorpusError> {
        for lang in languages {
            let (s, l) = self
                .report
                .per_language
                .get(lang)
                .copied()
                .ok_or_else(|| CorpusError::UnknownLanguage(lang.clone()))?;
            if s < 2 || l < 2 {
                return Err(CorpusError::NotTrainable {
                    language: lang.clone(),
                    small: s,
                    large: l,
                });
            }
        }
        Ok(())
    }
}

/// Unlabeled (language, ipa) items for encoder pretraining.
#[derive(Debug, Clone)]
pub struct PretrainCorpus {
    pub items: Vec<(String, String)>,
    pub per_language: BTreeMap<String, usize>,
    /// Lines dropped because they did not tokenize.
    pub skipped: usize,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{row}: {msg}")]
    Row {
        path: String,
        row: usize,
        msg: String,
    },
    #[error("{path}: missing or wrong header: expected '{expected}', got '{got}'")]
    Header {
        path: String,
        expected: String,
        got: String,
    },
    #[error("{0}: file is empty")]
    Empty(String),
    #[error("unknown language '{0}'")]
    UnknownLanguage(String),
    #[error("language {language} is not trainable: {small} small / {large} large entries (need >=2 each)")]
    NotTrainable {
        language: String,
        small: usize,
        large: usize,
    },
}

const LEXICON_HEADER: &str = "language\tfamily\tlemma\tipa\tsize";

/// Load a lexicon TSV. Every row must parse; the first bad row aborts the
/// load with its row number.
pub fn load_lexicon(path: &Path, rules: &TokenizerRules) -> Result<Lexicon, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_lexicon(&text, &path.display().to_string(), rules)
}

pub fn parse_lexicon(
    text: &str,
    path: &str,
    rules: &TokenizerRules,
) -> Result<Lexicon, CorpusError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| CorpusError::Empty(path.to_string()))?;
    if header.trim_end() != LEXICON_HEADER {
        return Err(CorpusError::Header {
            path: path.to_string(),
            expected: LEXICON_HEADER.replace('\t', " "),
            got: header.replace('\t', " "),
        });
    }
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1; // 1-based, header is row 1
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(CorpusError::Row {
                path: path.to_string(),
                row,
                msg: format!("expected 5 tab-separated columns, found {}", cols.len()),
            });
        }
        let size_label = SizeLabel::parse(cols[4].trim()).ok_or_else(|| CorpusError::Row {
            path: path.to_string(),
            row,
            msg: format!("unknown size label '{}' (expected small|large)", cols[4].trim()),
        })?;
        let ipa = cols[3].trim();
        if let Err(e) = tokenize(ipa, rules) {
            return Err(CorpusError::Row {
                path: path.to_string(),
                row,
                msg: format!("ipa '{ipa}' does not tokenize: {e}"),
            });
        }
        for (i, name) in [(0, "language"), (1, "family"), (2, "lemma")] {
            if cols[i].trim().is_empty() {
                return Err(CorpusError::Row {
                    path: path.to_string(),
                    row,
                    msg: format!("empty {name} column"),
                });
            }
        }
        entries.push(WordEntry {
            language: cols[0].trim().to_string(),
            family: cols[1].trim().to_string(),
            lemma: cols[2].trim().to_string(),
            ipa: ipa.to_string(),
            size_label,
        });
    }
    Ok(Lexicon::from_entries(entries))
}

/// Serialize a lexicon back to the TSV format `load_lexicon` reads.
pub fn write_lexicon(lexicon: &Lexicon, path: &Path) -> Result<(), CorpusError> {
    let mut out = String::from(LEXICON_HEADER);
    out.push('\n');
    for e in &lexicon.entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.language, e.family, e.lemma, e.ipa, e.size_label
        ));
    }
    fs::write(path, out).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load a pretraining corpus: `lang<TAB>ipa` or bare `ipa` per line. Lines
/// that fail to tokenize are skipped and counted, not fatal.
pub fn load_pretrain_corpus(
    path: &Path,
    rules: &TokenizerRules,
) -> Result<PretrainCorpus, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pretrain_corpus(&text, &path.display().to_string(), rules)
}

pub fn parse_pretrain_corpus(
    text: &str,
    path: &str,
    rules: &TokenizerRules,
) -> Result<PretrainCorpus, CorpusError> {
    let mut items = Vec::new();
    let mut per_language: BTreeMap<String, usize> = BTreeMap::new();
    let mut skipped = 0usize;
    for line in text.lines() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let (lang, ipa) = match line.split_once('\t') {
            Some((l, w)) => (l.to_string(), w.to_string()),
            None => (String::new(), line.to_string()),
        };
        if tokenize(&ipa, rules).is_err() {
            skipped += 1;
            continue;
        }
        *per_language.entry(lang.clone()).or_default() += 1;
        items.push((lang, ipa));
    }
    if items.is_empty() {
        return Err(CorpusError::Empty(path.to_string()));
    }
    Ok(PretrainCorpus {
        items,
        per_language,
        skipped,
    })
}

pub fn write_pretrain_corpus(corpus: &PretrainCorpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = String::new();
    for (lang, ipa) in &corpus.items {
        if lang.is_empty() {
            out.push_str(ipa);
        } else {
            out.push_str(&format!("{lang}\t{ipa}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Model parameters as named flat arrays plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub seed: u64,
    pub epoch: u64,
    pub params: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint file (bad magic line)")]
    BadMagic { path: String },
    #[error("{path}: unsupported checkpoint version '{version}'")]
    Version { path: String, version: String },
    #[error("{path}: malformed manifest: {msg}")]
    Manifest { path: String, msg: String },
    #[error("{path}: truncated data section: expected {expected} bytes, found {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("config mismatch: checkpoint was written with '{found}', expected '{expected}'")]
    ConfigMismatch { expected: String, found: String },
}

const CKPT_MAGIC: &str = "PHONOSYM-CKPT";
const CKPT_VERSION: &str = "1";

impl Checkpoint {
    /// Write atomically: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut manifest = format!("{CKPT_MAGIC} v{CKPT_VERSION}\n");
        manifest.push_str(&format!("config {}\n", escape_line(&self.config)));
        manifest.push_str(&format!("seed {}\n", self.seed));
        manifest.push_str(&format!("epoch {}\n", self.epoch));
        manifest.push_str(&format!("params {}\n", self.params.len()));
        for (name, values) in &self.params {
            manifest.push_str(&format!("{} {}\n", escape_line(name), values.len()));
        }
        manifest.push_str("DATA\n");

        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(io_err)?;
            f.write_all(manifest.as_bytes()).map_err(io_err)?;
            for (_, values) in &self.params {
                let mut bytes = Vec::with_capacity(values.len() * 8);
                for v in values {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                f.write_all(&bytes).map_err(io_err)?;
            }
            f.sync_all().map_err(io_err)?;
        }
        fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        let io_err = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let p = path.display().to_string();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .map_err(io_err)?
            .read_to_end(&mut bytes)
            .map_err(io_err)?;

        // Manifest is the text before the DATA marker line.
        let marker = b"\nDATA\n";
        let data_at = find_subslice(&bytes, marker).ok_or_else(|| CheckpointError::Manifest {
            path: p.clone(),
            msg: "missing DATA marker".into(),
        })?;
        let manifest = std::str::from_utf8(&bytes[..data_at]).map_err(|_| {
            CheckpointError::Manifest {
                path: p.clone(),
                msg: "manifest is not UTF-8".into(),
            }
        })?;
        let data = &bytes[data_at + marker.len()..];

        let mut lines = manifest.lines();
        let magic = lines.next().unwrap_or("");
        let (m, v) = magic.split_once(" v").unwrap_or((magic, ""));
        if m != CKPT_MAGIC {
            return Err(CheckpointError::BadMagic { path: p });
        }
        if v != CKPT_VERSION {
            return Err(CheckpointError::Version {
                path: p,
                version: v.to_string(),
            });
        }
        let mut field = |key: &str| -> Result<String, CheckpointError> {
            let line = lines.next().ok_or_else(|| CheckpointError::Manifest {
                path: p.clone(),
                msg: format!("missing '{key}' line"),
            })?;
            line.strip_prefix(&format!("{key} "))
                .map(str::to_string)
                .ok_or_else(|| CheckpointError::Manifest {
                    path: p.clone(),
                    msg: format!("expected '{key} ...', got '{line}'"),
                })
        };
        let config = unescape_line(&field("config")?);
        let seed: u64 = field("seed")?.parse().map_err(|_| CheckpointError::Manifest {
            path: p.clone(),
            msg: "bad seed".into(),
        })?;
        let epoch: u64 = field("epoch")?.parse().map_err(|_| CheckpointError::Manifest {
            path: p.clone(),
            msg: "bad epoch".into(),
        })?;
        let count: usize = field("params")?.parse().map_err(|_| CheckpointError::Manifest {
            path: p.clone(),
            msg: "bad params count".into(),
        })?;
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines.next().ok_or_else(|| CheckpointError::Manifest {
                path: p.clone(),
                msg: "manifest ended before all parameter lines".into(),
            })?;
            let (name, len) = line.rsplit_once(' ').ok_or_else(|| CheckpointError::Manifest {
                path: p.clone(),
                msg: format!("bad parameter line '{line}'"),
            })?;
            let len: usize = len.parse().map_err(|_| CheckpointError::Manifest {
                path: p.clone(),
                msg: format!("bad parameter length in '{line}'"),
            })?;
            sizes.push((unescape_line(name), len));
        }
        let total: usize = sizes.iter().map(|(_, l)| l * 8).sum();
        if data.len() < total {
            return Err(CheckpointError::Truncated {
                path: p,
                expected: total,
                found: data.len(),
            });
        }
        let mut params = Vec::with_capacity(count);
        let mut off = 0usize;
        for (name, len) in sizes {
            let mut values = Vec::with_capacity(len);
            for i in 0..len {
                let s = off + i * 8;
                let mut buf = [0u8; 8];
                buf.copy_from_slice(&data[s..s + 8]);
                values.push(f64::from_le_bytes(buf));
            }
            off += len * 8;
            params.push((name, values));
        }
        Ok(Checkpoint {
            config,
            seed,
            epoch,
            params,
        })
    }

    /// Load and require the stored config echo to match.
    pub fn load_expecting(path: &Path, expected_config: &str) -> Result<Checkpoint, CheckpointError> {
        let ckpt = Checkpoint::load(path)?;
        if ckpt.config != expected_config {
            return Err(CheckpointError::ConfigMismatch {
                expected: expected_config.to_string(),
                found: ckpt.config,
            });
        }
        Ok(ckpt)
    }
}

fn escape_line(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape_line(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(ch) = chars.next() {
        if ch == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(c) => out.push(c),
                None => out.push('\\'),
            }
        } else {
            out.push(ch);
        }
    }
    out
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}
