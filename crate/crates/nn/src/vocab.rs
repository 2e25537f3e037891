//! Segment-to-id vocabulary for the encoder, with `[MASK]` and `[UNK]`
//! specials. Serialized as one segment per line; the line number is the id.

use std::fs;
use std::path::Path;

use std::collections::BTreeMap;

use phonosym_core::corpus::PretrainCorpus;
use phonosym_core::tokenizer::{tokenize, TokenizerRules};

use crate::NnError;

pub const MASK_TOKEN: &str = "[MASK]";
pub const UNK_TOKEN: &str = "[UNK]";

#[derive(Debug, Clone)]
pub struct TokenVocab {
    segments: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl TokenVocab {
    fn from_sorted(real_segments: Vec<String>) -> TokenVocab {
        let mut segments = vec![MASK_TOKEN.to_string(), UNK_TOKEN.to_string()];
        segments.extend(real_segments);
        let index = segments
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        TokenVocab { segments, index }
    }

    /// Sorted union of segments over the corpus, plus the two specials.
    pub fn build(corpus: &PretrainCorpus, rules: &TokenizerRules) -> Result<TokenVocab, NnError> {
        let mut set = std::collections::BTreeSet::new();
        for (_, ipa) in &corpus.items {
            for tok in tokenize(ipa, rules).map_err(|e| NnError::Tokenize(e.to_string()))? {
                set.insert(tok.text);
            }
        }
        if set.is_empty() {
            return Err(NnError::EmptyVocabulary);
        }
        Ok(TokenVocab::from_sorted(set.into_iter().collect()))
    }

    pub fn from_segments(segments: impl IntoIterator<Item = String>) -> TokenVocab {
        let mut v: Vec<String> = segments.into_iter().collect();
        v.sort();
        v.dedup();
        TokenVocab::from_sorted(v)
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn mask_id(&self) -> usize {
        0
    }

    pub fn unk_id(&self) -> usize {
        1
    }

    /// Ids of real segments (everything after the specials).
    pub fn first_real_id(&self) -> usize {
        2
    }

    pub fn id(&self, segment: &str) -> usize {
        self.index.get(segment).copied().unwrap_or(1)
    }

    pub fn segment(&self, id: usize) -> &str {
        &self.segments[id]
    }

    /// Tokenize and map to ids, `[UNK]` for unseen segments.
    pub fn encode(&self, ipa: &str, rules: &TokenizerRules) -> Result<Vec<usize>, NnError> {
        let toks = tokenize(ipa, rules).map_err(|e| NnError::Tokenize(e.to_string()))?;
        Ok(toks.iter().map(|t| self.id(&t.text)).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut out = String::new();
        for s in &self.segments {
            out.push_str(s);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<TokenVocab, NnError> {
        let text =
            fs::read_to_string(path).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))?;
        let segments: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        if segments.len() < 3 || segments[0] != MASK_TOKEN || segments[1] != UNK_TOKEN {
            return Err(NnError::BadVocabFile(path.display().to_string()));
        }
        let index = segments
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(TokenVocab { segments, index })
    }
}
