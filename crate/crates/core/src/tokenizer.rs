//! Rule-based segmentation of IPA strings into phoneme tokens.
//!
//! A segment is a base character plus everything that attaches to it:
//! combining diacritics (nasalization, devoicing, ...), length marks,
//! superscript modifiers (palatalization, aspiration, ...), and a second
//! base joined by a tie bar (affricates like /t͡ʃ/). Suprasegmental marks
//! (stress, tone letters, intonation) are dropped entirely.
//!
//! Input is normalized to NFD before the rules apply, so precomposed and
//! decomposed spellings of e.g. /ã/ tokenize identically.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Phonological class of a segment, decided by its base character.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Vowel,
    Consonant,
    Unknown,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Vowel => write!(f, "vowel"),
            Category::Consonant => write!(f, "consonant"),
            Category::Unknown => write!(f, "unknown"),
        }
    }
}

/// One phoneme unit: base character plus attached marks, in NFD.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SegmentToken {
    /// Full token text (base + attached marks, possibly a tie-bar pair).
    pub text: String,
    /// First base character of the token.
    pub base: char,
    pub category: Category,
}

impl fmt::Display for SegmentToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.text)
    }
}

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("malformed input: attaching mark U+{codepoint:04X} '{ch}' at character {index} has no preceding base")]
    MalformedInput { ch: char, codepoint: u32, index: usize },
}

#[derive(Debug, Error)]
pub enum RulesError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("rule sets overlap: U+{codepoint:04X} '{ch}' is both a suprasegmental and an attaching mark")]
    Overlap { ch: char, codepoint: u32 },
}

/// Pure-data rule tables driving segmentation.
#[derive(Debug, Clone)]
pub struct TokenizerRules {
    combining: BTreeSet<char>,
    superscripts: BTreeSet<char>,
    length_marks: BTreeSet<char>,
    tie_bars: BTreeSet<char>,
    suprasegmentals: BTreeSet<char>,
    vowels: BTreeSet<char>,
    join_tie_bars: bool,
}

// Default tables. The combining block U+0300..=U+036F covers the IPA
// diacritics (nasal tilde, devoicing ring, syllabicity, ...); tie bars are
// carved out of it and handled separately.
const DEFAULT_SUPERSCRIPTS: &[char] = &[
    'ʰ', 'ʱ', 'ʲ', 'ʷ', 'ˠ', 'ˡ', 'ˤ', 'ⁿ', 'ʼ', 'ˀ',
];
const DEFAULT_LENGTH_MARKS: &[char] = &['ː', 'ˑ'];
const DEFAULT_TIE_BARS: &[char] = &['\u{0361}', '\u{035C}'];
const DEFAULT_SUPRASEGMENTALS: &[char] = &[
    'ˈ', 'ˌ', // stress
    '˥', '˦', '˧', '˨', '˩', // tone letters
    '\u{A71B}', '\u{A71C}', // upstep, downstep
    '↗', '↘', // global rise / fall
    '|', '‖', // intonation group breaks
    '.', // syllable break
    '‿', // linking
];
const DEFAULT_VOWELS: &[char] = &[
    'i', 'y', 'ɨ', 'ʉ', 'ɯ', 'u', 'ɪ', 'ʏ', 'ʊ', 'e', 'ø', 'ɘ', 'ɵ', 'ɤ', 'o',
    'ə', 'ɛ', 'œ', 'ɜ', 'ɞ', 'ʌ', 'ɔ', 'æ', 'ɐ', 'a', 'ɶ', 'ɑ', 'ɒ', 'ɚ', 'ɝ',
];

impl Default for TokenizerRules {
    fn default() -> Self {
        let mut combining = BTreeSet::new();
        for cp in 0x0300..=0x036F_u32 {
            let ch = char::from_u32(cp).unwrap();
            if !DEFAULT_TIE_BARS.contains(&ch) {
                combining.insert(ch);
            }
        }
        TokenizerRules {
            combining,
            superscripts: DEFAULT_SUPERSCRIPTS.iter().copied().collect(),
            length_marks: DEFAULT_LENGTH_MARKS.iter().copied().collect(),
            tie_bars: DEFAULT_TIE_BARS.iter().copied().collect(),
            suprasegmentals: DEFAULT_SUPRASEGMENTALS.iter().copied().collect(),
            vowels: DEFAULT_VOWELS.iter().copied().collect(),
            join_tie_bars: true,
        }
    }
}

impl TokenizerRules {
    /// Parse a rule table from the plain-text config format: one
    /// `U+XXXX` code point, `U+XXXX-U+YYYY` range, or literal character
    /// per line, under section headers `[combining]`, `[superscript]`,
    /// `[length]`, `[tie_bars]`, `[suprasegmentals]`, `[vowels]`, plus an
    /// `[options]` section with `join_tie_bars on|off`. `#` starts a comment.
    pub fn parse(text: &str) -> Result<TokenizerRules, RulesError> {
        let mut rules = TokenizerRules {
            combining: BTreeSet::new(),
            superscripts: BTreeSet::new(),
            length_marks: BTreeSet::new(),
            tie_bars: BTreeSet::new(),
            suprasegmentals: BTreeSet::new(),
            vowels: BTreeSet::new(),
            join_tie_bars: true,
        };
        let mut section: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let lineno = lineno + 1;
            if line.starts_with('[') && line.ends_with(']') {
                section = Some(line[1..line.len() - 1].to_string());
                continue;
            }
            let sec = section.as_deref().ok_or_else(|| RulesError::Parse {
                line: lineno,
                msg: format!("entry '{line}' before any [section] header"),
            })?;
            if sec == "options" {
                let mut parts = line.split_whitespace();
                match (parts.next(), parts.next()) {
                    (Some("join_tie_bars"), Some(v)) if v == "on" || v == "off" => {
                        rules.join_tie_bars = v == "on";
                    }
                    _ => {
                        return Err(RulesError::Parse {
                            line: lineno,
                            msg: format!("unknown option '{line}'"),
                        })
                    }
                }
                continue;
            }
            let set = match sec {
                "combining" => &mut rules.combining,
                "superscript" => &mut rules.superscripts,
                "length" => &mut rules.length_marks,
                "tie_bars" => &mut rules.tie_bars,
                "suprasegmentals" => &mut rules.suprasegmentals,
                "vowels" => &mut rules.vowels,
                other => {
                    return Err(RulesError::Parse {
                        line: lineno,
                        msg: format!("unknown section '{other}'"),
                    })
                }
            };
            for ch in parse_entry(line, lineno)? {
                set.insert(ch);
            }
        }
        rules.validate()?;
        Ok(rules)
    }

    /// The suprasegmental set must not overlap any attaching set, otherwise
    /// stripping and attachment would contradict each other.
    pub fn validate(&self) -> Result<(), RulesError> {
        for &ch in &self.suprasegmentals {
            if self.is_attaching(ch) {
                return Err(RulesError::Overlap {
                    ch,
                    codepoint: ch as u32,
                });
            }
        }
        Ok(())
    }

    fn is_attaching(&self, ch: char) -> bool {
        self.combining.contains(&ch)
            || self.superscripts.contains(&ch)
            || self.length_marks.contains(&ch)
            || self.tie_bars.contains(&ch)
    }

    pub fn is_suprasegmental(&self, ch: char) -> bool {
        self.suprasegmentals.contains(&ch)
    }

    pub fn is_length_mark(&self, ch: char) -> bool {
        self.length_marks.contains(&ch)
    }

    pub fn is_vowel_base(&self, ch: char) -> bool {
        self.vowels.contains(&ch)
    }
}

fn parse_entry(entry: &str, line: usize) -> Result<Vec<char>, RulesError> {
    fn parse_cp(s: &str, line: usize) -> Result<u32, RulesError> {
        let hex = s.strip_prefix("U+").ok_or_else(|| RulesError::Parse {
            line,
            msg: format!("expected U+XXXX, got '{s}'"),
        })?;
        u32::from_str_radix(hex, 16).map_err(|_| RulesError::Parse {
            line,
            msg: format!("bad hex code point '{s}'"),
        })
    }
    if entry.starts_with("U+") {
        let (lo, hi) = match entry.split_once('-') {
            Some((a, b)) => (parse_cp(a, line)?, parse_cp(b, line)?),
            None => {
                let cp = parse_cp(entry, line)?;
                (cp, cp)
            }
        };
        if lo > hi {
            return Err(RulesError::Parse {
                line,
                msg: format!("empty range '{entry}'"),
            });
        }
        (lo..=hi)
            .map(|cp| {
                char::from_u32(cp).ok_or_else(|| RulesError::Parse {
                    line,
                    msg: format!("U+{cp:04X} is not a valid scalar value"),
                })
            })
            .collect()
    } else {
        let mut chars = entry.chars();
        match (chars.next(), chars.next()) {
            (Some(ch), None) => Ok(vec![ch]),
            _ => Err(RulesError::Parse {
                line,
                msg: format!("expected a single literal character or U+XXXX, got '{entry}'"),
            }),
        }
    }
}

/// Segment an IPA string. Attaching marks join the preceding base, tie bars
/// fuse two bases into one token, suprasegmentals are dropped, everything
/// else (including unrecognized symbols) starts a fresh single-character
/// token. Token order follows the input.
pub fn tokenize(ipa: &str, rules: &TokenizerRules) -> Result<Vec<SegmentToken>, TokenizeError> {
    let mut texts: Vec<String> = Vec::new();
    let mut pending_join = false;
    for (index, ch) in ipa.nfd().enumerate() {
        if rules.is_suprasegmental(ch) {
            continue;
        }
        if rules.is_attaching(ch) {
            let last = texts.last_mut().ok_or(TokenizeError::MalformedInput {
                ch,
                codepoint: ch as u32,
                index,
            })?;
            last.push(ch);
            if rules.join_tie_bars && rules.tie_bars.contains(&ch) {
                pending_join = true;
            }
            continue;
        }
        if pending_join {
            // Second half of a tie-bar pair joins the open token.
            texts.last_mut().unwrap().push(ch);
            pending_join = false;
        } else {
            texts.push(ch.to_string());
        }
    }
    Ok(texts
        .into_iter()
        .map(|text| {
            let base = text.chars().next().unwrap();
            let category = categorize_base(base, rules);
            SegmentToken {
                text,
                base,
                category,
            }
        })
        .collect())
}

/// Remove every character in the suprasegmental set. Normalizes to NFD so
/// the result equals the concatenation of `tokenize`'s token texts.
pub fn strip_suprasegmentals(ipa: &str, rules: &TokenizerRules) -> String {
    ipa.nfd().filter(|ch| !rules.is_suprasegmental(*ch)).collect()
}

fn categorize_base(base: char, rules: &TokenizerRules) -> Category {
    if rules.is_vowel_base(base) {
        Category::Vowel
    } else if base.is_alphabetic() {
        Category::Consonant
    } else {
        Category::Unknown
    }
}

/// Category of an already-built token (vowel iff the base character is in
/// the vowel table, consonant for any other letter, unknown otherwise).
pub fn categorize(token: &SegmentToken, rules: &TokenizerRules) -> Category {
    categorize_base(token.base, rules)
}

/// Token text with attached length marks removed, used where /iː/ should
/// count as /i/ (segment-set membership) but /nʲ/ must stay distinct from /n/.
pub fn strip_length_marks(text: &str, rules: &TokenizerRules) -> String {
    text.chars().filter(|ch| !rules.is_length_mark(*ch)).collect()
}
