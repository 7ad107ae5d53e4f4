//! Text curation: noise cleanup followed by acronym / teen-code expansion.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;
use unicode_properties::{GeneralCategoryGroup, UnicodeEmoji, UnicodeGeneralCategory};

use crate::error::{Error, Result};

const BUILTIN_LEXICON: &str = include_str!("../data/lexicon_vi.tsv");

/// Case-insensitive shorthand → expansion map.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcronymLexicon {
    entries: BTreeMap<String, String>,
}

fn alnum_key(token: &str) -> String {
    token
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl AcronymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// The shipped reconstruction of the curation dictionary.
    pub fn builtin() -> Self {
        Self::from_tsv(BUILTIN_LEXICON).expect("builtin lexicon is valid")
    }

    /// Adds one entry. Keys must be whitespace-free and must not map to
    /// themselves; no expansion may contain another key, so a single pass
    /// is a fixed point.
    pub fn insert(&mut self, shorthand: &str, expansion: &str) -> Result<()> {
        let key = shorthand.trim().to_lowercase();
        let expansion = expansion.trim();
        if key.is_empty() || key.chars().any(char::is_whitespace) {
            return Err(Error::Lexicon(format!(
                "shorthand `{shorthand}` must be a single non-empty token"
            )));
        }
        if expansion.is_empty() {
            return Err(Error::Lexicon(format!("empty expansion for `{key}`")));
        }
        if expansion.to_lowercase() == key {
            return Err(Error::Lexicon(format!("`{key}` maps to itself")));
        }
        let key_alnum = alnum_key(&key);
        for tok in expansion.split_whitespace() {
            let tok_key = alnum_key(tok);
            if tok_key == key_alnum || self.entries.contains_key(&tok.to_lowercase()) || self.is_key_alnum(&tok_key) {
                return Err(Error::Lexicon(format!(
                    "expansion of `{key}` contains shorthand `{tok}`"
                )));
            }
        }
        for (other, other_exp) in &self.entries {
            if other_exp.split_whitespace().any(|t| alnum_key(t) == key_alnum) {
                return Err(Error::Lexicon(format!(
                    "`{key}` appears in the expansion of `{other}`"
                )));
            }
        }
        self.entries.insert(key, expansion.to_owned());
        Ok(())
    }

    fn is_key_alnum(&self, alnum: &str) -> bool {
        !alnum.is_empty() && self.entries.keys().any(|k| alnum_key(k) == alnum)
    }

    /// Parses `shorthand<TAB>expansion` lines; `#` starts a comment line.
    pub fn from_tsv(content: &str) -> Result<Self> {
        let mut lex = Self::new();
        for (idx, line) in content.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (key, expansion) = line.split_once('\t').ok_or_else(|| {
                Error::Lexicon(format!("line {}: expected `shorthand<TAB>expansion`", idx + 1))
            })?;
            lex.insert(key, expansion)
                .map_err(|e| Error::Lexicon(format!("line {}: {e}", idx + 1)))?;
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&content)
    }

    pub fn lookup(&self, token: &str) -> Option<&str> {
        self.entries.get(&token.to_lowercase()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// A lexicon backed by a file that can be re-read when it changes.
#[derive(Debug)]
pub struct LexiconHandle {
    path: PathBuf,
    state: RwLock<(Arc<AcronymLexicon>, Option<SystemTime>)>,
}

impl LexiconHandle {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let lex = AcronymLexicon::load(&path)?;
        let mtime = modified(&path);
        Ok(Self {
            path,
            state: RwLock::new((Arc::new(lex), mtime)),
        })
    }

    pub fn current(&self) -> Arc<AcronymLexicon> {
        self.state.read().expect("lexicon lock poisoned").0.clone()
    }

    /// Re-reads the file if its modification time moved. A file that fails
    /// to parse leaves the previous lexicon in place.
    pub fn reload_if_changed(&self) -> Result<bool> {
        let mtime = modified(&self.path);
        if mtime == self.state.read().expect("lexicon lock poisoned").1 {
            return Ok(false);
        }
        let lex = AcronymLexicon::load(&self.path)?;
        *self.state.write().expect("lexicon lock poisoned") = (Arc::new(lex), mtime);
        Ok(true)
    }
}

fn modified(path: &Path) -> Option<SystemTime> {
    fs::metadata(path).and_then(|m| m.modified()).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum UnicodeForm {
    Nfc,
    Nfd,
    Nfkc,
    Nfkd,
}

impl UnicodeForm {
    fn apply(self, text: &str) -> String {
        match self {
            UnicodeForm::Nfc => text.nfc().collect(),
            UnicodeForm::Nfd => text.nfd().collect(),
            UnicodeForm::Nfkc => text.nfkc().collect(),
            UnicodeForm::Nfkd => text.nfkd().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationConfig {
    pub strip_emoji: bool,
    pub strip_special_symbols: bool,
    /// Runs of one character longer than this are cut to this length.
    pub collapse_repeats_at: usize,
    pub unicode_form: UnicodeForm,
    /// Symbols kept when `strip_special_symbols` is on.
    pub keep_symbols: String,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            strip_emoji: true,
            strip_special_symbols: true,
            collapse_repeats_at: 2,
            unicode_form: UnicodeForm::Nfc,
            keep_symbols: String::new(),
        }
    }
}

impl NormalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.collapse_repeats_at < 2 {
            return Err(Error::config("collapse_repeats_at", "must be at least 2"));
        }
        Ok(())
    }
}

fn is_emoji(c: char) -> bool {
    matches!(c, '\u{200D}' | '\u{FE0E}' | '\u{FE0F}' | '\u{20E3}' | '\u{E0020}'..='\u{E007F}')
        || (!c.is_ascii() && c.is_emoji_char())
}

fn is_special(c: char, keep: &str) -> bool {
    if c.is_whitespace() || keep.contains(c) {
        return false;
    }
    !matches!(
        c.general_category_group(),
        GeneralCategoryGroup::Letter | GeneralCategoryGroup::Number | GeneralCategoryGroup::Mark
    )
}

/// Unicode-normalizes, drops emoji and special symbols, truncates
/// repeated-character runs, and squeezes whitespace.
///
/// Digit runs are never truncated so numbers survive.
pub fn clean_text(text: &str, config: &NormalizationConfig) -> String {
    let limit = config.collapse_repeats_at.max(2);
    let normalized = config.unicode_form.apply(text);
    let filtered: String = normalized
        .chars()
        .filter(|&c| !(config.strip_emoji && is_emoji(c)))
        .filter(|&c| !(config.strip_special_symbols && is_special(c, &config.keep_symbols)))
        .collect();
    let filtered = config.unicode_form.apply(&filtered);

    let mut out = String::with_capacity(filtered.len());
    let mut prev: Option<char> = None;
    let mut run = 0usize;
    let mut pending_space = false;
    for c in filtered.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
            prev = None;
            run = 0;
            continue;
        }
        if Some(c) == prev {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if run > limit && !c.is_numeric() {
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.push(c);
    }
    out
}

/// Replaces every whitespace-delimited token whose lowercase form is a
/// lexicon key. Whitespace between tokens is preserved as-is.
pub fn expand_acronyms(text: &str, lexicon: &AcronymLexicon) -> String {
    expand_with(text, |tok| lexicon.lookup(tok).map(str::to_owned))
}

fn expand_with(text: &str, mut replace: impl FnMut(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut token_start: Option<usize> = None;
    let mut flush = |out: &mut String, tok: &str| match replace(tok) {
        Some(rep) => out.push_str(&rep),
        None => out.push_str(tok),
    };
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = token_start.take() {
                flush(&mut out, &text[s..i]);
            }
            out.push(c);
        } else if token_start.is_none() {
            token_start = Some(i);
        }
    }
    if let Some(s) = token_start {
        flush(&mut out, &text[s..]);
    }
    out
}

/// `clean_text` then `expand_acronyms`. Expansions are cleaned with the
/// same config before insertion, which makes the pipeline idempotent.
pub fn normalize_pipeline(text: &str, lexicon: &AcronymLexicon, config: &NormalizationConfig) -> String {
    let cleaned = clean_text(text, config);
    if lexicon.is_empty() {
        return cleaned;
    }
    let expanded = expand_with(&cleaned, |tok| {
        lexicon.lookup(tok).map(|exp| clean_text(exp, config))
    });
    // an expansion that cleans to nothing would leave a double space
    if expanded.contains("  ") || expanded.starts_with(' ') || expanded.ends_with(' ') {
        expanded.split_whitespace().collect::<Vec<_>>().join(" ")
    } else {
        expanded
    }
}
