//! Deterministic tweet normalization: rule-based tokenization, dictionary
//! replacement, emoji clustering, regex cleanup and an optional lemma
//! lookup. The full pipeline is idempotent, so re-running it over its own
//! output changes nothing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("{path} line {line}: {message}")]
    BadTableLine { path: String, line: usize, message: String },
    #[error("dictionary pattern must not be empty (line {line})")]
    EmptyPattern { line: usize },
    #[error("replacement {0:?} contains whitespace")]
    ReplacementWhitespace(String),
    #[error("replacement {0:?} is not stable under normalization")]
    UnstableReplacement(String),
    #[error("bad regex {pattern:?}: {message}")]
    BadRegex { pattern: String, message: String },
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

/// One token plus the provenance the later passes record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub lemma: Option<String>,
    /// Original text when this token came out of a replacement rule.
    pub replaced_from: Option<String>,
}

impl Token {
    pub fn plain(surface: impl Into<String>) -> Self {
        Self { surface: surface.into(), lemma: None, replaced_from: None }
    }

    fn replaced(surface: impl Into<String>, from: impl Into<String>) -> Self {
        Self { surface: surface.into(), lemma: None, replaced_from: Some(from.into()) }
    }

    /// Lemma when known, surface otherwise.
    pub fn effective(&self) -> &str {
        self.lemma.as_deref().unwrap_or(&self.surface)
    }
}

pub type TokenStream = Vec<Token>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DictPattern {
    /// One or more whitespace-separated words matched against consecutive
    /// tokens.
    Literal(Vec<String>),
    /// A word-class regex matched against one whole token.
    Regex(String),
}

#[derive(Debug)]
struct DictEntry {
    pattern: DictPattern,
    compiled: Option<Regex>,
    replacement: String,
}

/// Ordered replacement rules; longest match wins, ties keep the earliest
/// entry.
#[derive(Debug)]
pub struct RuleDictionary {
    entries: Vec<DictEntry>,
    pub case_sensitive: bool,
}

impl RuleDictionary {
    pub fn new(
        rules: Vec<(DictPattern, String)>,
        case_sensitive: bool,
    ) -> Result<Self, PreprocessError> {
        let mut entries = Vec::with_capacity(rules.len());
        for (line, (pattern, replacement)) in rules.into_iter().enumerate() {
            check_replacement(&replacement)?;
            let compiled = match &pattern {
                DictPattern::Literal(words) => {
                    if words.is_empty() || words.iter().any(|w| w.is_empty()) {
                        return Err(PreprocessError::EmptyPattern { line: line + 1 });
                    }
                    None
                }
                DictPattern::Regex(src) => {
                    if src.is_empty() {
                        return Err(PreprocessError::EmptyPattern { line: line + 1 });
                    }
                    Some(Regex::new(src).map_err(|e| PreprocessError::BadRegex {
                        pattern: src.clone(),
                        message: e.to_string(),
                    })?)
                }
            };
            entries.push(DictEntry { pattern, compiled, replacement });
        }
        Ok(Self { entries, case_sensitive })
    }

    /// Loads `pattern<TAB>replacement<TAB>type` lines, type `literal` or
    /// `regex`. Lines starting with `#` are comments.
    pub fn load(path: &Path, case_sensitive: bool) -> Result<Self, PreprocessError> {
        let text = read(path)?;
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(PreprocessError::BadTableLine {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("want 3 tab-separated fields, got {}", fields.len()),
                });
            }
            let pattern = match fields[2] {
                "literal" => DictPattern::Literal(
                    fields[0].split_whitespace().map(String::from).collect(),
                ),
                "regex" => DictPattern::Regex(fields[0].to_string()),
                other => {
                    return Err(PreprocessError::BadTableLine {
                        path: path.display().to_string(),
                        line: i + 1,
                        message: format!("unknown pattern type {other:?}"),
                    })
                }
            };
            rules.push((pattern, fields[1].to_string()));
        }
        Self::new(rules, case_sensitive)
    }

    /// Number of tokens starting at `pos` this entry matches, if any.
    fn match_len(&self, entry: &DictEntry, stream: &[Token], pos: usize) -> Option<usize> {
        match &entry.pattern {
            DictPattern::Literal(words) => {
                if pos + words.len() > stream.len() {
                    return None;
                }
                for (word, token) in words.iter().zip(&stream[pos..]) {
                    if token.replaced_from.is_some() {
                        return None;
                    }
                    let surface = token.effective();
                    let matched = if self.case_sensitive {
                        surface == word
                    } else {
                        surface.eq_ignore_ascii_case(word)
                    };
                    if !matched {
                        return None;
                    }
                }
                Some(words.len())
            }
            DictPattern::Regex(_) => {
                let token = &stream[pos];
                if token.replaced_from.is_some() {
                    return None;
                }
                let re = entry.compiled.as_ref().expect("regex entries are compiled");
                let surface = token.effective();
                match re.find(surface) {
                    Some(m) if m.start() == 0 && m.end() == surface.len() => Some(1),
                    _ => None,
                }
            }
        }
    }
}

fn check_replacement(replacement: &str) -> Result<(), PreprocessError> {
    if replacement.is_empty() || replacement.chars().any(char::is_whitespace) {
        return Err(PreprocessError::ReplacementWhitespace(replacement.to_string()));
    }
    // Keywords must survive the regex pass and re-tokenization unchanged,
    // otherwise the pipeline would not be idempotent.
    let tokens = tokenize(replacement);
    let renormalized = normalize_regex(tokens);
    if renormalized.len() != 1 || renormalized[0].surface != replacement {
        return Err(PreprocessError::UnstableReplacement(replacement.to_string()));
    }
    Ok(())
}

/// Emoji-to-cluster-keyword mapping; the keyword set is closed and every
/// keyword is validated as pipeline-stable.
#[derive(Debug, Clone)]
pub struct EmojiClusterTable {
    map: BTreeMap<String, String>,
}

impl EmojiClusterTable {
    pub fn new(map: BTreeMap<String, String>) -> Result<Self, PreprocessError> {
        for keyword in map.values() {
            check_replacement(keyword)?;
        }
        Ok(Self { map })
    }

    /// Loads `emoji<TAB>cluster` lines.
    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        let text = read(path)?;
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(PreprocessError::BadTableLine {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("want 2 tab-separated fields, got {}", fields.len()),
                });
            }
            map.insert(fields[0].to_string(), fields[1].to_string());
        }
        Self::new(map)
    }

    /// The closed set of cluster keywords.
    pub fn clusters(&self) -> BTreeSet<&str> {
        self.map.values().map(String::as_str).collect()
    }

    pub fn get(&self, emoji: &str) -> Option<&str> {
        self.map.get(emoji).map(String::as_str)
    }
}

/// `word<TAB>lemma` lookup table.
#[derive(Debug, Clone, Default)]
pub struct LemmaTable {
    map: BTreeMap<String, String>,
}

impl LemmaTable {
    pub fn load(path: &Path) -> Result<Self, PreprocessError> {
        let text = read(path)?;
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(PreprocessError::BadTableLine {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("want 2 tab-separated fields, got {}", fields.len()),
                });
            }
            map.insert(fields[0].to_string(), fields[1].to_string());
        }
        Ok(Self { map })
    }
}

fn read(path: &Path) -> Result<String, PreprocessError> {
    fs::read_to_string(path).map_err(|e| PreprocessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn is_emoji_base(c: char) -> bool {
    matches!(u32::from(c),
        0x1F000..=0x1FAFF // pictographs, emoticons, transport, supplemental
        | 0x2600..=0x27BF // misc symbols and dingbats
        | 0x2B00..=0x2BFF // misc symbols and arrows (stars)
        | 0x2190..=0x21FF // arrows
    )
}

fn is_emoji_modifier(c: char) -> bool {
    matches!(u32::from(c),
        0xFE0E..=0xFE0F   // variation selectors
        | 0x1F3FB..=0x1F3FF // skin tones
        | 0x20E3           // keycap
    )
}

fn is_emoji_token(s: &str) -> bool {
    s.chars().next().map(is_emoji_base).unwrap_or(false)
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Splits text into tokens: whitespace and punctuation are boundaries, but
/// URLs, @mentions, #hashtags, `<keyword>` atoms, hyphenated words and emoji
/// sequences stay whole. Camel-cased words are split and everything except
/// URLs is lowercased; URL tokens are rewritten to `<url>` immediately.
pub fn tokenize(text: &str) -> TokenStream {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }

        // URLs run to the next whitespace.
        if starts_url(&chars[i..]) {
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
            let original: String = chars[start..i].iter().collect();
            out.push(Token::replaced(URL_KEYWORD, original));
            continue;
        }

        // Reserved angle-bracket keywords are atomic.
        if c == '<' {
            if let Some(end) = keyword_end(&chars[i..]) {
                let token: String = chars[i..i + end].iter().collect();
                out.push(Token::plain(token));
                i += end;
                continue;
            }
        }

        // Mentions and hashtags keep their sigil.
        if (c == '@' || c == '#')
            && chars.get(i + 1).map(|&n| is_word_char(n)).unwrap_or(false)
        {
            let start = i;
            i += 1;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
            let token: String = chars[start..i].iter().collect();
            out.push(Token::plain(token.to_lowercase()));
            continue;
        }

        if is_emoji_base(c) {
            let start = i;
            i += 1;
            loop {
                while i < chars.len() && is_emoji_modifier(chars[i]) {
                    i += 1;
                }
                // Zero-width joiner glues multi-part emojis together.
                if i + 1 < chars.len()
                    && chars[i] == '\u{200D}'
                    && is_emoji_base(chars[i + 1])
                {
                    i += 2;
                } else {
                    break;
                }
            }
            let token: String = chars[start..i].iter().collect();
            out.push(Token::plain(token));
            continue;
        }

        if is_word_char(c) {
            let start = i;
            while i < chars.len()
                && (is_word_char(chars[i])
                    || (chars[i] == '-'
                        && i > start
                        && chars.get(i + 1).map(|&n| is_word_char(n)).unwrap_or(false)))
            {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            for piece in split_camel(&word) {
                out.push(Token::plain(piece.to_lowercase()));
            }
            continue;
        }

        // Any other character is a single punctuation token.
        out.push(Token::plain(c.to_string()));
        i += 1;
    }
    out
}

pub const URL_KEYWORD: &str = "<url>";

fn starts_url(chars: &[char]) -> bool {
    let prefix: String = chars.iter().take(8).collect::<String>().to_lowercase();
    prefix.starts_with("http://") || prefix.starts_with("https://") || prefix.starts_with("www.")
}

fn keyword_end(chars: &[char]) -> Option<usize> {
    // `<` [a-z0-9-]+ `>`
    let mut j = 1;
    while j < chars.len() && (chars[j].is_ascii_lowercase() || chars[j].is_ascii_digit() || chars[j] == '-') {
        j += 1;
    }
    if j > 1 && chars.get(j) == Some(&'>') {
        Some(j + 1)
    } else {
        None
    }
}

fn split_camel(word: &str) -> Vec<String> {
    let mut pieces = Vec::new();
    let mut current = String::new();
    let mut prev_lower = false;
    for c in word.chars() {
        if c.is_uppercase() && prev_lower && !current.is_empty() {
            pieces.push(std::mem::take(&mut current));
        }
        prev_lower = c.is_lowercase() || c.is_ascii_digit();
        current.push(c);
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    pieces
}

fn is_punct_only(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| !c.is_alphanumeric() && !is_emoji_base(c))
}

fn url_like(s: &str) -> bool {
    let lower = s.to_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

/// Regex cleanup: URL-shaped tokens become `<url>`, duplicate punctuation
/// collapses (both inside tokens and across consecutive tokens), and runs
/// of more than two identical letters shrink to two.
pub fn normalize_regex(stream: TokenStream) -> TokenStream {
    let mut cleaned: TokenStream = Vec::with_capacity(stream.len());
    for mut token in stream {
        if url_like(&token.surface) {
            cleaned.push(Token::replaced(URL_KEYWORD, token.surface));
            continue;
        }
        let surface = if is_punct_only(&token.surface) {
            dedupe_chars(&token.surface)
        } else {
            cap_letter_runs(&token.surface)
        };
        token.surface = surface;
        cleaned.push(token);
    }

    // Collapse runs of identical punctuation tokens to one.
    let mut out: TokenStream = Vec::with_capacity(cleaned.len());
    for token in cleaned {
        let duplicate = out
            .last()
            .map(|prev: &Token| {
                is_punct_only(&token.surface) && prev.surface == token.surface
            })
            .unwrap_or(false);
        if !duplicate {
            out.push(token);
        }
    }
    out
}

fn dedupe_chars(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut prev = None;
    for c in s.chars() {
        if Some(c) != prev {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

fn cap_letter_runs(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut prev = None;
    let mut run = 0usize;
    for c in s.chars() {
        if Some(c) == prev && c.is_alphabetic() {
            run += 1;
        } else {
            run = 1;
        }
        if run <= 2 {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

/// Deduplicates consecutive identical emojis, then maps each mapped emoji to
/// its cluster keyword and drops unmapped ones.
pub fn cluster_emojis(stream: TokenStream, table: &EmojiClusterTable) -> TokenStream {
    let mut deduped: TokenStream = Vec::with_capacity(stream.len());
    for token in stream {
        let duplicate = deduped
            .last()
            .map(|prev: &Token| is_emoji_token(&token.surface) && prev.surface == token.surface)
            .unwrap_or(false);
        if !duplicate {
            deduped.push(token);
        }
    }
    let mut out = Vec::with_capacity(deduped.len());
    for token in deduped {
        if is_emoji_token(&token.surface) {
            if let Some(keyword) = table.get(&token.surface) {
                out.push(Token::replaced(keyword, token.surface));
            }
            // Unmapped emojis are dropped.
        } else {
            out.push(token);
        }
    }
    out
}

/// Longest-match-first, left-to-right, single pass. Tokens produced by any
/// replacement are never re-matched.
pub fn replace_dict(stream: TokenStream, dict: &RuleDictionary) -> TokenStream {
    let mut out = Vec::with_capacity(stream.len());
    let mut pos = 0;
    while pos < stream.len() {
        let mut best: Option<(usize, usize)> = None; // (len, entry index)
        for (idx, entry) in dict.entries.iter().enumerate() {
            if let Some(len) = dict.match_len(entry, &stream, pos) {
                let better = match best {
                    None => true,
                    Some((best_len, _)) => len > best_len,
                };
                if better {
                    best = Some((len, idx));
                }
            }
        }
        match best {
            Some((len, idx)) => {
                let original = stream[pos..pos + len]
                    .iter()
                    .map(|t| t.surface.as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                out.push(Token::replaced(dict.entries[idx].replacement.clone(), original));
                pos += len;
            }
            None => {
                out.push(stream[pos].clone());
                pos += 1;
            }
        }
    }
    out
}

/// Fills the lemma slot from the lookup table; surfaces are untouched.
pub fn apply_lemmas(mut stream: TokenStream, table: &LemmaTable) -> TokenStream {
    for token in &mut stream {
        token.lemma = table.map.get(&token.surface).cloned();
    }
    stream
}

/// Naive sentence splitter on `.`, `!`, `?` used when tweets arrive unsplit.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            let trimmed = current.trim();
            if !trimmed.is_empty() {
                out.push(trimmed.to_string());
            }
            current.clear();
        }
    }
    let trimmed = current.trim();
    if !trimmed.is_empty() {
        out.push(trimmed.to_string());
    }
    out
}

/// The assembled pipeline in application order: tokenize, dictionary pass,
/// lemmas, emoji clustering, regex cleanup, second dictionary pass.
#[derive(Debug, Default)]
pub struct Pipeline {
    pub dict: Option<RuleDictionary>,
    pub emoji: Option<EmojiClusterTable>,
    pub lemmas: Option<LemmaTable>,
}

impl Pipeline {
    pub fn run(&self, text: &str) -> TokenStream {
        self.run_stream(tokenize(text))
    }

    /// The post-tokenization stages; idempotent.
    pub fn run_stream(&self, mut stream: TokenStream) -> TokenStream {
        if let Some(dict) = &self.dict {
            stream = replace_dict(stream, dict);
        }
        if let Some(lemmas) = &self.lemmas {
            stream = apply_lemmas(stream, lemmas);
        }
        if let Some(emoji) = &self.emoji {
            stream = cluster_emojis(stream, emoji);
        }
        stream = normalize_regex(stream);
        if let Some(dict) = &self.dict {
            stream = replace_dict(stream, dict);
        }
        stream
    }
}
