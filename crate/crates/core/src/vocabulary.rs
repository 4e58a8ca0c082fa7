//! In-memory Iconclass concept dataset with keyword and text lookups.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::str::FromStr;

use log::warn;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::notation::Notation;
use crate::CodeSet;

/// Record layout accepted by [`load_vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabFormat {
    /// One JSON object per line: `{"notation", "text", "keywords", "lang"}`.
    Jsonl,
    /// `notation<TAB>text<TAB>comma,separated,keywords`.
    Tsv,
}

impl FromStr for VocabFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(VocabFormat::Jsonl),
            "tsv" => Ok(VocabFormat::Tsv),
            other => Err(Error::Config(format!("unknown vocabulary format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub notation: Notation,
    pub text: String,
    pub keywords: BTreeSet<String>,
    pub lang: String,
}

impl VocabEntry {
    pub fn new<I, S>(notation: Notation, text: impl Into<String>, keywords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        VocabEntry {
            notation,
            text: text.into(),
            keywords: keywords
                .into_iter()
                .filter_map(|k| normalize_keyword(k.as_ref()))
                .collect(),
            lang: "en".to_string(),
        }
    }
}

/// Lowercased, trimmed keyword; `None` when nothing is left.
pub fn normalize_keyword(raw: &str) -> Option<String> {
    let k = raw.trim().to_lowercase();
    (!k.is_empty()).then_some(k)
}

#[derive(Debug, Deserialize)]
struct JsonRecord {
    notation: String,
    text: String,
    keywords: Vec<String>,
    #[serde(default)]
    lang: Option<String>,
}

/// Summary of a vocabulary load.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub loaded: usize,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    entries: BTreeMap<String, VocabEntry>,
    keyword_index: HashMap<String, BTreeSet<String>>,
    keyword_set_index: HashMap<Vec<String>, BTreeSet<String>>,
    /// Lowercased display text per notation, for description search.
    lowered_text: HashMap<String, String>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
            && self.keyword_index == other.keyword_index
            && self.keyword_set_index == other.keyword_set_index
    }
}

impl Vocabulary {
    pub fn from_entries(entries: impl IntoIterator<Item = VocabEntry>) -> Vocabulary {
        let mut vocab = Vocabulary::default();
        for entry in entries {
            vocab.entries.insert(entry.notation.to_string(), entry);
        }
        vocab.rebuild_indexes();
        vocab
    }

    fn rebuild_indexes(&mut self) {
        self.keyword_index.clear();
        self.keyword_set_index.clear();
        self.lowered_text.clear();
        for (code, entry) in &self.entries {
            for kw in &entry.keywords {
                self.keyword_index
                    .entry(kw.clone())
                    .or_default()
                    .insert(code.clone());
            }
            if !entry.keywords.is_empty() {
                let key: Vec<String> = entry.keywords.iter().cloned().collect();
                self.keyword_set_index
                    .entry(key)
                    .or_default()
                    .insert(code.clone());
            }
            self.lowered_text
                .insert(code.clone(), entry.text.to_lowercase());
        }
    }

    /// Fresh copy with indexes derived from the entries alone.
    pub fn rebuilt(&self) -> Vocabulary {
        Vocabulary::from_entries(self.entries.values().cloned())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, code: &str) -> Option<&VocabEntry> {
        self.entries.get(code)
    }

    pub fn text(&self, code: &str) -> Option<&str> {
        self.entries.get(code).map(|e| e.text.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = &VocabEntry> {
        self.entries.values()
    }

    /// Codes whose keyword set equals `keywords` exactly.
    pub fn codes_with_keyword_set(&self, keywords: &BTreeSet<String>) -> CodeSet {
        let key: Vec<String> = keywords.iter().cloned().collect();
        self.keyword_set_index.get(&key).cloned().unwrap_or_default()
    }

    /// Codes whose keyword set contains every keyword in `keywords`.
    pub fn codes_with_keywords_superset(&self, keywords: &BTreeSet<String>) -> CodeSet {
        let mut postings: Vec<&BTreeSet<String>> = Vec::with_capacity(keywords.len());
        for kw in keywords {
            match self.keyword_index.get(kw) {
                Some(codes) => postings.push(codes),
                None => return CodeSet::new(),
            }
        }
        postings.sort_by_key(|p| p.len());
        let Some((shortest, rest)) = postings.split_first() else {
            return CodeSet::new();
        };
        shortest
            .iter()
            .filter(|code| rest.iter().all(|p| p.contains(*code)))
            .cloned()
            .collect()
    }

    pub fn codes_with_keyword(&self, keyword: &str) -> CodeSet {
        self.keyword_index.get(keyword).cloned().unwrap_or_default()
    }

    /// Codes whose display text contains `term` as a whole word, ignoring case.
    pub fn codes_with_text_containing(&self, term: &str) -> CodeSet {
        let term = term.trim().to_lowercase();
        if term.is_empty() {
            return CodeSet::new();
        }
        self.lowered_text
            .iter()
            .filter(|(_, text)| contains_word(text, &term))
            .map(|(code, _)| code.clone())
            .collect()
    }
}

/// Whole-word containment: every occurrence is checked for non-alphanumeric
/// neighbours on both sides.
pub(crate) fn contains_word(haystack: &str, needle: &str) -> bool {
    haystack.match_indices(needle).any(|(start, m)| {
        let before = haystack[..start].chars().next_back();
        let after = haystack[start + m.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

/// Reads a vocabulary. Syntactically broken records are a [`Error::Format`];
/// records with an invalid notation are skipped and counted; a repeated
/// notation replaces the earlier record.
pub fn load_vocabulary<R: BufRead>(source: R, format: VocabFormat) -> Result<(Vocabulary, LoadReport)> {
    let mut report = LoadReport::default();
    let mut entries: BTreeMap<String, VocabEntry> = BTreeMap::new();

    for (lineno, line) in source.lines().enumerate() {
        let record = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (notation, text, keywords, lang) = match format {
            VocabFormat::Jsonl => {
                let r: JsonRecord = serde_json::from_str(&line)
                    .map_err(|e| Error::format(record, e.to_string()))?;
                (r.notation, r.text, r.keywords, r.lang)
            }
            VocabFormat::Tsv => {
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 3 {
                    return Err(Error::format(
                        record,
                        format!("expected 3 tab-separated fields, found {}", fields.len()),
                    ));
                }
                let keywords = fields[2].split(',').map(str::to_string).collect();
                (fields[0].to_string(), fields[1].to_string(), keywords, None)
            }
        };

        let notation = match Notation::parse(notation.trim()) {
            Ok(n) => n,
            Err(e) => {
                let msg = format!("record {record}: skipped, {e}");
                warn!("{msg}");
                report.warnings.push(msg);
                report.skipped += 1;
                continue;
            }
        };
        let mut entry = VocabEntry::new(notation, text, keywords);
        if let Some(lang) = lang {
            entry.lang = lang;
        }
        if let Some(prev) = entries.insert(entry.notation.to_string(), entry) {
            let msg = format!(
                "record {record}: duplicate notation {}, keeping the later record",
                prev.notation
            );
            warn!("{msg}");
            report.warnings.push(msg);
        }
    }

    report.loaded = entries.len();
    Ok((Vocabulary::from_entries(entries.into_values()), report))
}
