//! Iconclass notation grammar and hierarchy traversal.
//!
//! A notation is read as a sequence of atoms. Digits and capital letters are
//! one atom each, a balanced `(...)` group is a single bracket-text atom, and a
//! trailing `(+...)` key contributes one key character per hierarchy level:
//!
//! ```text
//! 25FF24(MUSK-DEER)(+78)  ->  2 5 F F 2 4 (MUSK-DEER) | +7 +8
//! ```
//!
//! The parent of a notation is the notation with its last level removed, so
//! `25F23(LION)(+12)` has parent `25F23(LION)(+1)`, whose parent is
//! `25F23(LION)`.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One hierarchy step of a notation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    Digit(char),
    Letter(char),
    /// Inner text of a `(...)` group, without the brackets.
    Text(String),
    /// One character of the `(+...)` key suffix.
    KeyChar(char),
}

impl Atom {
    pub fn is_key(&self) -> bool {
        matches!(self, Atom::KeyChar(_))
    }
}

/// A parsed Iconclass notation.
///
/// Equality, ordering and hashing follow the canonical string form, which is
/// exactly the accepted input.
#[derive(Debug, Clone)]
pub struct Notation {
    raw: String,
    /// Every hierarchy step, key characters last.
    path: Vec<Atom>,
    key_start: usize,
}

impl Notation {
    pub fn parse(s: &str) -> Result<Notation> {
        let malformed = |reason| Error::MalformedNotation {
            input: s.to_string(),
            reason,
        };

        let mut chars = s.char_indices().peekable();
        match chars.peek() {
            None => return Err(malformed("empty notation")),
            Some((_, c)) if !c.is_ascii_digit() => {
                return Err(malformed("must start with a division digit"))
            }
            _ => {}
        }

        let mut path = Vec::new();
        let mut key_start = None;
        while let Some((i, c)) = chars.next() {
            if key_start.is_some() {
                return Err(malformed("key must be the final segment"));
            }
            match c {
                '0'..='9' => path.push(Atom::Digit(c)),
                'A'..='Z' => path.push(Atom::Letter(c)),
                '(' => {
                    let rest = &s[i + 1..];
                    let close = rest.find(')').ok_or_else(|| malformed("unbalanced brackets"))?;
                    let inner = &rest[..close];
                    if inner.contains('(') {
                        return Err(malformed("unbalanced brackets"));
                    }
                    if let Some(key) = inner.strip_prefix('+') {
                        if key.is_empty() {
                            return Err(malformed("empty key"));
                        }
                        if !key.chars().all(|k| k.is_ascii_alphanumeric()) {
                            return Err(malformed("key characters must be alphanumeric"));
                        }
                        key_start = Some(path.len());
                        path.extend(key.chars().map(Atom::KeyChar));
                    } else {
                        if inner.trim().is_empty() {
                            return Err(malformed("empty bracket text"));
                        }
                        if inner.trim() != inner {
                            return Err(malformed("bracket text has surrounding whitespace"));
                        }
                        path.push(Atom::Text(inner.to_string()));
                    }
                    // skip past the closing bracket
                    let end = i + 1 + close;
                    while chars.peek().is_some_and(|&(j, _)| j <= end) {
                        chars.next();
                    }
                }
                ')' => return Err(malformed("unbalanced brackets")),
                _ => return Err(malformed("unexpected character")),
            }
        }

        let key_start = key_start.unwrap_or(path.len());
        Ok(Notation {
            raw: s.to_string(),
            path,
            key_start,
        })
    }

    fn from_path(path: Vec<Atom>) -> Notation {
        let key_start = path.iter().position(Atom::is_key).unwrap_or(path.len());
        let raw = render(&path);
        Notation {
            raw,
            path,
            key_start,
        }
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    /// Atoms before the key segment.
    pub fn atoms(&self) -> &[Atom] {
        &self.path[..self.key_start]
    }

    /// Key characters, if the notation carries a `(+...)` key.
    pub fn key(&self) -> Option<Vec<char>> {
        if self.key_start == self.path.len() {
            return None;
        }
        Some(
            self.path[self.key_start..]
                .iter()
                .filter_map(|a| match a {
                    Atom::KeyChar(c) => Some(*c),
                    _ => None,
                })
                .collect(),
        )
    }

    /// All hierarchy steps, key characters included.
    pub fn path(&self) -> &[Atom] {
        &self.path
    }

    /// Number of hierarchy levels, counting key characters.
    pub fn depth(&self) -> usize {
        self.path.len()
    }

    /// Top division digit (0-9).
    pub fn division(&self) -> char {
        match self.path[0] {
            Atom::Digit(d) => d,
            _ => unreachable!("parse guarantees a leading digit"),
        }
    }

    /// The ancestor at `depth` levels, or `None` if `depth` is zero or not
    /// shallower-or-equal to this notation.
    pub fn truncate(&self, depth: usize) -> Option<Notation> {
        if depth == 0 || depth > self.path.len() {
            return None;
        }
        if depth == self.path.len() {
            return Some(self.clone());
        }
        Some(Notation::from_path(self.path[..depth].to_vec()))
    }

    pub fn parent(&self) -> Option<Notation> {
        self.truncate(self.depth() - 1)
    }

    /// `[parent, grandparent, ...]`, at most `max_depth` entries.
    pub fn ancestors(&self, max_depth: usize) -> Vec<Notation> {
        let depth = self.depth();
        (1..=max_depth.min(depth - 1))
            .filter_map(|up| self.truncate(depth - up))
            .collect()
    }

    pub fn is_ancestor_of(&self, other: &Notation) -> bool {
        self.depth() < other.depth() && other.path.starts_with(&self.path)
    }

    fn common_prefix_len(&self, other: &Notation) -> usize {
        self.path
            .iter()
            .zip(&other.path)
            .take_while(|(a, b)| a == b)
            .count()
    }

    /// Up-steps from `self` and `other` to their nearest common ancestor,
    /// or `None` when they lie in different divisions.
    pub fn steps_to_common_ancestor(&self, other: &Notation) -> Option<(usize, usize)> {
        match self.common_prefix_len(other) {
            0 => None,
            lcp => Some((self.depth() - lcp, other.depth() - lcp)),
        }
    }
}

/// Score of the hierarchical relation between two codes: 1.0 when identical,
/// 0.5 when the nearest common ancestor is at most one step from either code,
/// 0.25 when it is at most two steps, 0.0 otherwise.
pub fn hierarchy_relation(a: &Notation, b: &Notation) -> f64 {
    match a.steps_to_common_ancestor(b) {
        Some((0, 0)) => 1.0,
        Some((da, db)) => relation_score(da.max(db)),
        None => 0.0,
    }
}

/// Bucket score for a pair whose nearest common ancestor is `steps` levels
/// above the deeper of the two codes.
pub(crate) fn relation_score(steps: usize) -> f64 {
    match steps {
        0 => 1.0,
        1 => 0.5,
        2 => 0.25,
        _ => 0.0,
    }
}

fn render(path: &[Atom]) -> String {
    let mut out = String::new();
    let mut in_key = false;
    for atom in path {
        match atom {
            Atom::Digit(c) | Atom::Letter(c) => out.push(*c),
            Atom::Text(t) => {
                out.push('(');
                out.push_str(t);
                out.push(')');
            }
            Atom::KeyChar(c) => {
                if !in_key {
                    out.push_str("(+");
                    in_key = true;
                }
                out.push(*c);
            }
        }
    }
    if in_key {
        out.push(')');
    }
    out
}

/// Splits a list of notations on commas outside brackets.
///
/// `"94L5, 94L8(CLUB)"` yields `["94L5", "94L8(CLUB)"]`; empty items are skipped.
pub fn split_code_list(list: &str) -> Vec<String> {
    split_outside_brackets(list, |c| c == ',')
}

/// Splits on `is_sep` characters that are not inside `(...)`, trimming items
/// and skipping empty ones.
pub fn split_outside_brackets(list: &str, is_sep: impl Fn(char) -> bool) -> Vec<String> {
    let mut items = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    for c in list.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            c if depth == 0 && is_sep(c) => {
                items.push(std::mem::take(&mut current));
                continue;
            }
            _ => {}
        }
        current.push(c);
    }
    items.push(current);
    items
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

impl fmt::Display for Notation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl FromStr for Notation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Notation::parse(s)
    }
}

impl AsRef<str> for Notation {
    fn as_ref(&self) -> &str {
        &self.raw
    }
}

impl PartialEq for Notation {
    fn eq(&self, other: &Self) -> bool {
        self.raw == other.raw
    }
}

impl Eq for Notation {}

impl Hash for Notation {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.raw.hash(state);
    }
}

impl PartialOrd for Notation {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Notation {
    fn cmp(&self, other: &Self) -> Ordering {
        self.raw.cmp(&other.raw)
    }
}

impl Serialize for Notation {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for Notation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Notation::parse(&s).map_err(serde::de::Error::custom)
    }
}
