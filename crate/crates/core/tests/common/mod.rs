#![allow(dead_code)]

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use iconmap::notation::Notation;
use iconmap::vocabulary::{load_vocabulary, VocabFormat, Vocabulary};
use iconmap::CodeSet;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schema")
}

pub fn set(items: &[&str]) -> CodeSet {
    items.iter().map(|s| s.to_string()).collect()
}

pub fn fixture_vocab() -> Vocabulary {
    let file = std::fs::File::open(fixture("vocabulary.jsonl")).unwrap();
    let (vocab, report) = load_vocabulary(std::io::BufReader::new(file), VocabFormat::Jsonl).unwrap();
    assert_eq!(report.skipped, 0, "{:?}", report.warnings);
    vocab
}

/// Runs the built binary with `ICONMAP_CONFIG` cleared unless given in `env`.
pub fn iconmap(args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_iconmap"));
    cmd.args(args).env_remove("ICONMAP_CONFIG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn iconmap")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

pub fn json_codes(v: &serde_json::Value) -> BTreeSet<String> {
    v.as_array()
        .expect("array of codes")
        .iter()
        .map(|c| c.as_str().unwrap().to_string())
        .collect()
}

pub fn python_jsonschema_available() -> bool {
    Command::new("python3")
        .args(["-c", "import jsonschema, referencing"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

/// Validates `doc` against a schema file in `schema/`. Returns the
/// validator's complaints on failure.
pub fn validate(schema: &str, doc: &serde_json::Value) -> Result<(), String> {
    let mut child = Command::new("python3")
        .arg(schema_dir().join("validate.py"))
        .arg(schema)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn python3");
    child
        .stdin
        .take()
        .unwrap()
        .write_all(doc.to_string().as_bytes())
        .unwrap();
    let out = child.wait_with_output().unwrap();
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

/// Splits a notation into hierarchy parts by plain string scanning: one
/// part per character outside brackets, one per bracketed text, one per key
/// character.
pub fn oracle_parts(code: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut rest = code;
    while let Some(c) = rest.chars().next() {
        if c == '(' {
            let close = rest.find(')').expect("balanced brackets");
            let inner = &rest[1..close];
            if let Some(key) = inner.strip_prefix('+') {
                parts.extend(key.chars().map(|k| format!("+{k}")));
            } else {
                parts.push(rest[..=close].to_string());
            }
            rest = &rest[close + 1..];
        } else {
            parts.push(c.to_string());
            rest = &rest[c.len_utf8()..];
        }
    }
    parts
}

/// Rebuilds a notation from leading parts.
pub fn oracle_join(parts: &[String]) -> String {
    let mut out = String::new();
    let mut key = String::new();
    for p in parts {
        match p.strip_prefix('+') {
            Some(k) => key.push_str(k),
            None => out.push_str(p),
        }
    }
    if !key.is_empty() {
        out.push_str("(+");
        out.push_str(&key);
        out.push(')');
    }
    out
}

/// `[parent, grandparent, ..., division]` computed by the oracle.
pub fn oracle_parent_chain(code: &str) -> Vec<String> {
    let parts = oracle_parts(code);
    (1..parts.len()).rev().map(|n| oracle_join(&parts[..n])).collect()
}

/// Parent chain via the library.
pub fn parent_chain(n: &Notation) -> Vec<String> {
    let mut chain = Vec::new();
    let mut cur = n.parent();
    while let Some(p) = cur {
        chain.push(p.as_str().to_string());
        cur = p.parent();
    }
    chain
}

/// Oracle relation score: climb both codes with the string oracle.
pub fn oracle_relation(a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    let pa = oracle_parts(a);
    let pb = oracle_parts(b);
    let lcp = pa.iter().zip(&pb).take_while(|(x, y)| x == y).count();
    if lcp == 0 {
        return 0.0;
    }
    match (pa.len() - lcp).max(pb.len() - lcp) {
        1 => 0.5,
        2 => 0.25,
        _ => 0.0,
    }
}

const NAMES: &[&str] = &["LION", "EAGLE", "OAK", "ST. PETER", "CUPID & PSYCHE", "DOG'S HEAD", "APOLLO"];

/// Extends `code` by one hierarchy step: a digit, letter, bracketed name or
/// key character.
fn extend(code: &str, rng: &mut impl rand::Rng) -> String {
    if let Some(open) = code.find("(+") {
        let key = &code[open + 2..code.len() - 1];
        return format!("{}(+{}{})", &code[..open], key, rng.gen_range(0..10));
    }
    match rng.gen_range(0..10) {
        0..=4 => format!("{code}{}", rng.gen_range(0..10)),
        5..=7 => {
            let last = code.chars().last().unwrap();
            if last.is_ascii_uppercase() && rng.gen_bool(0.3) {
                format!("{code}{last}")
            } else {
                format!("{code}{}", (b'A' + rng.gen_range(0..26u8)) as char)
            }
        }
        8 => format!("{code}({})", NAMES[rng.gen_range(0..NAMES.len())]),
        _ => format!("{code}(+{})", rng.gen_range(0..10)),
    }
}

/// `n` distinct notations forming a random tree under the ten divisions.
pub fn synthetic_codes(rng: &mut impl rand::Rng, n: usize) -> Vec<String> {
    let mut codes: Vec<String> = (0..10).map(|d| d.to_string()).collect();
    let mut seen: std::collections::HashSet<String> = codes.iter().cloned().collect();
    while codes.len() < n {
        let parent = &codes[rng.gen_range(0..codes.len())];
        let child = extend(parent, rng);
        if seen.insert(child.clone()) {
            Notation::parse(&child).unwrap_or_else(|e| panic!("generator produced {child}: {e}"));
            codes.push(child);
        }
    }
    codes.truncate(n);
    codes
}
