//! Label-to-code mapping and the deterministic code-set reducers.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use log::debug;
use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::{Error, Result};
use crate::vocabulary::Vocabulary;
use crate::CodeSet;

pub type LabelSet = BTreeSet<String>;

/// One detector hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub confidence: f64,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
}

/// Deduplicated labels detected on one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDocument {
    pub image_id: String,
    pub labels: LabelSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<Detection>>,
}

#[derive(Deserialize)]
struct RawLabelDocument {
    #[serde(default)]
    image_id: Option<String>,
    labels: Vec<String>,
    #[serde(default)]
    detections: Option<Vec<Detection>>,
}

impl LabelDocument {
    pub fn new<I, S>(image_id: impl Into<String>, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        LabelDocument {
            image_id: image_id.into(),
            labels: labels
                .into_iter()
                .filter_map(|l| normalize_label(l.as_ref()))
                .collect(),
            detections: None,
        }
    }

    /// Parses and validates the detector JSON contract. Labels are lowercased
    /// and deduplicated; every detection label must be among the labels.
    /// `fallback_id` is used when the document carries no `image_id`.
    pub fn from_json(json: &str, fallback_id: Option<&str>) -> Result<Self> {
        let raw: RawLabelDocument = serde_json::from_str(json)
            .map_err(|e| Error::LabelDocument(e.to_string()))?;
        let image_id = raw
            .image_id
            .or_else(|| fallback_id.map(str::to_string))
            .ok_or_else(|| Error::LabelDocument("missing image_id".into()))?;
        let mut doc = LabelDocument::new(image_id, raw.labels);
        if let Some(detections) = raw.detections {
            for det in &detections {
                if !(0.0..=1.0).contains(&det.confidence) {
                    return Err(Error::LabelDocument(format!(
                        "confidence {} of {:?} is outside [0, 1]",
                        det.confidence, det.label
                    )));
                }
                match normalize_label(&det.label) {
                    Some(l) if doc.labels.contains(&l) => {}
                    _ => {
                        return Err(Error::LabelDocument(format!(
                            "detection label {:?} is not listed in labels",
                            det.label
                        )))
                    }
                }
            }
            doc.detections = Some(detections);
        }
        Ok(doc)
    }
}

fn normalize_label(raw: &str) -> Option<String> {
    let l = raw.trim().to_lowercase();
    (!l.is_empty()).then_some(l)
}

/// Detector class name to vocabulary keyword substitutions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AliasMap(BTreeMap<String, String>);

const COCO_ALIASES: &str = include_str!("../data/coco_aliases.json");

impl AliasMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// The shipped mapping from COCO class names to Iconclass keyword phrasing.
    pub fn coco_default() -> Self {
        Self::from_json(COCO_ALIASES).expect("embedded alias map is valid")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let raw: BTreeMap<String, String> = serde_json::from_str(json)?;
        Ok(AliasMap(
            raw.into_iter()
                .filter_map(|(k, v)| Some((normalize_label(&k)?, normalize_label(&v)?)))
                .collect(),
        ))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, from: &str, to: &str) {
        if let (Some(f), Some(t)) = (normalize_label(from), normalize_label(to)) {
            self.0.insert(f, t);
        }
    }

    fn resolve<'a>(&'a self, label: &'a str) -> &'a str {
        self.0.get(label).map(String::as_str).unwrap_or(label)
    }
}

/// Lowercases, trims, applies aliases and deduplicates.
pub fn normalize_labels<S: AsRef<str>>(raw: &[S], aliases: &AliasMap) -> LabelSet {
    raw.iter()
        .filter_map(|l| normalize_label(l.as_ref()))
        .map(|l| aliases.resolve(&l).to_string())
        .collect()
}

/// Which relaxation step produced the codes of a [`MatchResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass {
    Exact,
    Subset,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub codes: CodeSet,
    pub pass_used: Pass,
    /// Per-label codes, present only when the singleton pass ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singleton_codes: Option<BTreeMap<String, CodeSet>>,
}

/// Keyword mapping with search relaxation: exact keyword-set match first,
/// labels-subset-of-keywords only if that finds nothing, then optionally a
/// per-label search whose codes are merged in.
pub fn map_keywords(labels: &LabelSet, vocab: &Vocabulary, run_singleton: bool) -> Result<MatchResult> {
    if labels.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    let mut codes = vocab.codes_with_keyword_set(labels);
    let mut pass_used = Pass::Exact;
    if codes.is_empty() {
        codes = vocab.codes_with_keywords_superset(labels);
        pass_used = if codes.is_empty() { Pass::None } else { Pass::Subset };
    }
    debug!("keyword mapping {labels:?}: {} codes via {pass_used:?}", codes.len());

    let singleton_codes = run_singleton.then(|| {
        labels
            .iter()
            .map(|l| (l.clone(), vocab.codes_with_keyword(l)))
            .collect::<BTreeMap<_, _>>()
    });
    if let Some(per_label) = &singleton_codes {
        for found in per_label.values() {
            codes.extend(found.iter().cloned());
        }
    }

    Ok(MatchResult {
        codes,
        pass_used,
        singleton_codes,
    })
}

/// Description-based mapping: codes whose text names every label as a whole
/// word, plus per-label text hits when `run_singleton` is set.
pub fn map_descriptions(labels: &LabelSet, vocab: &Vocabulary, run_singleton: bool) -> Result<CodeSet> {
    if labels.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    let per_label: Vec<CodeSet> = labels
        .iter()
        .map(|l| vocab.codes_with_text_containing(l))
        .collect();
    let mut codes: CodeSet = per_label[0]
        .iter()
        .filter(|c| per_label[1..].iter().all(|s| s.contains(*c)))
        .cloned()
        .collect();
    if run_singleton {
        for found in per_label {
            codes.extend(found);
        }
    }
    Ok(codes)
}

pub fn reduce_intersection(a: &CodeSet, b: &CodeSet) -> CodeSet {
    a.intersection(b).cloned().collect()
}

/// For each label keeps the candidate whose text contains the label with the
/// fewest characters (ties: smallest notation). Codes whose text names no
/// label are dropped.
pub fn reduce_shortest_title(codes: &CodeSet, labels: &LabelSet, vocab: &Vocabulary) -> CodeSet {
    let texts: Vec<(&String, String)> = codes
        .iter()
        .filter_map(|c| Some((c, vocab.text(c)?.to_lowercase())))
        .collect();
    labels
        .iter()
        .filter_map(|label| {
            texts
                .iter()
                .filter(|(_, text)| text.contains(label.as_str()))
                .min_by(|(ca, ta), (cb, tb)| {
                    ta.chars()
                        .count()
                        .cmp(&tb.chars().count())
                        .then_with(|| ca.cmp(cb))
                })
                .map(|(code, _)| (*code).clone())
        })
        .collect()
}

/// A selector process run through `sh -c`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalCommand {
    pub command: String,
    pub timeout: Duration,
}

impl ExternalCommand {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

    pub fn new(command: impl Into<String>) -> Self {
        ExternalCommand {
            command: command.into(),
            timeout: Self::DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Runs the command with `input` on stdin and returns its stdout.
    pub(crate) fn run(&self, args: &[&str], input: &[u8]) -> std::result::Result<Vec<u8>, String> {
        let mut script = self.command.clone();
        for arg in args {
            script.push(' ');
            script.push_str(&shell_quote(arg));
        }
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&script)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| format!("cannot spawn {:?}: {e}", self.command))?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let input = input.to_vec();
        let writer = thread::spawn(move || {
            // a child that ignores stdin closes the pipe early; that is fine
            let _ = stdin.write_all(&input);
        });
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = thread::spawn(move || {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).map(|_| buf)
        });

        let status = match child.wait_timeout(self.timeout).map_err(|e| e.to_string())? {
            Some(status) => status,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(format!("{:?} timed out after {:?}", self.command, self.timeout));
            }
        };
        let _ = writer.join();
        let output = reader
            .join()
            .map_err(|_| "stdout reader panicked".to_string())?
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("{:?} exited with {status}", self.command));
        }
        Ok(output)
    }
}

fn shell_quote(arg: &str) -> String {
    format!("'{}'", arg.replace('\'', r"'\''"))
}

#[derive(Serialize)]
struct Candidate<'a> {
    code: &'a str,
    text: &'a str,
}

#[derive(Serialize)]
struct SelectorRequest<'a> {
    candidates: Vec<Candidate<'a>>,
}

#[derive(Deserialize)]
struct SelectorResponse {
    selected: Vec<String>,
}

/// Hands the candidates to an external selector and keeps only the selected
/// codes that were among the candidates.
pub fn reduce_external(codes: &CodeSet, vocab: &Vocabulary, cmd: &ExternalCommand) -> Result<CodeSet> {
    let request = SelectorRequest {
        candidates: codes
            .iter()
            .map(|c| Candidate {
                code: c,
                text: vocab.text(c).unwrap_or(""),
            })
            .collect(),
    };
    let input = serde_json::to_vec(&request)?;
    let output = cmd.run(&[], &input).map_err(Error::ExternalCommand)?;
    let response: SelectorResponse = serde_json::from_slice(&output)
        .map_err(|e| Error::ExternalCommand(format!("invalid selector output: {e}")))?;

    let (kept, dropped): (Vec<String>, Vec<String>) = response
        .selected
        .into_iter()
        .partition(|c| codes.contains(c));
    if !dropped.is_empty() {
        log::warn!("selector returned codes outside the candidate set: {dropped:?}");
    }
    Ok(kept.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocabulary::VocabEntry;
    use crate::notation::Notation;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn entry(code: &str, text: &str, kws: &[&str]) -> VocabEntry {
        VocabEntry::new(Notation::parse(code).unwrap(), text, kws)
    }

    const LISTING: [&str; 6] = ["11H(CRISPIN & CRISPINIAN)69", "34B11", "43A3746", "43C2181", "46E31", "73F215321"];

    fn vocab() -> Vocabulary {
        Vocabulary::from_entries([
            entry("11H(CRISPIN & CRISPINIAN)69", "dogs and/or wild animals do not touch the bodies", &["dog"]),
            entry("34B11", "dog", &["dog"]),
            entry("43A3746", "dogs (circus performance)", &["dog"]),
            entry("43C2181", "dogs (racing)", &["dog"]),
            entry("46E31", "dog (as messenger)", &["dog"]),
            entry("73F215321", "Peter sends a dog into the house to summon Simon to come out", &["dog"]),
            entry("94L53", "Hercules discovers Tiryns' famous dye: the muzzle of Hercules' dog is stained with purple after it has bitten into a mollusc", &["dog", "dye"]),
            entry("46C13141(+78)", "horse (+ man and animal)", &["horse", "human being", "riding"]),
            entry("25FF24(MUSK-DEER)(+78)", "hoofed animals: musk-deer - FF - fabulous animals (+ man and animal)", &["human being", "musk-deer"]),
            entry("43CC114(+423)", "hunter - CC - female hunter, huntress (+ hunting with horses)", &["horse"]),
            entry("2X1", "cat", &["pet"]),
            entry("1X1", "cab", &["pet"]),
        ])
    }

    #[test]
    fn normalize_labels_examples() {
        assert_eq!(normalize_labels(&["dog", "Dog", "dog"], &AliasMap::new()), set(&["dog"]));
        let mut aliases = AliasMap::new();
        aliases.insert("person", "human being");
        assert_eq!(normalize_labels(&["person", "horse"], &aliases), set(&["human being", "horse"]));
        assert!(normalize_labels::<&str>(&[], &aliases).is_empty());
    }

    #[test]
    fn coco_default_maps_person() {
        let labels = normalize_labels(&["Person"], &AliasMap::coco_default());
        assert_eq!(labels, set(&["human being"]));
    }

    #[test]
    fn exact_pass() {
        let r = map_keywords(&set(&["dog"]), &vocab(), false).unwrap();
        assert_eq!(r.codes, set(&LISTING));
        assert_eq!(r.pass_used, Pass::Exact);
        assert!(r.singleton_codes.is_none());
    }

    #[test]
    fn subset_pass_and_singleton_explosion() {
        let v = vocab();
        let labels = set(&["horse", "human being"]);
        let r = map_keywords(&labels, &v, false).unwrap();
        assert_eq!(r.codes, set(&["46C13141(+78)"]));
        assert_eq!(r.pass_used, Pass::Subset);

        let r = map_keywords(&labels, &v, true).unwrap();
        assert_eq!(r.pass_used, Pass::Subset);
        assert!(r.codes.contains("25FF24(MUSK-DEER)(+78)"));
        assert!(r.codes.contains("43CC114(+423)"));
        let per_label = r.singleton_codes.unwrap();
        assert_eq!(per_label["horse"], set(&["43CC114(+423)", "46C13141(+78)"]));
    }

    #[test]
    fn no_match_reports_none() {
        let r = map_keywords(&set(&["unicorn"]), &vocab(), false).unwrap();
        assert!(r.codes.is_empty());
        assert_eq!(r.pass_used, Pass::None);
        assert!(matches!(map_keywords(&LabelSet::new(), &vocab(), false), Err(Error::EmptyLabelSet)));
    }

    #[test]
    fn description_mapping() {
        let v = vocab();
        assert!(map_descriptions(&set(&["dog"]), &v, false).unwrap().contains("34B11"));
        assert_eq!(map_descriptions(&set(&["dye", "dog"]), &v, false).unwrap(), set(&["94L53"]));
        assert!(map_descriptions(&set(&["qqq"]), &v, false).unwrap().is_empty());
        let single = map_descriptions(&set(&["dye", "messenger"]), &v, true).unwrap();
        assert_eq!(single, set(&["46E31", "94L53"]));
        assert!(matches!(map_descriptions(&LabelSet::new(), &v, false), Err(Error::EmptyLabelSet)));
    }

    #[test]
    fn intersection_reducer() {
        let v = vocab();
        let keyword = set(&LISTING);
        let described = map_descriptions(&set(&["dog"]), &v, false).unwrap();
        let both = reduce_intersection(&keyword, &described);
        assert!(both.contains("34B11"));
        assert!(both.is_subset(&keyword));
        assert_eq!(reduce_intersection(&keyword, &keyword), keyword);
        assert!(reduce_intersection(&keyword, &CodeSet::new()).is_empty());
    }

    #[test]
    fn shortest_title_reducer() {
        let v = vocab();
        let labels = set(&["dog"]);
        assert_eq!(reduce_shortest_title(&set(&LISTING), &labels, &v), set(&["34B11"]));
        assert_eq!(reduce_shortest_title(&set(&["46E31"]), &labels, &v), set(&["46E31"]));
        // "cat" and "cab" tie on length; the smaller notation wins
        assert_eq!(reduce_shortest_title(&set(&["2X1", "1X1"]), &set(&["ca"]), &v), set(&["1X1"]));
        // codes naming no label are dropped
        assert!(reduce_shortest_title(&set(&["2X1"]), &labels, &v).is_empty());
    }

    #[test]
    fn external_reducer_identity_and_guard() {
        let v = vocab();
        let codes = set(&LISTING);
        let echo = ExternalCommand::new(
            r#"python3 -c 'import json,sys; d=json.load(sys.stdin); print(json.dumps({"selected":[c["code"] for c in d["candidates"]]}))'"#,
        );
        assert_eq!(reduce_external(&codes, &v, &echo).unwrap(), codes);

        let stub = ExternalCommand::new(r#"cat >/dev/null; echo '{"selected":["34B11","99Z99"]}'"#);
        assert_eq!(reduce_external(&codes, &v, &stub).unwrap(), set(&["34B11"]));
    }

    #[test]
    fn external_reducer_failures() {
        let v = vocab();
        let codes = set(&LISTING);
        for cmd in [
            ExternalCommand::new("exit 3"),
            ExternalCommand::new("cat >/dev/null; echo not-json"),
            ExternalCommand::new("sleep 5").with_timeout(Duration::from_millis(100)),
        ] {
            assert!(matches!(reduce_external(&codes, &v, &cmd), Err(Error::ExternalCommand(_))));
        }
    }

    #[test]
    fn label_document_contract() {
        let doc = LabelDocument::from_json(
            r#"{"image_id":"h.jpg","labels":["Horse","horse","person"],
                "detections":[{"label":"horse","confidence":0.9,"bbox":[1,2,3,4]},
                              {"label":"horse","confidence":0.8,"bbox":[5,6,7,8]}]}"#,
            None,
        )
        .unwrap();
        assert_eq!(doc.labels, set(&["horse", "person"]));
        assert_eq!(doc.detections.as_ref().unwrap().len(), 2);

        let doc = LabelDocument::from_json(r#"{"labels":[]}"#, Some("x.jpg")).unwrap();
        assert_eq!(doc.image_id, "x.jpg");
        assert!(doc.labels.is_empty());

        assert!(LabelDocument::from_json(
            r#"{"image_id":"a","labels":["dog"],"detections":[{"label":"cat","confidence":0.5,"bbox":[0,0,1,1]}]}"#,
            None
        )
        .is_err());
        assert!(LabelDocument::from_json(
            r#"{"image_id":"a","labels":["dog"],"detections":[{"label":"dog","confidence":1.5,"bbox":[0,0,1,1]}]}"#,
            None
        )
        .is_err());
        assert!(LabelDocument::from_json(r#"{"labels":["dog"]}"#, None).is_err());
    }
}
