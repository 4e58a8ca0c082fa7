//! Annotated image corpus, its posting lists and top-k recommendation.
//!
//! Codes are interned in lexicographic order, so a code id sorts the same way
//! as its notation and per-document code lists iterate in the same order as a
//! `BTreeSet` of strings. Two posting lists are kept per code:
//!
//! * exact postings: documents annotated with the code, used for IDF and
//!   Jaccard candidates and scores;
//! * ancestor postings: documents annotated with the code, one of its children
//!   or one of its grandchildren. Any pair of codes with a non-zero hierarchy
//!   relation meets at a common ancestor at most two steps above both, so the
//!   union of ancestor postings over a query code and its two nearest
//!   ancestors covers every document that can score.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::notation::{relation_score, split_outside_brackets, Notation};
use crate::similarity::IdfTable;
use crate::CodeSet;

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub image_id: String,
    pub codes: CodeSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// `{"<image filename>": ["<code>", ...], ...}`
    JsonMap,
    /// `image_id<TAB>space separated codes`
    Tsv,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json-map" => Ok(CorpusFormat::JsonMap),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(Error::Config(format!("unknown corpus format {other:?}"))),
        }
    }
}

/// Reads corpus annotations. Invalid codes are dropped with a warning and
/// documents left without codes are skipped. Returns the documents and the
/// warnings.
pub fn ingest_corpus<R: BufRead>(mut source: R, format: CorpusFormat) -> Result<(Vec<CorpusDoc>, Vec<String>)> {
    let raw: Vec<(String, Vec<String>)> = match format {
        CorpusFormat::JsonMap => {
            let mut text = String::new();
            source.read_to_string(&mut text)?;
            let map: BTreeMap<String, Vec<String>> =
                serde_json::from_str(&text).map_err(|e| Error::format(e.line(), e.to_string()))?;
            map.into_iter().collect()
        }
        CorpusFormat::Tsv => {
            let mut rows = Vec::new();
            for (lineno, line) in source.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let (id, codes) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::format(lineno + 1, "expected image_id<TAB>codes"))?;
                rows.push((
                    id.trim().to_string(),
                    split_outside_brackets(codes, char::is_whitespace),
                ));
            }
            rows
        }
    };

    let mut warnings = Vec::new();
    let mut docs = Vec::with_capacity(raw.len());
    for (image_id, codes) in raw {
        let mut valid = CodeSet::new();
        for code in codes {
            let code = code.trim();
            match Notation::parse(code) {
                Ok(_) => {
                    valid.insert(code.to_string());
                }
                Err(e) => warnings.push(format!("{image_id}: dropped code, {e}")),
            }
        }
        if valid.is_empty() {
            warnings.push(format!("{image_id}: skipped, no valid codes"));
            continue;
        }
        docs.push(CorpusDoc {
            image_id,
            codes: valid,
        });
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok((docs, warnings))
}

/// Recommendation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Hierarchy,
    Idf,
    Jaccard,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Hierarchy, Method::Idf, Method::Jaccard];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Hierarchy => "hierarchy",
            Method::Idf => "idf",
            Method::Jaccard => "jaccard",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hierarchy" => Ok(Method::Hierarchy),
            "idf" => Ok(Method::Idf),
            "jaccard" => Ok(Method::Jaccard),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// One scoring term behind a recommendation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub query_code: String,
    pub matched_code: String,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub method: Method,
    pub image_id: String,
    pub score: f64,
    /// Contributions sum to `score`. For Jaccard every shared code
    /// contributes `1 / |q ∪ d|`.
    pub explanation: Vec<Contribution>,
}

/// Top-1 per method; `None` when a method found no positive-score document.
pub type MethodRecommendations = BTreeMap<Method, Option<Recommendation>>;

type CodeId = u32;
type DocId = u32;

/// `[self, parent, grandparent]` ids; a slot is `None` when the ancestor does
/// not exist or is not interned.
type Lineage = [Option<CodeId>; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    /// Sorted by image id.
    docs: Vec<CorpusDoc>,
    doc_ids: HashMap<String, DocId>,
    /// Interned notations: corpus codes and their two nearest ancestors.
    codes: Vec<String>,
    code_ids: HashMap<String, CodeId>,
    parent: Vec<Option<CodeId>>,
    doc_codes: Vec<Vec<CodeId>>,
    postings: Vec<Vec<DocId>>,
    ancestor_postings: Vec<Vec<DocId>>,
    idf: IdfTable,
    idf_weight: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format_version: u32,
    docs: Vec<CorpusDoc>,
    codes: Vec<String>,
    parent: Vec<Option<CodeId>>,
    doc_codes: Vec<Vec<CodeId>>,
    postings: Vec<Vec<DocId>>,
    ancestor_postings: Vec<Vec<DocId>>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl CorpusIndex {
    pub fn build(mut docs: Vec<CorpusDoc>) -> Result<CorpusIndex> {
        docs.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        if let Some(w) = docs.windows(2).find(|w| w[0].image_id == w[1].image_id) {
            return Err(Error::DuplicateImageId(w[0].image_id.clone()));
        }

        // corpus codes plus their parents and grandparents
        let mut interned: BTreeMap<String, Option<String>> = BTreeMap::new();
        let mut expanded: HashSet<&str> = HashSet::new();
        for code in docs.iter().flat_map(|d| &d.codes) {
            // A code first seen as an ancestor still needs its own ancestors.
            if !expanded.insert(code) {
                continue;
            }
            let n = Notation::parse(code)?;
            for a in std::iter::once(n.clone()).chain(n.ancestors(2)) {
                interned
                    .entry(a.to_string())
                    .or_insert_with(|| a.parent().map(|p| p.to_string()));
            }
        }

        let codes: Vec<String> = interned.keys().cloned().collect();
        let code_ids: HashMap<String, CodeId> = codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i as CodeId))
            .collect();
        let parent: Vec<Option<CodeId>> = interned
            .values()
            .map(|p| p.as_ref().and_then(|p| code_ids.get(p).copied()))
            .collect();
        let doc_codes: Vec<Vec<CodeId>> = docs
            .iter()
            .map(|d| d.codes.iter().map(|c| code_ids[c]).collect())
            .collect();

        Ok(Self::assemble(docs, codes, parent, doc_codes))
    }

    fn assemble(
        docs: Vec<CorpusDoc>,
        codes: Vec<String>,
        parent: Vec<Option<CodeId>>,
        doc_codes: Vec<Vec<CodeId>>,
    ) -> CorpusIndex {
        let n_codes = codes.len();
        let mut postings: Vec<Vec<DocId>> = vec![Vec::new(); n_codes];
        let mut ancestor_postings: Vec<Vec<DocId>> = vec![Vec::new(); n_codes];
        for (doc, ids) in doc_codes.iter().enumerate() {
            let doc = doc as DocId;
            for &c in ids {
                postings[c as usize].push(doc);
                for a in lineage_of(&parent, c).into_iter().flatten() {
                    let list = &mut ancestor_postings[a as usize];
                    if list.last() != Some(&doc) {
                        list.push(doc);
                    }
                }
            }
        }
        Self::finish(docs, codes, parent, doc_codes, postings, ancestor_postings)
    }

    fn finish(
        docs: Vec<CorpusDoc>,
        codes: Vec<String>,
        parent: Vec<Option<CodeId>>,
        doc_codes: Vec<Vec<CodeId>>,
        postings: Vec<Vec<DocId>>,
        ancestor_postings: Vec<Vec<DocId>>,
    ) -> CorpusIndex {
        let mut idf = IdfTable::new(docs.len() as u64);
        for (c, list) in codes.iter().zip(&postings) {
            if !list.is_empty() {
                idf.set_doc_freq(c.clone(), list.len() as u64);
            }
        }
        let doc_ids = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.image_id.clone(), i as DocId))
            .collect();
        let code_ids = codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i as CodeId))
            .collect();
        let mut index = CorpusIndex {
            docs,
            doc_ids,
            codes,
            code_ids,
            parent,
            doc_codes,
            postings,
            ancestor_postings,
            idf,
            idf_weight: Vec::new(),
        };
        index.refresh_weights();
        index
    }

    fn refresh_weights(&mut self) {
        self.idf_weight = self
            .postings
            .iter()
            .map(|p| if p.is_empty() { 0.0 } else { self.idf.weight(p.len() as u64) })
            .collect();
    }

    /// Same index with IDF logarithms taken in `base`.
    pub fn with_log_base(mut self, base: f64) -> Self {
        self.idf = self.idf.with_log_base(base);
        self.refresh_weights();
        self
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[CorpusDoc] {
        &self.docs
    }

    pub fn doc(&self, image_id: &str) -> Option<&CorpusDoc> {
        self.doc_ids.get(image_id).map(|&i| &self.docs[i as usize])
    }

    pub fn idf(&self) -> &IdfTable {
        &self.idf
    }

    /// Image ids annotated with exactly `code`.
    pub fn postings(&self, code: &str) -> Vec<&str> {
        self.image_ids(self.code_ids.get(code).map(|&c| &self.postings[c as usize]))
    }

    /// Image ids annotated with `code`, a child of it or a grandchild of it.
    pub fn ancestor_postings(&self, code: &str) -> Vec<&str> {
        self.image_ids(self.code_ids.get(code).map(|&c| &self.ancestor_postings[c as usize]))
    }

    fn image_ids(&self, list: Option<&Vec<DocId>>) -> Vec<&str> {
        list.map(|l| l.iter().map(|&d| self.docs[d as usize].image_id.as_str()).collect())
            .unwrap_or_default()
    }

    fn query_lineage(&self, n: &Notation) -> Lineage {
        let mut lineage = [self.code_ids.get(n.as_str()).copied(), None, None];
        for (slot, a) in lineage[1..].iter_mut().zip(n.ancestors(2)) {
            *slot = self.code_ids.get(a.as_str()).copied();
        }
        lineage
    }

    /// Ranked recommendations for the query codes, at most `k`, scored with
    /// `method`. `impact` is the per-code IDF exponent; `exclude` removes one
    /// image (typically the query image itself) from the results.
    pub fn recommend(
        &self,
        query: &CodeSet,
        method: Method,
        k: usize,
        impact: f64,
        exclude: Option<&str>,
    ) -> Result<Vec<Recommendation>> {
        if query.is_empty() {
            return Err(Error::EmptyQuery);
        }
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if impact.is_nan() || impact < 0.0 {
            return Err(Error::Config(format!("idf impact must be non-negative, got {impact}")));
        }
        let parsed: Vec<Notation> = query.iter().map(|c| Notation::parse(c)).collect::<Result<_>>()?;
        let excluded = exclude.and_then(|id| self.doc_ids.get(id).copied());

        let mut scored: Vec<(DocId, f64)> = match method {
            Method::Hierarchy => self.score_hierarchy(&parsed),
            Method::Idf | Method::Jaccard => self.score_overlap(&parsed, method, impact),
        };
        scored.retain(|&(d, s)| s > 0.0 && Some(d) != excluded);
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);

        Ok(scored
            .into_iter()
            .map(|(doc, score)| self.explain(&parsed, doc, score, method, impact))
            .collect())
    }

    /// Top-1 for each of the three methods.
    pub fn recommend_all(&self, query: &CodeSet, impact: f64, exclude: Option<&str>) -> Result<MethodRecommendations> {
        Method::ALL
            .into_iter()
            .map(|m| Ok((m, self.recommend(query, m, 1, impact, exclude)?.into_iter().next())))
            .collect()
    }

    fn lineage(&self, code: CodeId) -> Lineage {
        lineage_of(&self.parent, code)
    }

    fn score_hierarchy(&self, query: &[Notation]) -> Vec<(DocId, f64)> {
        let lineages: Vec<Lineage> = query.iter().map(|n| self.query_lineage(n)).collect();
        let mut seen = vec![false; self.docs.len()];
        let mut candidates = Vec::new();
        for a in lineages.iter().flatten().flatten() {
            for &d in &self.ancestor_postings[*a as usize] {
                if !std::mem::replace(&mut seen[d as usize], true) {
                    candidates.push(d);
                }
            }
        }
        candidates
            .into_iter()
            .map(|d| {
                let score = lineages
                    .iter()
                    .flat_map(|q| {
                        self.doc_codes[d as usize]
                            .iter()
                            .map(move |&c| lineage_relation(q, &self.lineage(c)))
                    })
                    .sum();
                (d, score)
            })
            .collect()
    }

    fn score_overlap(&self, query: &[Notation], method: Method, impact: f64) -> Vec<(DocId, f64)> {
        let mut shared = vec![0u32; self.docs.len()];
        let mut idf_sum = vec![0f64; self.docs.len()];
        let mut candidates = Vec::new();
        for n in query {
            let Some(&c) = self.code_ids.get(n.as_str()) else { continue };
            let w = self.idf_weight[c as usize].powf(impact);
            for &d in &self.postings[c as usize] {
                if shared[d as usize] == 0 {
                    candidates.push(d);
                }
                shared[d as usize] += 1;
                idf_sum[d as usize] += w;
            }
        }
        let q_len = query.len();
        candidates
            .into_iter()
            .map(|d| {
                let score = match method {
                    Method::Idf => idf_sum[d as usize],
                    _ => {
                        let s = shared[d as usize] as usize;
                        let union = q_len + self.doc_codes[d as usize].len() - s;
                        s as f64 / union as f64
                    }
                };
                (d, score)
            })
            .collect()
    }

    fn explain(&self, query: &[Notation], doc: DocId, score: f64, method: Method, impact: f64) -> Recommendation {
        let doc_codes = &self.doc_codes[doc as usize];
        let mut explanation = Vec::new();
        match method {
            Method::Hierarchy => {
                for q in query {
                    let ql = self.query_lineage(q);
                    for &c in doc_codes {
                        let r = lineage_relation(&ql, &self.lineage(c));
                        if r > 0.0 {
                            explanation.push(Contribution {
                                query_code: q.to_string(),
                                matched_code: self.codes[c as usize].clone(),
                                contribution: r,
                            });
                        }
                    }
                }
            }
            Method::Idf | Method::Jaccard => {
                let shared: Vec<CodeId> = query
                    .iter()
                    .filter_map(|q| self.code_ids.get(q.as_str()).copied())
                    .filter(|c| doc_codes.binary_search(c).is_ok())
                    .collect();
                let union = query.len() + doc_codes.len() - shared.len();
                for c in shared {
                    let contribution = match method {
                        Method::Idf => self.idf_weight[c as usize].powf(impact),
                        _ => 1.0 / union as f64,
                    };
                    let code = self.codes[c as usize].clone();
                    explanation.push(Contribution {
                        query_code: code.clone(),
                        matched_code: code,
                        contribution,
                    });
                }
            }
        }
        Recommendation {
            method,
            image_id: self.docs[doc as usize].image_id.clone(),
            score,
            explanation,
        }
    }

    pub fn save<W: Write>(&self, out: W) -> Result<()> {
        let file = IndexFile {
            format_version: INDEX_FORMAT_VERSION,
            docs: self.docs.clone(),
            codes: self.codes.clone(),
            parent: self.parent.clone(),
            doc_codes: self.doc_codes.clone(),
            postings: self.postings.clone(),
            ancestor_postings: self.ancestor_postings.clone(),
        };
        serde_json::to_writer(out, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(mut source: R) -> Result<CorpusIndex> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        let probe: VersionProbe = serde_json::from_slice(&bytes)?;
        if probe.format_version != INDEX_FORMAT_VERSION {
            return Err(Error::IndexVersion {
                found: probe.format_version,
                expected: INDEX_FORMAT_VERSION,
            });
        }
        let f: IndexFile = serde_json::from_slice(&bytes)?;
        let n_codes = f.codes.len();
        let consistent = f.doc_codes.len() == f.docs.len()
            && f.parent.len() == n_codes
            && f.postings.len() == n_codes
            && f.ancestor_postings.len() == n_codes
            && f.parent.iter().flatten().all(|&p| (p as usize) < n_codes)
            && f.doc_codes.iter().flatten().all(|&c| (c as usize) < n_codes)
            && f.postings
                .iter()
                .chain(&f.ancestor_postings)
                .flatten()
                .all(|&d| (d as usize) < f.docs.len());
        if !consistent {
            return Err(Error::format(0, "index cache is internally inconsistent"));
        }
        Ok(Self::finish(f.docs, f.codes, f.parent, f.doc_codes, f.postings, f.ancestor_postings))
    }
}

fn lineage_of(parent: &[Option<CodeId>], code: CodeId) -> Lineage {
    let p = parent[code as usize];
    let g = p.and_then(|p| parent[p as usize]);
    [Some(code), p, g]
}

/// Hierarchy relation from interned lineages: the nearest shared ancestor
/// within two steps decides the bucket.
fn lineage_relation(a: &Lineage, b: &Lineage) -> f64 {
    let mut best = usize::MAX;
    for (i, x) in a.iter().enumerate() {
        let Some(x) = x else { continue };
        for (j, y) in b.iter().enumerate() {
            if Some(*x) == *y {
                best = best.min(i.max(j));
            }
        }
    }
    relation_score(best)
}
