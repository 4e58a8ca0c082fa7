//! Pairwise similarity between code sets.
//!
//! Three measures are provided:
//!
//! * [`hierarchy_score`] sums [`hierarchy_relation`] over every pair of codes,
//!   crediting identical codes 1.0, parent/child/sibling pairs 0.5 and pairs
//!   two steps from a shared ancestor 0.25.
//! * [`idf_overlap`] sums `idf(c)^impact` over shared codes, where
//!   `idf(c) = ln(N / n_c)`. Raising each term to `impact > 1` lets rare codes
//!   outweigh common ones.
//! * [`jaccard`] is `|a ∩ b| / |a ∪ b|`.

use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::notation::{hierarchy_relation, Notation};
use crate::CodeSet;

/// Document frequencies of codes over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    n_docs: u64,
    doc_freq: HashMap<String, u64>,
    /// Logarithm base; `None` is the natural logarithm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    log_base: Option<f64>,
}

impl IdfTable {
    pub fn new(n_docs: u64) -> Self {
        IdfTable {
            n_docs,
            doc_freq: HashMap::new(),
            log_base: None,
        }
    }

    /// Counts document frequencies over the given code sets.
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a CodeSet>) -> Self {
        let mut table = IdfTable::new(0);
        for codes in docs {
            table.n_docs += 1;
            for c in codes {
                *table.doc_freq.entry(c.clone()).or_default() += 1;
            }
        }
        table
    }

    /// Same frequencies, logarithms taken in `base`.
    pub fn with_log_base(mut self, base: f64) -> Self {
        self.log_base = Some(base);
        self
    }

    /// Sets `n_c` for a code. Panics if it is zero or exceeds `N`.
    pub fn set_doc_freq(&mut self, code: impl Into<String>, n_c: u64) {
        assert!(n_c >= 1 && n_c <= self.n_docs, "document frequency {n_c} outside 1..={}", self.n_docs);
        self.doc_freq.insert(code.into(), n_c);
    }

    pub fn n_docs(&self) -> u64 {
        self.n_docs
    }

    pub fn doc_freq(&self, code: &str) -> Option<u64> {
        self.doc_freq.get(code).copied()
    }

    pub fn idf(&self, code: &str) -> Result<f64> {
        let n_c = self
            .doc_freq(code)
            .ok_or_else(|| Error::UnknownCode(code.to_string()))?;
        Ok(self.weight(n_c))
    }

    pub(crate) fn weight(&self, n_c: u64) -> f64 {
        let ln = (self.n_docs as f64 / n_c as f64).ln();
        match self.log_base {
            Some(base) => ln / base.ln(),
            None => ln,
        }
    }
}

pub fn jaccard(a: &CodeSet, b: &CodeSet) -> f64 {
    let shared = a.intersection(b).count();
    let union = a.len() + b.len() - shared;
    if union == 0 {
        return 0.0;
    }
    shared as f64 / union as f64
}

/// `Σ idf(c)^impact` over `q ∩ d`. Shared codes missing from the table add
/// nothing and are logged.
pub fn idf_overlap(q: &CodeSet, d: &CodeSet, table: &IdfTable, impact: f64) -> f64 {
    q.intersection(d)
        .map(|c| match table.idf(c) {
            Ok(w) => w.powf(impact),
            Err(_) => {
                warn!("code {c} has no document frequency, ignored");
                0.0
            }
        })
        .sum()
}

/// Sum of [`hierarchy_relation`] over all pairs of `q × d`.
pub fn hierarchy_score_parsed(q: &[Notation], d: &[Notation]) -> f64 {
    q.iter()
        .flat_map(|x| d.iter().map(move |y| hierarchy_relation(x, y)))
        .sum()
}

pub fn hierarchy_score(q: &CodeSet, d: &CodeSet) -> Result<f64> {
    let q = parse_all(q)?;
    let d = parse_all(d)?;
    Ok(hierarchy_score_parsed(&q, &d))
}

pub(crate) fn parse_all(codes: &CodeSet) -> Result<Vec<Notation>> {
    codes.iter().map(|c| Notation::parse(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn table(n: u64, freqs: &[(&str, u64)]) -> IdfTable {
        let mut t = IdfTable::new(n);
        for (c, f) in freqs {
            t.set_doc_freq(*c, *f);
        }
        t
    }

    #[test]
    fn jaccard_examples() {
        let a = set(&["34B11", "25F24"]);
        assert_eq!(jaccard(&a, &a), 1.0);
        assert_eq!(jaccard(&a, &set(&["1", "2"])), 0.0);
        assert_eq!(jaccard(&set(&["34B11"]), &set(&["34B11", "46C13141(+78)"])), 0.5);
        assert_eq!(jaccard(&CodeSet::new(), &CodeSet::new()), 0.0);
    }

    #[test]
    fn idf_examples() {
        let t = table(4, &[("a", 2), ("b", 4)]);
        assert!((t.idf("a").unwrap() - std::f64::consts::LN_2).abs() < 1e-9);
        assert_eq!(t.idf("b").unwrap(), 0.0);
        assert!(matches!(t.idf("zz"), Err(Error::UnknownCode(_))));
        let t = table(87_000, &[("rare", 1)]);
        assert!((t.idf("rare").unwrap() - 11.3737).abs() < 1e-3);
    }

    #[test]
    fn idf_overlap_examples() {
        // idf(c1) = ln 2, idf(c2) = ln 4
        let t = table(8, &[("c1", 4), ("c2", 2), ("c3", 1)]);
        let q = set(&["c1", "c2"]);
        assert_eq!(idf_overlap(&q, &set(&["c3"]), &t, 1.0), 0.0);
        assert!((idf_overlap(&q, &q, &t, 1.0) - 2.079_441_541_679_836).abs() < 1e-9);
        let squared = idf_overlap(&q, &q, &t, 2.0);
        assert!((squared - 2.402_265_069_591_007).abs() < 1e-6);
        let rare_share = t.idf("c2").unwrap().powi(2) / squared;
        assert!((rare_share - 0.8).abs() < 1e-12);
        assert_eq!(idf_overlap(&q, &q, &t, 0.0), 2.0);
    }

    #[test]
    fn idf_overlap_skips_unknown_codes() {
        let t = table(2, &[("a", 1)]);
        assert_eq!(idf_overlap(&set(&["a", "x"]), &set(&["a", "x"]), &t, 1.0), 2f64.ln());
    }

    #[test]
    fn hierarchy_examples() {
        let q = set(&["34B11"]);
        assert_eq!(hierarchy_score(&q, &q).unwrap(), 1.0);
        let hercules = set(&["94L5", "94L8(CLUB)", "94L8(LION'S SKIN)"]);
        assert_eq!(hierarchy_score(&set(&["94L53"]), &hercules).unwrap(), 1.0);
        assert_eq!(hierarchy_score(&q, &hercules).unwrap(), 0.0);
        assert!(hierarchy_score(&set(&["((("]), &q).is_err());
    }

    #[test]
    fn log_base_scales_uniformly() {
        let t = table(10, &[("a", 1)]);
        let t10 = t.clone().with_log_base(10.0);
        assert!((t10.idf("a").unwrap() - 1.0).abs() < 1e-15);
        assert!((t.idf("a").unwrap() / t10.idf("a").unwrap() - 10f64.ln()).abs() < 1e-12);
    }
}
