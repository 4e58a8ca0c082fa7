//! Forward-chaining inference of abstract codes from co-occurring labels and
//! codes.
//!
//! Rules are kept in a plain JSON array so curators can audit them:
//!
//! ```json
//! [{"id": "hunting", "if_labels": ["deer", "dog", "horse", "human being"],
//!   "if_codes": [], "then_codes": ["43C1"], "note": "hunting party"}]
//! ```
//!
//! A rule fires when all of its labels were detected and all of its codes are
//! already in the working set. Firing only ever adds codes, so repeated passes
//! reach a fixpoint.

use std::collections::{BTreeSet, HashSet};
use std::io::Read;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::LabelSet;
use crate::notation::Notation;
use crate::vocabulary::normalize_keyword;
use crate::CodeSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub id: String,
    #[serde(default)]
    pub if_labels: BTreeSet<String>,
    #[serde(default)]
    pub if_codes: CodeSet,
    pub then_codes: CodeSet,
    #[serde(default)]
    pub note: String,
}

impl Rule {
    fn validate(&mut self) -> Result<()> {
        if self.if_labels.is_empty() && self.if_codes.is_empty() {
            return Err(Error::RuleFormat(format!("rule {:?} has no antecedents", self.id)));
        }
        if self.then_codes.is_empty() {
            return Err(Error::RuleFormat(format!("rule {:?} has no consequents", self.id)));
        }
        for code in self.if_codes.iter().chain(&self.then_codes) {
            Notation::parse(code)
                .map_err(|e| Error::RuleFormat(format!("rule {:?}: {e}", self.id)))?;
        }
        self.if_labels = self
            .if_labels
            .iter()
            .filter_map(|l| normalize_keyword(l))
            .collect();
        Ok(())
    }

    pub fn fires(&self, codes: &CodeSet, labels: &LabelSet) -> bool {
        self.if_labels.is_subset(labels) && self.if_codes.is_subset(codes)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>) -> Result<RuleSet> {
        let mut seen = HashSet::new();
        let mut validated = Vec::with_capacity(rules.len());
        for mut rule in rules {
            rule.validate()?;
            if !seen.insert(rule.id.clone()) {
                return Err(Error::RuleFormat(format!("duplicate rule id {:?}", rule.id)));
            }
            validated.push(rule);
        }
        Ok(RuleSet { rules: validated })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

pub fn load_rules<R: Read>(source: R) -> Result<RuleSet> {
    let rules: Vec<Rule> =
        serde_json::from_reader(source).map_err(|e| Error::RuleFormat(e.to_string()))?;
    RuleSet::new(rules)
}

/// Outcome of a fixpoint run, with the firing trace.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Inference {
    pub codes: CodeSet,
    /// `(rule id, codes it added)` in firing order.
    pub fired: Vec<(String, CodeSet)>,
    /// Passes over the rule list that added at least one code.
    pub productive_passes: usize,
}

impl Inference {
    /// Codes present in the output but not in the input.
    pub fn added(&self) -> CodeSet {
        self.fired.iter().flat_map(|(_, c)| c.iter().cloned()).collect()
    }
}

pub fn infer_traced(codes: &CodeSet, labels: &LabelSet, rules: &RuleSet) -> Inference {
    let mut current = codes.clone();
    let mut fired = Vec::new();
    let mut productive_passes = 0;
    loop {
        let mut changed = false;
        for rule in &rules.rules {
            if !rule.fires(&current, labels) {
                continue;
            }
            let new: CodeSet = rule.then_codes.difference(&current).cloned().collect();
            if new.is_empty() {
                continue;
            }
            debug!("rule {} adds {new:?}", rule.id);
            current.extend(new.iter().cloned());
            fired.push((rule.id.clone(), new));
            changed = true;
        }
        if !changed {
            break;
        }
        productive_passes += 1;
    }
    Inference {
        codes: current,
        fired,
        productive_passes,
    }
}

/// `codes` together with everything the rules derive from them and `labels`.
pub fn infer(codes: &CodeSet, labels: &LabelSet, rules: &RuleSet) -> CodeSet {
    infer_traced(codes, labels, rules).codes
}
