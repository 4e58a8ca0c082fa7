//! Detect, map, infer, reduce and recommend, in that order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus_index::{CorpusIndex, MethodRecommendations};
use crate::error::{Error, Result};
use crate::matcher::{self, AliasMap, ExternalCommand, LabelDocument, LabelSet, Pass};
use crate::rules::{self, RuleSet};
use crate::vocabulary::{load_vocabulary, VocabFormat, Vocabulary};
use crate::CodeSet;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "ICONMAP_CONFIG";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    #[default]
    None,
    Intersection,
    ShortestTitle,
    External,
}

impl std::str::FromStr for Reducer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Reducer::None),
            "intersection" => Ok(Reducer::Intersection),
            "shortest_title" => Ok(Reducer::ShortestTitle),
            "external" => Ok(Reducer::External),
            other => Err(Error::Config(format!("unknown reducer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub vocab_path: Option<PathBuf>,
    pub rules_path: Option<PathBuf>,
    /// Defaults to the shipped COCO alias map.
    pub alias_map_path: Option<PathBuf>,
    pub corpus_index_path: Option<PathBuf>,
    pub run_singleton: bool,
    pub reducer: Reducer,
    pub external_cmd: Option<String>,
    pub external_timeout_secs: u64,
    pub idf_impact: f64,
    pub detector_cmd: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            vocab_path: None,
            rules_path: None,
            alias_map_path: None,
            corpus_index_path: None,
            run_singleton: false,
            reducer: Reducer::None,
            external_cmd: None,
            external_timeout_secs: ExternalCommand::DEFAULT_TIMEOUT.as_secs(),
            idf_impact: 1.0,
            detector_cmd: None,
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config. Relative paths in it are taken relative to the
    /// directory holding the file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            for p in [
                &mut cfg.vocab_path,
                &mut cfg.rules_path,
                &mut cfg.alias_map_path,
                &mut cfg.corpus_index_path,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reducer == Reducer::External && self.external_cmd.is_none() {
            return Err(Error::Config("reducer \"external\" requires external_cmd".into()));
        }
        if self.idf_impact.is_nan() || self.idf_impact < 0.0 {
            return Err(Error::Config(format!("idf_impact must be non-negative, got {}", self.idf_impact)));
        }
        Ok(())
    }

    fn external_command(&self) -> Option<ExternalCommand> {
        self.external_cmd
            .as_ref()
            .map(|c| ExternalCommand::new(c.clone()).with_timeout(Duration::from_secs(self.external_timeout_secs)))
    }
}

/// Pipeline stage names, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Load,
    Detect,
    Normalize,
    Map,
    Infer,
    Reduce,
    Recommend,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Load => "load",
            Stage::Detect => "detect",
            Stage::Normalize => "normalize",
            Stage::Map => "map",
            Stage::Infer => "infer",
            Stage::Reduce => "reduce",
            Stage::Recommend => "recommend",
        };
        f.write_str(s)
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage}: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub image_id: String,
    pub labels: LabelSet,
    pub pass_used: Pass,
    pub codes_detected: CodeSet,
    pub codes_inferred: CodeSet,
    pub codes_final: CodeSet,
    pub recommendations: MethodRecommendations,
    pub stages: Vec<Stage>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum PipelineInput {
    Labels(LabelDocument),
    Image(PathBuf),
}

/// Loaded resources plus configuration.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    vocab: Vocabulary,
    rules: RuleSet,
    aliases: AliasMap,
    index: Option<CorpusIndex>,
    load_warnings: Vec<String>,
}

fn vocab_format(path: &Path) -> VocabFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") => VocabFormat::Tsv,
        _ => VocabFormat::Jsonl,
    }
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        vocab: Vocabulary,
        rules: RuleSet,
        aliases: AliasMap,
        index: Option<CorpusIndex>,
    ) -> Result<Pipeline> {
        config.validate()?;
        Ok(Pipeline {
            config,
            vocab,
            rules,
            aliases,
            index,
            load_warnings: Vec::new(),
        })
    }

    /// Loads every resource named in `config`. The corpus index is only read
    /// when a path is given.
    pub fn load(config: PipelineConfig) -> Result<Pipeline> {
        config.validate()?;
        let vocab_path = config
            .vocab_path
            .as_ref()
            .ok_or_else(|| Error::Config("vocab_path is required".into()))?;
        let (vocab, report) = load_vocabulary(BufReader::new(File::open(vocab_path)?), vocab_format(vocab_path))?;
        let rules = match &config.rules_path {
            Some(p) => rules::load_rules(BufReader::new(File::open(p)?))?,
            None => RuleSet::default(),
        };
        let aliases = match &config.alias_map_path {
            Some(p) => AliasMap::from_path(p)?,
            None => AliasMap::coco_default(),
        };
        let index = match &config.corpus_index_path {
            Some(p) => Some(CorpusIndex::load(BufReader::new(File::open(p)?))?),
            None => None,
        };
        let mut pipeline = Pipeline::new(config, vocab, rules, aliases, index)?;
        pipeline.load_warnings = report.warnings;
        Ok(pipeline)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn index(&self) -> Option<&CorpusIndex> {
        self.index.as_ref()
    }

    fn detect(&self, image: &Path) -> Result<LabelDocument> {
        let cmd = self
            .config
            .detector_cmd
            .as_ref()
            .ok_or_else(|| Error::Config("an image input requires detector_cmd".into()))?;
        let image_str = image
            .to_str()
            .ok_or_else(|| Error::Detector(format!("non UTF-8 path {}", image.display())))?;
        let out = ExternalCommand::new(cmd.clone())
            .run(&[image_str], &[])
            .map_err(Error::Detector)?;
        let fallback = image.file_name().and_then(|f| f.to_str());
        let json = String::from_utf8(out).map_err(|e| Error::Detector(e.to_string()))?;
        LabelDocument::from_json(&json, fallback).map_err(|e| Error::Detector(e.to_string()))
    }

    /// Runs every stage except recommendation.
    pub fn classify(&self, input: PipelineInput) -> Result<PipelineReport, StageError> {
        let mut stages = vec![Stage::Load];
        let mut warnings = self.load_warnings.clone();

        let doc = match input {
            PipelineInput::Labels(doc) => doc,
            PipelineInput::Image(path) => {
                stages.push(Stage::Detect);
                self.detect(&path).at(Stage::Detect)?
            }
        };

        stages.push(Stage::Normalize);
        let raw: Vec<&String> = doc.labels.iter().collect();
        let labels = matcher::normalize_labels(&raw, &self.aliases);
        if labels.is_empty() {
            return Err(Error::EmptyLabelSet).at(Stage::Normalize);
        }

        stages.push(Stage::Map);
        let matched = matcher::map_keywords(&labels, &self.vocab, self.config.run_singleton).at(Stage::Map)?;
        let described = match self.config.reducer {
            Reducer::Intersection => {
                Some(matcher::map_descriptions(&labels, &self.vocab, self.config.run_singleton).at(Stage::Map)?)
            }
            _ => None,
        };
        let codes_detected = matched.codes;
        if codes_detected.is_empty() {
            warnings.push(format!("no codes found for labels {labels:?}"));
        }

        stages.push(Stage::Infer);
        let inference = rules::infer_traced(&codes_detected, &labels, &self.rules);
        let codes_inferred = inference.added();

        stages.push(Stage::Reduce);
        let reduced = match self.config.reducer {
            Reducer::None => codes_detected.clone(),
            Reducer::Intersection => {
                matcher::reduce_intersection(&codes_detected, described.as_ref().expect("computed in map stage"))
            }
            Reducer::ShortestTitle => matcher::reduce_shortest_title(&codes_detected, &labels, &self.vocab),
            Reducer::External => {
                let cmd = self.config.external_command().expect("validated config");
                match matcher::reduce_external(&codes_detected, &self.vocab, &cmd) {
                    Ok(codes) => codes,
                    Err(e) => {
                        let msg = format!("external reducer failed, keeping unreduced codes: {e}");
                        warn!("{msg}");
                        warnings.push(msg);
                        codes_detected.clone()
                    }
                }
            }
        };
        let mut codes_final = reduced;
        codes_final.extend(codes_inferred.iter().cloned());

        Ok(PipelineReport {
            image_id: doc.image_id,
            labels,
            pass_used: matched.pass_used,
            codes_detected,
            codes_inferred,
            codes_final,
            recommendations: BTreeMap::new(),
            stages,
            warnings,
        })
    }

    /// Top-1 recommendation per method for a code set.
    pub fn recommend(&self, codes: &CodeSet, exclude: Option<&str>) -> Result<MethodRecommendations> {
        let index = self
            .index
            .as_ref()
            .ok_or_else(|| Error::Config("recommendation requires corpus_index_path".into()))?;
        index.recommend_all(codes, self.config.idf_impact, exclude)
    }

    /// The full workflow. Recommendation is skipped with a warning when no
    /// codes survive classification.
    pub fn run(&self, input: PipelineInput, exclude: Option<&str>) -> Result<PipelineReport, StageError> {
        let mut report = self.classify(input)?;
        report.stages.push(Stage::Recommend);
        if report.codes_final.is_empty() {
            report
                .warnings
                .push("no codes to recommend from".to_string());
            report.recommendations = crate::corpus_index::Method::ALL.into_iter().map(|m| (m, None)).collect();
            return Ok(report);
        }
        report.recommendations = self.recommend(&report.codes_final, exclude).at(Stage::Recommend)?;
        Ok(report)
    }
}

/// One-shot convenience: load resources from `config` and run everything.
pub fn classify_and_recommend(input: PipelineInput, config: PipelineConfig) -> Result<PipelineReport, StageError> {
    let pipeline = Pipeline::load(config).at(Stage::Load)?;
    pipeline.run(input, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_index::{CorpusDoc, Method};
    use crate::notation::Notation;
    use crate::vocabulary::VocabEntry;

    fn set(items: &[&str]) -> CodeSet {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn entry(code: &str, text: &str, kws: &[&str]) -> VocabEntry {
        VocabEntry::new(Notation::parse(code).unwrap(), text, kws)
    }

    fn pipeline(cfg: PipelineConfig) -> Pipeline {
        let vocab = Vocabulary::from_entries([
            entry("34B11", "dog", &["dog"]),
            entry("46E31", "dog (as messenger)", &["dog"]),
            entry("46C13141(+78)", "horse (+ man and animal)", &["horse", "human being", "riding"]),
            entry("43CC114(+423)", "hunter - CC - female hunter, huntress (+ hunting with horses)", &["horse"]),
            entry("43C1", "hunting", &["hunting"]),
        ]);
        let rules = rules::load_rules(
            r#"[{"id":"riding-hunt","if_labels":["horse","human being"],"if_codes":["46C13141(+78)"],"then_codes":["43C1"]}]"#
                .as_bytes(),
        )
        .unwrap();
        let index = CorpusIndex::build(vec![
            CorpusDoc { image_id: "dog.jpg".into(), codes: set(&["34B11"]) },
            CorpusDoc { image_id: "ride.jpg".into(), codes: set(&["46C13141(+78)", "25F24"]) },
        ])
        .unwrap();
        Pipeline::new(cfg, vocab, rules, AliasMap::coco_default(), Some(index)).unwrap()
    }

    #[test]
    fn dog_with_shortest_title() {
        let p = pipeline(PipelineConfig { reducer: Reducer::ShortestTitle, ..Default::default() });
        let report = p.run(PipelineInput::Labels(LabelDocument::new("a.jpg", ["Dog"])), None).unwrap();
        assert_eq!(report.codes_detected, set(&["34B11", "46E31"]));
        assert_eq!(report.codes_final, set(&["34B11"]));
        let top = report.recommendations[&Method::Idf].as_ref().unwrap();
        assert_eq!(top.image_id, "dog.jpg");
        assert_eq!(
            report.stages,
            [Stage::Load, Stage::Normalize, Stage::Map, Stage::Infer, Stage::Reduce, Stage::Recommend]
        );
    }

    #[test]
    fn hunt_with_alias_and_rule() {
        let p = pipeline(PipelineConfig::default());
        let report = p
            .run(PipelineInput::Labels(LabelDocument::new("h.jpg", ["person", "horse"])), None)
            .unwrap();
        assert_eq!(report.labels, set(&["horse", "human being"]));
        assert_eq!(report.pass_used, Pass::Subset);
        assert_eq!(report.codes_detected, set(&["46C13141(+78)"]));
        assert_eq!(report.codes_inferred, set(&["43C1"]));
        assert_eq!(report.codes_final, set(&["43C1", "46C13141(+78)"]));
        assert_eq!(report.recommendations[&Method::Hierarchy].as_ref().unwrap().image_id, "ride.jpg");
    }

    #[test]
    fn empty_labels_fail_at_normalize() {
        let p = pipeline(PipelineConfig::default());
        let err = p.run(PipelineInput::Labels(LabelDocument::new("x", Vec::<String>::new())), None).unwrap_err();
        assert_eq!(err.stage, Stage::Normalize);
        assert!(matches!(err.source, Error::EmptyLabelSet));
    }

    #[test]
    fn external_failure_falls_back() {
        let p = pipeline(PipelineConfig {
            reducer: Reducer::External,
            external_cmd: Some("exit 1".into()),
            ..Default::default()
        });
        let report = p.classify(PipelineInput::Labels(LabelDocument::new("a", ["dog"]))).unwrap();
        assert_eq!(report.codes_final, report.codes_detected);
        assert!(report.warnings.iter().any(|w| w.contains("external reducer failed")));
    }

    #[test]
    fn config_validation() {
        let cfg = PipelineConfig { reducer: Reducer::External, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg: PipelineConfig = serde_json::from_str(r#"{"reducer":"shortest_title","idf_impact":2}"#).unwrap();
        assert_eq!(cfg.reducer, Reducer::ShortestTitle);
        assert_eq!(cfg.idf_impact, 2.0);
        assert!(!cfg.run_singleton);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn image_input_needs_detector() {
        let p = pipeline(PipelineConfig::default());
        let err = p.classify(PipelineInput::Image("x.jpg".into())).unwrap_err();
        assert_eq!(err.stage, Stage::Detect);

        let p = pipeline(PipelineConfig {
            detector_cmd: Some(r#"f() { echo "{\"labels\":[\"dog\"]}"; }; f"#.into()),
            ..Default::default()
        });
        let report = p.classify(PipelineInput::Image("/tmp/portrait.jpg".into())).unwrap();
        assert_eq!(report.image_id, "portrait.jpg");
        assert_eq!(report.codes_detected, set(&["34B11", "46E31"]));

        let p = pipeline(PipelineConfig { detector_cmd: Some("false".into()), ..Default::default() });
        let err = p.classify(PipelineInput::Image("x.jpg".into())).unwrap_err();
        assert!(matches!(err.source, Error::Detector(_)));
    }
}
