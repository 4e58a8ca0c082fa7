//! Command-line front end. All results are JSON on stdout, warnings and
//! errors go to stderr.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 failure of an external command (detector or selector).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::corpus_index::{ingest_corpus, CorpusFormat, CorpusIndex, Method, MethodRecommendations, Recommendation};
use crate::error::Error;
use crate::matcher::LabelDocument;
use crate::notation::split_code_list;
use crate::pipeline::{Pipeline, PipelineConfig, PipelineInput, Reducer, StageError, CONFIG_ENV};
use crate::CodeSet;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_EXTERNAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "iconmap", version, about = "Iconclass code mapping and artwork recommendation")]
struct Cli {
    /// Pipeline config file (JSON). Defaults to $ICONMAP_CONFIG when set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Corpus index management
    #[command(subcommand)]
    Index(IndexCommand),
    /// Map detected labels to Iconclass codes
    Classify(ClassifyArgs),
    /// Recommend corpus images for a set of codes
    Recommend(RecommendArgs),
    /// Classify, then recommend from the final codes
    Pipeline(PipelineArgs),
}

#[derive(Subcommand, Debug)]
enum IndexCommand {
    /// Build an index cache file from corpus annotations
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = CorpusFormatArg::JsonMap)]
        format: CorpusFormatArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum CorpusFormatArg {
    JsonMap,
    Tsv,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
enum MethodArg {
    All,
    Hierarchy,
    Idf,
    Jaccard,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ReducerArg {
    None,
    Intersection,
    ShortestTitle,
    External,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// LabelDocument JSON file
    #[arg(long, required_unless_present = "image", conflicts_with = "image")]
    labels: Option<PathBuf>,
    /// Image to run through the detector command
    #[arg(long)]
    image: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClassifyFlags {
    /// Vocabulary file (.jsonl or .tsv)
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Rule file (JSON array)
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Label alias map (JSON object)
    #[arg(long)]
    alias_map: Option<PathBuf>,
    /// Also search codes for each label separately
    #[arg(long)]
    singleton: bool,
    #[arg(long, value_enum)]
    reducer: Option<ReducerArg>,
    /// Selector command for the external reducer
    #[arg(long)]
    external_cmd: Option<String>,
    /// Command that prints a LabelDocument for the image path appended to it
    #[arg(long)]
    detector_cmd: Option<String>,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    flags: ClassifyFlags,
}

#[derive(Args, Debug)]
struct RecommendArgs {
    /// Comma-separated notations
    #[arg(long)]
    codes: String,
    /// Index cache file
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::All)]
    method: MethodArg,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    idf_impact: Option<f64>,
    /// Image id to leave out of the results
    #[arg(long)]
    exclude: Option<String>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    flags: ClassifyFlags,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    idf_impact: Option<f64>,
    #[arg(long)]
    exclude: Option<String>,
}

#[derive(Serialize)]
struct IndexSummary<'a> {
    index: &'a Path,
    documents: usize,
    warnings: usize,
}

#[derive(Serialize)]
struct TopPerMethod<'a> {
    codes: &'a CodeSet,
    recommendations: MethodRecommendations,
}

#[derive(Serialize)]
struct Ranked<'a> {
    codes: &'a CodeSet,
    method: Method,
    results: Vec<Recommendation>,
}

enum Failure {
    Usage(String),
    Lib(Error),
    Stage(StageError),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Stage(e)
    }
}

fn exit_code_for(e: &Error) -> u8 {
    if e.is_external() {
        EXIT_EXTERNAL
    } else if matches!(e, Error::Config(_)) {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

/// Runs the CLI with `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };

    match dispatch(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Lib(e)) => {
            let _ = writeln!(err, "error: {e}");
            exit_code_for(&e)
        }
        Err(Failure::Stage(e)) => {
            let _ = writeln!(err, "error: {e}");
            exit_code_for(&e.source)
        }
    }
}

fn base_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    match path.map(Path::to_path_buf).or(env_path) {
        Some(p) => Ok(PipelineConfig::from_path(&p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn apply_flags(cfg: &mut PipelineConfig, flags: &ClassifyFlags) {
    if let Some(v) = &flags.vocab {
        cfg.vocab_path = Some(v.clone());
    }
    if let Some(r) = &flags.rules {
        cfg.rules_path = Some(r.clone());
    }
    if let Some(a) = &flags.alias_map {
        cfg.alias_map_path = Some(a.clone());
    }
    if flags.singleton {
        cfg.run_singleton = true;
    }
    if let Some(r) = flags.reducer {
        cfg.reducer = match r {
            ReducerArg::None => Reducer::None,
            ReducerArg::Intersection => Reducer::Intersection,
            ReducerArg::ShortestTitle => Reducer::ShortestTitle,
            ReducerArg::External => Reducer::External,
        };
    }
    if let Some(c) = &flags.external_cmd {
        cfg.external_cmd = Some(c.clone());
    }
    if let Some(c) = &flags.detector_cmd {
        cfg.detector_cmd = Some(c.clone());
    }
}

fn read_input(input: &InputArgs) -> Result<PipelineInput, Failure> {
    match (&input.labels, &input.image) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(Error::from)?;
            let fallback = path.file_name().and_then(|f| f.to_str());
            Ok(PipelineInput::Labels(LabelDocument::from_json(&text, fallback)?))
        }
        (None, Some(image)) => Ok(PipelineInput::Image(image.clone())),
        _ => Err(Failure::Usage("exactly one of --labels or --image is required".into())),
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), Failure> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(Error::from)?;
    writeln!(out).map_err(Error::from)?;
    Ok(())
}

fn warn_all(err: &mut dyn Write, warnings: &[String]) {
    for w in warnings {
        let _ = writeln!(err, "warning: {w}");
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Index(IndexCommand::Build { corpus, format, out: path }) => {
            let format = match format {
                CorpusFormatArg::JsonMap => CorpusFormat::JsonMap,
                CorpusFormatArg::Tsv => CorpusFormat::Tsv,
            };
            let file = File::open(&corpus).map_err(Error::from)?;
            let (docs, warnings) = ingest_corpus(BufReader::new(file), format)?;
            warn_all(err, &warnings);
            let index = CorpusIndex::build(docs)?;
            let mut writer = BufWriter::new(File::create(&path).map_err(Error::from)?);
            index.save(&mut writer)?;
            writer.flush().map_err(Error::from)?;
            emit(
                out,
                &IndexSummary {
                    index: &path,
                    documents: index.len(),
                    warnings: warnings.len(),
                },
            )
        }
        Command::Classify(args) => {
            let mut cfg = base_config(cli.config.as_deref())?;
            apply_flags(&mut cfg, &args.flags);
            cfg.corpus_index_path = None;
            let input = read_input(&args.input)?;
            let pipeline = Pipeline::load(cfg)?;
            let report = pipeline.classify(input)?;
            warn_all(err, &report.warnings);
            emit(out, &report)
        }
        Command::Recommend(args) => {
            let cfg = base_config(cli.config.as_deref())?;
            let path = args
                .index
                .or(cfg.corpus_index_path)
                .ok_or_else(|| Failure::Usage("--index is required".into()))?;
            let impact = args.idf_impact.unwrap_or(cfg.idf_impact);
            let codes: CodeSet = split_code_list(&args.codes).into_iter().collect();
            let index = CorpusIndex::load(BufReader::new(File::open(&path).map_err(Error::from)?))?;
            let exclude = args.exclude.as_deref();
            let method = match args.method {
                MethodArg::All => None,
                MethodArg::Hierarchy => Some(Method::Hierarchy),
                MethodArg::Idf => Some(Method::Idf),
                MethodArg::Jaccard => Some(Method::Jaccard),
            };
            match method {
                None => {
                    if args.top_k.is_some_and(|k| k != 1) {
                        return Err(Failure::Usage("--method all returns one image per method; use a single method for --top-k".into()));
                    }
                    let recs = index.recommend_all(&codes, impact, exclude)?;
                    emit(out, &TopPerMethod { codes: &codes, recommendations: recs })
                }
                Some(m) => {
                    let k = args.top_k.unwrap_or(1);
                    let results = index.recommend(&codes, m, k, impact, exclude)?;
                    emit(out, &Ranked { codes: &codes, method: m, results })
                }
            }
        }
        Command::Pipeline(args) => {
            let mut cfg = base_config(cli.config.as_deref())?;
            apply_flags(&mut cfg, &args.flags);
            if let Some(index) = args.index {
                cfg.corpus_index_path = Some(index);
            }
            if cfg.corpus_index_path.is_none() {
                return Err(Failure::Usage("--index is required".into()));
            }
            if let Some(impact) = args.idf_impact {
                cfg.idf_impact = impact;
            }
            let input = read_input(&args.input)?;
            let pipeline = Pipeline::load(cfg)?;
            let report = pipeline.run(input, args.exclude.as_deref())?;
            warn_all(err, &report.warnings);
            emit(out, &report)
        }
    }
}
