//! The `qtcand` command line front end.
//!
//! Every subcommand accepts `--config <file.json>` holding a
//! [`PipelineConfig`]; explicit flags override values from the file. Results
//! go to `--output` (or stdout when omitted), diagnostics to stderr. A failure
//! prints exactly one line `error<TAB>kind<TAB>message` and exits with the
//! code of its kind:
//!
//! | code | kind |
//! | --- | --- |
//! | 1 | `io` (any other I/O failure) |
//! | 2 | `usage` (unknown flag, bad flag value) |
//! | 3 | `missing-file` |
//! | 4 | `format` (unparsable input, config schema mismatch, bad checkpoint) |
//! | 5 | `invalid` (value out of range, inconsistent data) |
//! | 6 | `diverged` (non-finite loss or gradient) |

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use crate::align::train_ibm1;
use crate::error::{Error, Result};
use crate::evaluation::{
    bleu, gen_synthetic, mean_average_precision, ndcg_at_10, recall_at_k, run_experiment, ExperimentConfig, ModelShape,
    Pipeline, RelevanceJudgments, RunResults, WorldConfig,
};
use crate::io::{create_file, open_file, read_bitext, read_lines};
use crate::mine::{build_constraint_table, ClickLog, ConstraintTable, DocumentCollection, MaskOptions, MiningConfig};
use crate::nmt::{train, Checkpoint, DecodeConfig, TrainConfig, TransformerParams};
use crate::retrieval::{build_index_with, search, Bm25Params, InvertedIndex};
use crate::textproc::{apply_bpe, learn_bpe, tokenize, BpeModel, Lang, Vocabulary};

/// Version of the text artifact formats (tables, runs, reports).
pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (artifact format 1, checkpoint format 1)");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub bitext: Option<PathBuf>,
    pub clicklog: Option<PathBuf>,
    pub docs: Option<PathBuf>,
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpeConfig {
    /// 0 keeps whole words.
    pub merges: usize,
    pub max_vocab: usize,
}

impl Default for BpeConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            merges: e.bpe_merges,
            max_vocab: e.max_vocab,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub iterations: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            iterations: ExperimentConfig::default().align_iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub recall_k: usize,
    /// Documents retrieved per query.
    pub retrieve_depth: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            recall_k: e.recall_k,
            retrieve_depth: e.retrieve_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub grid_m: Vec<usize>,
    pub headline_m: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            grid_m: e.grid_m,
            headline_m: e.headline_m,
        }
    }
}

/// The JSON configuration shared by all subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub bpe: BpeConfig,
    pub align: AlignConfig,
    pub mine: MiningConfig,
    pub mask: MaskOptions,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub retrieval: Bm25Params,
    pub eval: EvalConfig,
    pub world: WorldConfig,
    pub experiment: GridConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            seed: e.seed,
            paths: PathsConfig::default(),
            bpe: BpeConfig::default(),
            align: AlignConfig::default(),
            mine: e.mining,
            mask: e.mask,
            model: e.model,
            train: e.train,
            decode: e.decode,
            retrieval: e.bm25,
            eval: EvalConfig::default(),
            world: e.world,
            experiment: GridConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(open_file(path)?)?)
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seed,
            world: self.world.clone(),
            align_iterations: self.align.iterations,
            mining: self.mine,
            grid_m: self.experiment.grid_m.clone(),
            headline_m: self.experiment.headline_m,
            mask: self.mask,
            bpe_merges: self.bpe.merges,
            max_vocab: self.bpe.max_vocab,
            model: self.model,
            train: self.train.clone(),
            decode: self.decode,
            bm25: self.retrieval,
            recall_k: self.eval.recall_k,
            retrieve_depth: self.eval.retrieve_depth,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qtcand", version = VERSION, about = "Constraint translation candidates for query translation and cross-lingual retrieval")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// PipelineConfig JSON file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file [default: stdout].
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Side {
    Source,
    Target,
}

impl From<Side> for Lang {
    fn from(s: Side) -> Self {
        match s {
            Side::Source => Lang::Source,
            Side::Target => Lang::Target,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn BPE merges from a text file (one sentence per line).
    BpeLearn {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "target")]
        lang: Side,
        /// Number of merges [config: bpe.merges; default 0 is raised to 1000 here].
        #[arg(long)]
        merges: Option<usize>,
    },
    /// Segment a text file with learned merges.
    BpeApply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "target")]
        lang: Side,
    },
    /// Train IBM Model 1 on a bitext and write the translation table.
    Align {
        /// `source<TAB>target` TSV [config: paths.bitext].
        #[arg(long)]
        bitext: Option<PathBuf>,
        /// EM iterations [config: align.iterations, default 10].
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Build the top-M constraint table from alignments and clicks.
    Mine {
        /// Translation table written by `align`.
        #[arg(long)]
        table: PathBuf,
        /// Click log JSON lines [config: paths.clicklog].
        #[arg(long)]
        clicks: Option<PathBuf>,
        /// Documents JSON lines [config: paths.docs].
        #[arg(long)]
        docs: Option<PathBuf>,
        /// Constraint size [config: mine.m, default 10].
        #[arg(long)]
        m: Option<usize>,
        /// Alignment candidates kept per word [config: mine.k_max, default 50].
        #[arg(long)]
        k_max: Option<usize>,
        /// Minimum t(y|x) [config: mine.p_min, default 0.01].
        #[arg(long)]
        p_min: Option<f64>,
        /// Keep candidates never seen in clicked documents [config: mine.keep_unclicked].
        #[arg(long)]
        keep_unclicked: bool,
    },
    /// Train a translator; writes checkpoint, vocabularies and loss history into a model directory.
    Train {
        /// [config: paths.bitext]
        #[arg(long)]
        bitext: Option<PathBuf>,
        /// Constraint table for candidate-smoothed training.
        #[arg(long)]
        constraints: Option<PathBuf>,
        /// Plain cross-entropy training even with a constraint table.
        #[arg(long)]
        no_constraint: bool,
        /// Output model directory [config: paths.workdir].
        #[arg(long)]
        model_dir: Option<PathBuf>,
        /// Gold weight [config: train.alpha, default 0.6].
        #[arg(long)]
        alpha: Option<f64>,
        /// [config: train.max_steps, default 600]
        #[arg(long)]
        max_steps: Option<usize>,
        /// [config: train.batch_tokens, default 200]
        #[arg(long)]
        batch_tokens: Option<usize>,
        /// [config: seed, default 1]
        #[arg(long)]
        seed: Option<u64>,
        /// BPE merges, 0 for whole words [config: bpe.merges, default 0].
        #[arg(long)]
        bpe_merges: Option<usize>,
    },
    /// Translate source queries with a trained model.
    Translate {
        #[arg(long)]
        model_dir: PathBuf,
        /// One query per line, or `id<TAB>query[<TAB>...]`.
        #[arg(long)]
        input: PathBuf,
        /// Constraint table restricting the output vocabulary.
        #[arg(long)]
        constraints: Option<PathBuf>,
        /// Decode over the full vocabulary even with a constraint table.
        #[arg(long)]
        no_constraint: bool,
        /// [config: decode.beam_size, default 4]
        #[arg(long)]
        beam: Option<usize>,
        /// [config: decode.length_penalty, default 0.6]
        #[arg(long)]
        length_penalty: Option<f64>,
        /// [config: decode.max_len, default 20]
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Build a BM25 index over a document collection.
    Index {
        /// [config: paths.docs]
        #[arg(long)]
        docs: Option<PathBuf>,
        /// [config: retrieval.k1, default 1.2]
        #[arg(long)]
        k1: Option<f64>,
        /// [config: retrieval.b, default 0.75]
        #[arg(long)]
        b: Option<f64>,
    },
    /// Search an index. A single `--query` prints `rank<TAB>doc_id<TAB>score`;
    /// a `--queries` file (`id<TAB>text`) prints `query_id<TAB>rank<TAB>doc_id<TAB>score`.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, conflicts_with = "queries", required_unless_present = "queries")]
        query: Option<String>,
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Results per query [config: eval.retrieve_depth, default 100].
        #[arg(short, long)]
        k: Option<usize>,
    },
    /// Corpus BLEU of hypotheses against references (plain lines, or `id<TAB>...<TAB>text` joined on id).
    EvalBleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// RECALL@k, MAP and NDCG@10 of a run file against relevance judgments.
    EvalRetrieval {
        /// `query_id<TAB>rank<TAB>doc_id<TAB>score` lines.
        #[arg(long)]
        run: PathBuf,
        /// `query_id<TAB>doc_id<TAB>grade` lines.
        #[arg(long)]
        qrels: PathBuf,
        /// [config: eval.recall_k, default 10]
        #[arg(short, long)]
        k: Option<usize>,
    },
    /// Generate a planted synthetic world into a directory.
    GenSynthetic {
        /// [config: seed, default 1]
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory [config: paths.workdir].
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the full ablation grid on a synthetic world and write the report.
    Experiment {
        /// [config: seed, default 1]
        #[arg(long)]
        seed: Option<u64>,
        /// [config: paths.workdir]
        #[arg(long)]
        workdir: Option<PathBuf>,
        /// Comma-separated constraint sizes [config: experiment.grid_m, default 5,10,20].
        #[arg(long, value_delimiter = ',')]
        grid_m: Option<Vec<usize>>,
    },
}

/// Exit code and kind of an error.
pub fn classify(err: &Error) -> (i32, &'static str) {
    match err {
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => (3, "missing-file"),
        Error::Io(_) => (1, "io"),
        Error::Parse { .. } | Error::Json(_) | Error::Checkpoint(_) => (4, "format"),
        Error::EmptyInput(_)
        | Error::InvalidArgument(_)
        | Error::DuplicateDocId(_)
        | Error::UnknownDocId(_)
        | Error::Dimension(_) => (5, "invalid"),
        Error::NonFiniteGradient(_) | Error::Diverged { .. } => (6, "diverged"),
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn command() -> clap::Command {
    let defaults = serde_json::to_string_pretty(&PipelineConfig::default()).unwrap_or_default();
    Cli::command().after_long_help(format!("Default configuration (--config overrides, flags override both):\n{defaults}"))
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    2
                }
                _ => {
                    let msg = e.to_string();
                    let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("bad arguments");
                    eprintln!("error\tusage\t{}", one_line(first.trim_start_matches("error: ")));
                    2
                }
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error\tusage\t{}", one_line(&e.to_string()));
            return 2;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match dispatch(cli.command, &cli.common) {
        Ok(()) => 0,
        Err(e) => {
            let (code, kind) = classify(&e);
            eprintln!("error\t{kind}\t{}", one_line(&e.to_string()));
            code
        }
    }
}

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| Error::InvalidArgument(format!("no {name} given (flag or config paths.{name})")))
}

fn sink(output: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match output {
        Some(p) => Box::new(create_file(p)?),
        None => Box::new(std::io::BufWriter::new(std::io::stdout().lock())),
    })
}

/// Lines of a text file; a line with tabs is keyed by its first field and
/// carries its last field as text.
fn read_keyed(path: &Path) -> Result<Vec<(Option<String>, String)>> {
    let mut out = Vec::new();
    for line in open_file(path)?.lines() {
        let line = line?;
        let mut fields = line.split('\t');
        let first = fields.next().unwrap_or_default();
        out.push(match fields.last() {
            Some(last) => (Some(first.to_string()), last.to_string()),
            None => (None, line),
        });
    }
    Ok(out)
}

fn read_run(path: &Path) -> Result<RunResults> {
    let mut ranked: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    for (i, line) in open_file(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let rank = match f.as_slice() {
            [_, rank, _, _] => rank.parse::<usize>().ok(),
            _ => None,
        };
        let rank = rank.ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: "expected `query_id<TAB>rank<TAB>doc_id<TAB>score`".into(),
        })?;
        ranked.entry(f[0].to_string()).or_default().push((rank, f[2].to_string()));
    }
    Ok(ranked
        .into_iter()
        .map(|(q, mut docs)| {
            docs.sort();
            (q, docs.into_iter().map(|(_, d)| d).collect())
        })
        .collect())
}

fn dispatch(command: Command, common: &Common) -> Result<()> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match command {
        Command::BpeLearn { input, lang, merges } => {
            let merges = merges.unwrap_or(if cfg.bpe.merges > 0 { cfg.bpe.merges } else { 1000 });
            let model = learn_bpe(&read_lines(&input, lang.into())?, merges)?;
            info!("learned {} merges", model.num_merges());
            match &common.output {
                Some(p) => model.save(p),
                None => {
                    for (a, b) in model.merges() {
                        println!("{a} {b}");
                    }
                    Ok(())
                }
            }
        }
        Command::BpeApply { model, input, lang } => {
            let model = BpeModel::load(&model)?;
            let mut out = sink(&common.output)?;
            for seq in read_lines(&input, lang.into())? {
                writeln!(out, "{}", apply_bpe(&model, &seq).joined())?;
            }
            Ok(out.flush()?)
        }
        Command::Align { bitext, iterations } => {
            let bitext = read_bitext(required(bitext, &cfg.paths.bitext, "bitext")?)?;
            let table = train_ibm1(&bitext, iterations.unwrap_or(cfg.align.iterations))?;
            table.save(need_output(common)?)
        }
        Command::Mine {
            table,
            clicks,
            docs,
            m,
            k_max,
            p_min,
            keep_unclicked,
        } => {
            let table = crate::align::TranslationTable::load(&table)?;
            let docs = DocumentCollection::load(required(docs, &cfg.paths.docs, "docs")?)?;
            let log = ClickLog::load(required(clicks, &cfg.paths.clicklog, "clicklog")?)?;
            log.validate(&docs)?;
            let mine = &mut cfg.mine;
            mine.m = m.unwrap_or(mine.m);
            mine.k_max = k_max.unwrap_or(mine.k_max);
            mine.p_min = p_min.unwrap_or(mine.p_min);
            mine.keep_unclicked |= keep_unclicked;
            let vocab = Vocabulary::from_tokens(table.source_words().map(str::to_string).collect::<Vec<_>>());
            let ct = build_constraint_table(&vocab, &table, &log, &docs, &cfg.mine)?;
            ct.save(need_output(common)?)
        }
        Command::Train {
            bitext,
            constraints,
            no_constraint,
            model_dir,
            alpha,
            max_steps,
            batch_tokens,
            seed,
            bpe_merges,
        } => {
            let bitext = read_bitext(required(bitext, &cfg.paths.bitext, "bitext")?)?;
            let dir = required(model_dir, &cfg.paths.workdir, "workdir")?;
            let t = &mut cfg.train;
            t.alpha = alpha.unwrap_or(t.alpha);
            t.max_steps = max_steps.unwrap_or(t.max_steps);
            t.batch_tokens = batch_tokens.unwrap_or(t.batch_tokens);
            // the run seed drives initialisation and shuffling, as in `experiment`
            cfg.seed = seed.unwrap_or(cfg.seed);
            t.seed = cfg.seed;
            if no_constraint {
                t.constraint_in_training = false;
            }
            let table = constraints.map(|p| ConstraintTable::load(&p)).transpose()?;
            let pipeline = Pipeline::from_bitext(&bitext, bpe_merges.unwrap_or(cfg.bpe.merges), cfg.bpe.max_vocab, cfg.mask)?;
            let model_cfg = cfg.model.with_vocab(pipeline.vocab_src.len(), pipeline.vocab_tgt.len());
            let mut params = TransformerParams::init(model_cfg, cfg.train.seed)?;
            let examples = pipeline.examples(&bitext, table.as_ref());
            let report = train(&mut params, &examples, &cfg.train, Some(&dir))?;
            std::fs::create_dir_all(&dir)?;
            pipeline.save(&dir)?;
            Checkpoint {
                params,
                step: report.loss_history.len() as u64,
            }
            .save(dir.join("model.ckpt"))?;
            let mut loss = create_file(&dir.join("loss.tsv"))?;
            for (i, l) in report.loss_history.iter().enumerate() {
                writeln!(loss, "{}\t{l}", i + 1)?;
            }
            loss.flush()?;
            let mut c = create_file(&dir.join("config.json"))?;
            serde_json::to_writer_pretty(&mut c, &cfg)?;
            writeln!(c)?;
            c.flush()?;
            let mut out = sink(&common.output)?;
            writeln!(out, "steps\t{}\nfinal_loss\t{:.6}", report.loss_history.len(), report.final_loss(20))?;
            Ok(out.flush()?)
        }
        Command::Translate {
            model_dir,
            input,
            constraints,
            no_constraint,
            beam,
            length_penalty,
            max_len,
        } => {
            let pipeline = Pipeline::load(&model_dir)?;
            let model = Checkpoint::load(model_dir.join("model.ckpt"))?.params;
            let d = &mut cfg.decode;
            d.beam_size = beam.unwrap_or(d.beam_size);
            d.length_penalty = length_penalty.unwrap_or(d.length_penalty);
            d.max_len = max_len.unwrap_or(d.max_len);
            if no_constraint {
                d.constraint_in_inference = false;
            }
            d.validate()?;
            let table = constraints.map(|p| ConstraintTable::load(&p)).transpose()?;
            let mut out = sink(&common.output)?;
            for (id, text) in read_keyed(&input)? {
                let (words, _) = pipeline.translate(&model, &tokenize(&text, Lang::Source), &cfg.decode, table.as_ref())?;
                match id {
                    Some(id) => writeln!(out, "{id}\t{}", words.joined())?,
                    None => writeln!(out, "{}", words.joined())?,
                }
            }
            Ok(out.flush()?)
        }
        Command::Index { docs, k1, b } => {
            let docs = DocumentCollection::load(required(docs, &cfg.paths.docs, "docs")?)?;
            let params = Bm25Params {
                k1: k1.unwrap_or(cfg.retrieval.k1),
                b: b.unwrap_or(cfg.retrieval.b),
            };
            let index = build_index_with(docs.iter(), params)?;
            index.save(need_output(common)?)
        }
        Command::Retrieve { index, query, queries, k } => {
            let index = InvertedIndex::load(&index)?;
            let k = k.unwrap_or(cfg.eval.retrieve_depth);
            let mut out = sink(&common.output)?;
            if let Some(q) = query {
                for (rank, (doc, score)) in search(&index, &tokenize(&q, Lang::Target), k)?.into_iter().enumerate() {
                    writeln!(out, "{}\t{doc}\t{score:.6}", rank + 1)?;
                }
            } else if let Some(path) = queries {
                for (i, (id, text)) in read_keyed(&path)?.into_iter().enumerate() {
                    let id = id.unwrap_or_else(|| (i + 1).to_string());
                    for (rank, (doc, score)) in search(&index, &tokenize(&text, Lang::Target), k)?.into_iter().enumerate() {
                        writeln!(out, "{id}\t{}\t{doc}\t{score:.6}", rank + 1)?;
                    }
                }
            }
            Ok(out.flush()?)
        }
        Command::EvalBleu { hyp, reference } => {
            let hyps = read_keyed(&hyp)?;
            let refs = read_keyed(&reference)?;
            let keyed = hyps.iter().all(|(id, _)| id.is_some()) && refs.iter().all(|(id, _)| id.is_some());
            let (h, r): (Vec<String>, Vec<String>) = if keyed {
                let by_id: BTreeMap<&str, &str> = refs.iter().map(|(id, t)| (id.as_deref().unwrap_or(""), t.as_str())).collect();
                let mut pairs = Vec::new();
                for (id, t) in &hyps {
                    let id = id.as_deref().unwrap_or("");
                    let r = by_id
                        .get(id)
                        .ok_or_else(|| Error::InvalidArgument(format!("hypothesis id `{id}` has no reference")))?;
                    pairs.push((t.clone(), r.to_string()));
                }
                pairs.into_iter().unzip()
            } else {
                if hyps.len() != refs.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{} hypotheses but {} references",
                        hyps.len(),
                        refs.len()
                    )));
                }
                hyps.into_iter().map(|(_, t)| t).zip(refs.into_iter().map(|(_, t)| t)).unzip()
            };
            let tok = |v: &[String]| -> Vec<Vec<String>> { v.iter().map(|s| tokenize(s, Lang::Target).tokens).collect() };
            let score = bleu(&tok(&h), &tok(&r))?;
            let mut out = sink(&common.output)?;
            writeln!(out, "BLEU\t{score:.2}")?;
            Ok(out.flush()?)
        }
        Command::EvalRetrieval { run, qrels, k } => {
            let mut results = read_run(&run)?;
            let judgments = RelevanceJudgments::load(&qrels)?;
            // judged queries that retrieved nothing still count, with an empty ranking
            for q in judgments.grades.keys() {
                results.entry(q.clone()).or_default();
            }
            let k = k.unwrap_or(cfg.eval.recall_k);
            let recall = recall_at_k(&results, &judgments, k)?;
            let map = mean_average_precision(&results, &judgments)?;
            let ndcg = ndcg_at_10(&results, &judgments)?;
            let mut out = sink(&common.output)?;
            let report = serde_json::json!({
                "recall_k": k,
                "recall": recall.value,
                "map": map.value,
                "ndcg10": ndcg.value,
                "evaluated": recall.evaluated,
                "excluded": recall.excluded,
            });
            writeln!(out, "{report}")?;
            Ok(out.flush()?)
        }
        Command::GenSynthetic { seed, out_dir } => {
            let dir = out_dir
                .or_else(|| common.output.clone())
                .or_else(|| cfg.paths.workdir.clone())
                .ok_or_else(|| Error::InvalidArgument("no output directory (--out-dir or config paths.workdir)".into()))?;
            let world = gen_synthetic(&cfg.world, seed.unwrap_or(cfg.seed))?;
            world.save(&dir)?;
            info!("wrote {} pairs, {} documents to {}", world.bitext.len(), world.docs.len(), dir.display());
            Ok(())
        }
        Command::Experiment { seed, workdir, grid_m } => {
            if let Some(g) = grid_m {
                cfg.experiment.grid_m = g;
            }
            cfg.seed = seed.unwrap_or(cfg.seed);
            let dir = required(workdir, &cfg.paths.workdir, "workdir")?;
            let report = run_experiment(&cfg.experiment_config(), Some(&dir))?;
            let mut out = sink(&common.output)?;
            write!(out, "{}", report.to_text())?;
            Ok(out.flush()?)
        }
    }
}

fn need_output(common: &Common) -> Result<&Path> {
    common
        .output
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("this subcommand writes a file; pass --output".into()))
}
