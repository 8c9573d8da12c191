//! End-to-end comparison of a vanilla translator and constraint-candidate
//! systems on a synthetic world: translation quality and downstream retrieval.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::align::train_ibm1;
use crate::error::{Error, Result};
use crate::evaluation::bleu::bleu;
use crate::evaluation::metrics::{mean_average_precision, ndcg_at_10, recall_at_k, MetricValue, RunResults};
use crate::evaluation::world::{gen_synthetic, SyntheticWorld, WorldConfig};
use crate::io::create_file;
use crate::mine::{build_constraint_table, query_constraint_set, ConstraintMask, ConstraintTable, MaskOptions, MiningConfig};
use crate::io::SentencePair;
use crate::nmt::{beam_search, train, Checkpoint, DecodeConfig, Hypothesis, ModelConfig, TrainConfig, TrainExample, TransformerParams};
use crate::retrieval::{build_index_with, search, Bm25Params};
use crate::textproc::{apply_bpe, build_vocab, learn_bpe, merge_subwords, BpeModel, Lang, TokenSequence, Vocabulary, EOS};

/// Transformer size; vocabulary sizes come from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let t = ModelConfig::toy(5, 5);
        Self {
            layers: t.layers,
            d_model: t.d_model,
            heads: t.heads,
            d_ff: t.d_ff,
            max_len: 32,
        }
    }
}

impl ModelShape {
    pub fn with_vocab(&self, src_vocab: usize, tgt_vocab: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            d_model: self.d_model,
            heads: self.heads,
            d_ff: self.d_ff,
            src_vocab,
            tgt_vocab,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub align_iterations: usize,
    /// `m` is replaced by each value of `grid_m`.
    pub mining: MiningConfig,
    pub grid_m: Vec<usize>,
    /// Which M the summary tables report as the constrained system.
    pub headline_m: usize,
    pub mask: MaskOptions,
    /// 0 trains on whole words.
    pub bpe_merges: usize,
    pub max_vocab: usize,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub bm25: Bm25Params,
    pub recall_k: usize,
    pub retrieve_depth: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            world: WorldConfig::default(),
            align_iterations: 10,
            mining: MiningConfig::default(),
            grid_m: vec![5, 10, 20],
            headline_m: 10,
            mask: MaskOptions::default(),
            bpe_merges: 0,
            max_vocab: 10_000,
            model: ModelShape::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            bm25: Bm25Params::default(),
            recall_k: 10,
            retrieve_depth: 100,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.train.validate()?;
        self.decode.validate()?;
        if self.grid_m.is_empty() || self.grid_m.contains(&0) {
            return Err(Error::InvalidArgument("grid_m needs at least one positive M".into()));
        }
        if self.recall_k == 0 || self.retrieve_depth == 0 {
            return Err(Error::InvalidArgument("recall_k and retrieve_depth must be positive".into()));
        }
        self.model.with_vocab(5, 5).validate()
    }
}

/// Where the candidate constraint is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    TrainOnly,
    InferOnly,
    Both,
    Neither,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::TrainOnly, Mode::InferOnly, Mode::Both, Mode::Neither];

    pub fn train(self) -> bool {
        matches!(self, Mode::TrainOnly | Mode::Both)
    }

    pub fn infer(self) -> bool {
        matches!(self, Mode::InferOnly | Mode::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::TrainOnly => "train-only",
            Mode::InferOnly => "infer-only",
            Mode::Both => "both",
            Mode::Neither => "neither",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    /// `None` for the unconstrained baseline.
    pub m: Option<usize>,
    pub mode: Mode,
    pub bleu: Option<f64>,
    pub recall: Option<MetricValue>,
    pub map: Option<MetricValue>,
    pub ndcg10: Option<MetricValue>,
    /// Share of emitted non-EOS tokens inside the query mask (infer modes only).
    pub mask_compliance: Option<f64>,
    pub failure: Option<String>,
}

impl ReportRow {
    pub fn key(&self) -> String {
        match self.m {
            None => "baseline".into(),
            Some(m) => format!("m{m}_{}", self.mode.name()),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
            && self.bleu.is_some()
            && self.recall.is_some()
            && self.map.is_some()
            && self.ndcg10.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub recall_k: usize,
    pub headline_m: usize,
    pub bitext_pairs: usize,
    pub documents: usize,
    pub test_queries: usize,
    pub polysemous_words: usize,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn baseline(&self) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.m.is_none())
    }

    pub fn row(&self, m: usize, mode: Mode) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.m == Some(m) && r.mode == mode)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Plain-text tables: the ablation grid, translation quality of the
    /// baseline against the headline system, and their retrieval metrics.
    pub fn to_text(&self) -> String {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
        let fm = |v: Option<MetricValue>| f(v.map(|m| m.value));
        let fm100 = |v: Option<MetricValue>| f(v.map(|m| 100.0 * m.value));
        let mut s = String::new();
        let _ = writeln!(s, "Ablation (BLEU), seed {}", self.seed);
        let _ = writeln!(s, "{:<12} {:>4} {:>12} {:>8} {:>10}", "system", "M", "mode", "BLEU", "R@k");
        for r in &self.rows {
            let m = r.m.map_or("-".into(), |m| m.to_string());
            let _ = writeln!(
                s,
                "{:<12} {:>4} {:>12} {:>8} {:>10}{}",
                r.system,
                m,
                r.mode.name(),
                f(r.bleu),
                fm(r.recall),
                r.failure.as_ref().map_or(String::new(), |e| format!("  FAILED: {e}"))
            );
        }
        let head = self.row(self.headline_m, Mode::Both);
        let pair: Vec<(&str, Option<&ReportRow>)> = vec![("Transformer", self.baseline()), ("+TC", head)];
        let _ = writeln!(s, "\nTranslation (M={})", self.headline_m);
        let _ = writeln!(s, "{:<12} {:>8}", "system", "BLEU");
        for (name, r) in &pair {
            let _ = writeln!(s, "{:<12} {:>8}", name, f(r.and_then(|r| r.bleu)));
        }
        let _ = writeln!(s, "\nRetrieval (M={})", self.headline_m);
        let _ = writeln!(s, "{:<12} {:>10} {:>8} {:>8}", "system", format!("RECALL@{}", self.recall_k), "MAP", "NDCG@10");
        for (name, r) in &pair {
            let _ = writeln!(
                s,
                "{:<12} {:>10} {:>8} {:>8}",
                name,
                fm(r.and_then(|r| r.recall)),
                fm100(r.and_then(|r| r.map)),
                fm100(r.and_then(|r| r.ndcg10))
            );
        }
        if let Some(m) = self.rows.iter().find_map(|r| r.recall) {
            let _ = writeln!(s, "\n{} queries evaluated, {} without relevant documents", m.evaluated, m.excluded);
        }
        s
    }

    /// Writes `report.json` and `report.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mut out = create_file(&dir.join("report.json"))?;
        out.write_all(self.to_json()?.as_bytes())?;
        out.flush()?;
        let mut out = create_file(&dir.join("report.txt"))?;
        out.write_all(self.to_text().as_bytes())?;
        out.flush()?;
        Ok(())
    }
}

/// Tokenization shared by training and decoding: optional subword
/// segmentation plus the two vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub bpe_src: Option<BpeModel>,
    pub bpe_tgt: Option<BpeModel>,
    pub vocab_src: Vocabulary,
    pub vocab_tgt: Vocabulary,
    pub mask_options: MaskOptions,
}

impl Pipeline {
    pub fn from_bitext(bitext: &[SentencePair], bpe_merges: usize, max_vocab: usize, mask_options: MaskOptions) -> Result<Self> {
        let src: Vec<TokenSequence> = bitext.iter().map(|p| p.source.clone()).collect();
        let tgt: Vec<TokenSequence> = bitext.iter().map(|p| p.target.clone()).collect();
        let (bpe_src, bpe_tgt) = if bpe_merges > 0 {
            (Some(learn_bpe(&src, bpe_merges)?), Some(learn_bpe(&tgt, bpe_merges)?))
        } else {
            (None, None)
        };
        let seg = |m: &Option<BpeModel>, c: &[TokenSequence]| -> Vec<TokenSequence> {
            c.iter().map(|s| m.as_ref().map_or_else(|| s.clone(), |m| apply_bpe(m, s))).collect()
        };
        Ok(Self {
            vocab_src: build_vocab(&seg(&bpe_src, &src), max_vocab)?,
            vocab_tgt: build_vocab(&seg(&bpe_tgt, &tgt), max_vocab)?,
            bpe_src,
            bpe_tgt,
            mask_options,
        })
    }

    /// Writes `src_vocab.tsv`, `tgt_vocab.tsv`, `mask_options.json` and, with
    /// subwords, `bpe_src.txt` / `bpe_tgt.txt` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.vocab_src.save(dir.join("src_vocab.tsv"))?;
        self.vocab_tgt.save(dir.join("tgt_vocab.tsv"))?;
        if let Some(m) = &self.bpe_src {
            m.save(dir.join("bpe_src.txt"))?;
        }
        if let Some(m) = &self.bpe_tgt {
            m.save(dir.join("bpe_tgt.txt"))?;
        }
        let mut out = create_file(&dir.join("mask_options.json"))?;
        serde_json::to_writer(&mut out, &self.mask_options)?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let bpe = |name: &str| -> Result<Option<BpeModel>> {
            let p = dir.join(name);
            if p.exists() {
                Ok(Some(BpeModel::load(p)?))
            } else {
                Ok(None)
            }
        };
        Ok(Self {
            vocab_src: Vocabulary::load(dir.join("src_vocab.tsv"))?,
            vocab_tgt: Vocabulary::load(dir.join("tgt_vocab.tsv"))?,
            bpe_src: bpe("bpe_src.txt")?,
            bpe_tgt: bpe("bpe_tgt.txt")?,
            mask_options: serde_json::from_reader(crate::io::open_file(&dir.join("mask_options.json"))?)?,
        })
    }

    /// Model input ids of a word-level source sentence, EOS-terminated.
    pub fn encode_source(&self, source: &TokenSequence) -> Vec<usize> {
        let seq = self.bpe_src.as_ref().map_or_else(|| source.clone(), |m| apply_bpe(m, source));
        let mut ids = self.vocab_src.encode(&seq);
        ids.push(EOS);
        ids
    }

    pub fn encode_target(&self, target: &TokenSequence) -> Vec<usize> {
        let seq = self.bpe_tgt.as_ref().map_or_else(|| target.clone(), |m| apply_bpe(m, target));
        self.vocab_tgt.encode(&seq)
    }

    /// Word-level target tokens of decoder output ids.
    pub fn decode_target(&self, ids: &[usize]) -> TokenSequence {
        let seq = TokenSequence::new(self.vocab_tgt.decode(ids), Lang::Target);
        if self.bpe_tgt.is_some() {
            merge_subwords(&seq)
        } else {
            seq
        }
    }

    pub fn mask(&self, table: &ConstraintTable, source: &TokenSequence) -> ConstraintMask {
        query_constraint_set(table, source, &self.vocab_tgt, self.bpe_tgt.as_ref(), self.mask_options)
    }

    /// Training examples; each carries the mask of its source sentence when
    /// a constraint table is given.
    pub fn examples(&self, bitext: &[SentencePair], table: Option<&ConstraintTable>) -> Vec<TrainExample> {
        bitext
            .iter()
            .map(|p| {
                TrainExample::new(
                    self.encode_source(&p.source),
                    &self.encode_target(&p.target),
                    table.map(|t| self.mask(t, &p.source)),
                )
            })
            .collect()
    }

    /// Beam-search translation of one word-level source sentence.
    pub fn translate(
        &self,
        model: &TransformerParams,
        source: &TokenSequence,
        decode: &DecodeConfig,
        table: Option<&ConstraintTable>,
    ) -> Result<(TokenSequence, Hypothesis)> {
        let mask = table.map(|t| self.mask(t, source));
        let hyp = beam_search(model, &self.encode_source(source), decode, mask.as_ref())?;
        Ok((self.decode_target(&hyp.tokens), hyp))
    }
}

struct Evaluated {
    row: ReportRow,
    translations: Vec<(String, String)>,
}

fn evaluate(
    pipeline: &Pipeline,
    world: &SyntheticWorld,
    index: &crate::retrieval::InvertedIndex,
    model: &TransformerParams,
    table: Option<&ConstraintTable>,
    config: &ExperimentConfig,
    mut row: ReportRow,
) -> Result<Evaluated> {
    let decode = DecodeConfig {
        constraint_in_inference: table.is_some(),
        ..config.decode
    };
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    let mut results = RunResults::new();
    let mut translations = Vec::new();
    let (mut inside, mut emitted) = (0usize, 0usize);
    for q in &world.test_queries {
        let (words, hyp) = pipeline.translate(model, &q.source, &decode, table)?;
        if let Some(t) = table {
            let m = pipeline.mask(t, &q.source);
            emitted += hyp.tokens.len();
            inside += hyp.tokens.iter().filter(|&&id| m.allows(id)).count();
        }
        let ranked = search(index, &words, config.retrieve_depth)?;
        results.insert(q.id.clone(), ranked.into_iter().map(|(d, _)| d).collect());
        translations.push((q.id.clone(), words.joined()));
        hyps.push(words.tokens.clone());
        refs.push(q.reference.tokens.clone());
    }
    row.bleu = Some(bleu(&hyps, &refs)?);
    row.recall = Some(recall_at_k(&results, &world.judgments, config.recall_k)?);
    row.map = Some(mean_average_precision(&results, &world.judgments)?);
    row.ndcg10 = Some(ndcg_at_10(&results, &world.judgments)?);
    if table.is_some() {
        row.mask_compliance = Some(if emitted == 0 { 1.0 } else { inside as f64 / emitted as f64 });
    }
    Ok(Evaluated { row, translations })
}

fn write_translations(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut out = create_file(path)?;
    for (id, text) in rows {
        writeln!(out, "{id}\t{text}")?;
    }
    out.flush()?;
    Ok(())
}

fn train_model(
    pipeline: &Pipeline,
    world: &SyntheticWorld,
    table: Option<&ConstraintTable>,
    config: &ExperimentConfig,
) -> Result<TransformerParams> {
    let model_cfg = config
        .model
        .with_vocab(pipeline.vocab_src.len(), pipeline.vocab_tgt.len());
    let mut params = TransformerParams::init(model_cfg, config.seed)?;
    let train_cfg = TrainConfig {
        seed: config.seed,
        constraint_in_training: table.is_some(),
        ..config.train.clone()
    };
    let started = Instant::now();
    let report = train(&mut params, &pipeline.examples(&world.bitext, table), &train_cfg, None)?;
    info!(
        "trained {} in {:.1}s, final loss {:.4}",
        if table.is_some() { "constrained model" } else { "baseline" },
        started.elapsed().as_secs_f64(),
        report.final_loss(20)
    );
    Ok(params)
}

/// Runs the whole comparison on the world generated from `config.world` and
/// `config.seed`. Stage failures are recorded on the affected rows instead
/// of aborting. With a `workdir`, every intermediate artifact is written
/// there.
pub fn run_experiment(config: &ExperimentConfig, workdir: Option<&Path>) -> Result<ExperimentReport> {
    config.validate()?;
    let world = gen_synthetic(&config.world, config.seed)?;
    run_experiment_on(&world, config, workdir)
}

pub fn run_experiment_on(world: &SyntheticWorld, config: &ExperimentConfig, workdir: Option<&Path>) -> Result<ExperimentReport> {
    config.validate()?;
    if let Some(dir) = workdir {
        world.save(dir.join("world"))?;
        let mut out = create_file(&dir.join("config.json"))?;
        serde_json::to_writer_pretty(&mut out, config)?;
        writeln!(out)?;
    }
    let pipeline = Pipeline::from_bitext(&world.bitext, config.bpe_merges, config.max_vocab, config.mask)?;
    let src_words: Vec<TokenSequence> = world.bitext.iter().map(|p| p.source.clone()).collect();
    let word_vocab_src = build_vocab(&src_words, usize::MAX)?;
    let table = train_ibm1(&world.bitext, config.align_iterations)?;
    let index = build_index_with(world.docs.iter(), config.bm25)?;

    let mut tables: BTreeMap<usize, ConstraintTable> = BTreeMap::new();
    for &m in &config.grid_m {
        let mining = MiningConfig { m, ..config.mining };
        let t = build_constraint_table(&word_vocab_src, &table, &world.click_log, &world.docs, &mining)?;
        if let Some(dir) = workdir {
            t.save(dir.join(format!("constraints_m{m}.tsv")))?;
        }
        tables.insert(m, t);
    }

    let save_model = |name: &str, p: &TransformerParams| -> Result<()> {
        if let Some(dir) = workdir {
            Checkpoint {
                params: p.clone(),
                step: config.train.max_steps as u64,
            }
            .save(dir.join(format!("{name}.ckpt")))?;
        }
        Ok(())
    };
    let baseline = train_model(&pipeline, world, None, config);
    if let Ok(p) = &baseline {
        save_model("baseline", p)?;
    }
    let mut constrained: BTreeMap<usize, Result<TransformerParams>> = BTreeMap::new();
    for (&m, t) in &tables {
        let model = train_model(&pipeline, world, Some(t), config);
        if let Ok(p) = &model {
            save_model(&format!("tc_m{m}"), p)?;
        }
        constrained.insert(m, model);
    }

    let mut plan: Vec<(Option<usize>, Mode)> = vec![(None, Mode::Neither)];
    for &m in &config.grid_m {
        plan.extend(Mode::ALL.iter().map(|&mode| (Some(m), mode)));
    }
    let mut rows = Vec::with_capacity(plan.len());
    for (m, mode) in plan {
        let row = ReportRow {
            system: if m.is_none() { "Transformer".into() } else { "+TC".into() },
            m,
            mode,
            bleu: None,
            recall: None,
            map: None,
            ndcg10: None,
            mask_compliance: None,
            failure: None,
        };
        let model = match m {
            Some(m) if mode.train() => constrained[&m].as_ref(),
            _ => baseline.as_ref(),
        };
        let table = m.filter(|_| mode.infer()).map(|m| &tables[&m]);
        let key = row.key();
        let outcome = model
            .map_err(|e| Error::InvalidArgument(format!("training failed: {e}")))
            .and_then(|p| evaluate(&pipeline, world, &index, p, table, config, row.clone()));
        match outcome {
            Ok(ev) => {
                if let Some(dir) = workdir {
                    write_translations(&dir.join("translations").join(format!("{key}.tsv")), &ev.translations)?;
                }
                info!("{key}: BLEU {:.2} R@{} {:.2}", ev.row.bleu.unwrap_or(0.0), config.recall_k, ev.row.recall.map_or(0.0, |r| r.value));
                rows.push(ev.row);
            }
            Err(e) => rows.push(ReportRow {
                failure: Some(e.to_string()),
                ..row
            }),
        }
    }

    let report = ExperimentReport {
        seed: config.seed,
        recall_k: config.recall_k,
        headline_m: config.headline_m,
        bitext_pairs: world.bitext.len(),
        documents: world.docs.len(),
        test_queries: world.test_queries.len(),
        polysemous_words: world.polysemous_words().count(),
        rows,
    };
    if let Some(dir) = workdir {
        report.save(dir)?;
    }
    Ok(report)
}
