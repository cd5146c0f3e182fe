//! Subcommand implementations. Each reads and writes the documented file
//! formats; `main.rs` only parses flags and reports errors.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::config::{EmbeddingBackendKind, EmbeddingConfig, LlmBackendKind, PipelineConfig};
use crate::dataset::{read_jsonl, read_samples, write_jsonl, JsonlWriter, Sample};
use crate::embed::{embed_texts, Embedder, HashEmbedder, HttpEmbedder};
use crate::error::Error;
use crate::http::token_from_env;
use crate::llm::{ChatClient, ConcurrencyLimit, Generator, MockBackend, MockSpec};
use crate::mav::{
    decode_winner, default_max_rounds, replay_to_end, MavConfig, MavEngine, MavError, MavOutcome,
    RoundVotes, StopReason, VoteUnit,
};
use crate::model::{canonicalize_answer, parse_annotation, AnnotationFormat, Arity, Quadruplet, INVALID_KEY};
use crate::promptgen::{to_instruction_record, PromptBuilder, PromptError};
use crate::reformulate::{transform_dataset, TransformError, TrRule};
use crate::retrieval::{
    duplicate_content_count, read_index, read_vectors, write_index, write_vectors, RetrievalError,
    VectorIndex, VectorSet,
};
use crate::scoring::{score_dataset, EvalReport, SampleScore};

/// The thresholds swept by default.
pub const DEFAULT_TAU_GRID: [u32; 14] = [1, 2, 3, 5, 8, 10, 15, 20, 30, 40, 50, 80, 100, 200];

/// Picks a command-line path, falling back to the config file.
pub fn resolve_path(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf, Error> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| Error::Usage(format!("no {what} path given on the command line or in [data]")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("serializable report");
    text.push('\n');
    std::fs::write(path, text).map_err(io)
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)
}

pub fn build_embedder(cfg: &EmbeddingConfig) -> Box<dyn Embedder> {
    match cfg.backend {
        EmbeddingBackendKind::Hash => Box::new(HashEmbedder::new(cfg.hash_dim)),
        EmbeddingBackendKind::Http => Box::new(HttpEmbedder::new(
            &cfg.url,
            &cfg.model,
            token_from_env(cfg.api_key_env.as_deref()),
            Duration::from_secs(cfg.timeout_secs),
            cfg.retry.clone(),
            cfg.batch_size,
        )),
    }
}

fn embed_samples(samples: &[Sample], embedder: &dyn Embedder) -> Result<VectorSet, Error> {
    let texts: Vec<String> = samples.iter().map(|s| s.content.clone()).collect();
    let rows = embed_texts(&texts, embedder)?;
    Ok(VectorSet::new(samples.iter().map(|s| s.id).collect(), rows)?)
}

/// The configured generation backend behind a global in-flight cap. A
/// configured seed replaces the mock definition's own seed.
pub fn build_generator(cfg: &PipelineConfig) -> Result<Box<dyn Generator>, Error> {
    let inner: Box<dyn Generator> = match cfg.llm.backend {
        LlmBackendKind::Mock => {
            let path = cfg
                .llm
                .mock_spec
                .as_ref()
                .ok_or_else(|| Error::Usage("llm.mock_spec is required for the mock backend".into()))?;
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            let mut spec: MockSpec = serde_json::from_str(&text)
                .map_err(|e| Error::Usage(format!("{}: invalid mock definition: {e}", path.display())))?;
            if let Some(seed) = cfg.seed {
                spec.seed = seed;
            }
            Box::new(
                MockBackend::new(spec)
                    .map_err(|e| Error::Usage(format!("{}: invalid mock definition: {e}", path.display())))?,
            )
        }
        LlmBackendKind::Http => Box::new(ChatClient::new(
            &cfg.llm.url,
            &cfg.llm.model,
            token_from_env(cfg.llm.api_key_env.as_deref()),
            Duration::from_secs(cfg.llm.timeout_secs),
            cfg.llm.retry.clone(),
        )),
    };
    Ok(Box::new(ConcurrencyLimit::new(inner, cfg.parallel.max_in_flight)))
}

// ---------------------------------------------------------------- transform

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransformSummary {
    pub samples_in: usize,
    pub samples_out: usize,
    pub violations: usize,
    pub dropped_samples: usize,
}

/// Rewrites a quadruplet dataset as triplets. The violation report, if
/// requested, is written even when the run aborts.
pub fn transform(
    cfg: &PipelineConfig,
    input: &Path,
    output: &Path,
    report_path: Option<&Path>,
) -> Result<TransformSummary, Error> {
    let samples = read_samples(input)?;
    let result = transform_dataset(&samples, &cfg.tr.rule(), &cfg.format, cfg.tr.on_violation);
    let (out, report) = match result {
        Ok(ok) => ok,
        Err(TransformError::Aborted(report)) => {
            if let Some(p) = report_path {
                write_json(p, &report)?;
            }
            return Err(TransformError::Aborted(report).into());
        }
        Err(e) => return Err(e.into()),
    };
    if !report.is_empty() {
        warn!(
            violations = report.violations.len(),
            dropped = report.dropped_samples.len(),
            "records violating the group/hatefulness rule were skipped"
        );
    }
    write_jsonl(output, &out)?;
    if let Some(p) = report_path {
        write_json(p, &report)?;
    }
    Ok(TransformSummary {
        samples_in: samples.len(),
        samples_out: out.len(),
        violations: report.violations.len(),
        dropped_samples: report.dropped_samples.len(),
    })
}

// ------------------------------------------------------------ embed / index

pub fn embed(cfg: &PipelineConfig, input: &Path, output: &Path) -> Result<usize, Error> {
    let samples = read_samples(input)?;
    let set = embed_samples(&samples, build_embedder(&cfg.embedding).as_ref())?;
    write_vectors(output, &set)?;
    Ok(set.len())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndexSummary {
    pub rows: usize,
    pub dim: usize,
    pub duplicate_contents: usize,
}

/// Builds the retrieval index over `samples`, from precomputed vectors or by
/// embedding the texts with the configured backend.
pub fn index(cfg: &PipelineConfig, samples: &Path, vectors: Option<&Path>, output: &Path) -> Result<IndexSummary, Error> {
    let samples = read_samples(samples)?;
    let set = match vectors {
        Some(p) => read_vectors(p)?,
        None => embed_samples(&samples, build_embedder(&cfg.embedding).as_ref())?,
    };
    let idx = VectorIndex::build(&samples, &set)?;
    let duplicate_contents = duplicate_content_count(&samples);
    if duplicate_contents > 0 {
        warn!(
            duplicate_contents,
            "some texts occur more than once; only the querying sample's own id is excluded"
        );
    }
    write_index(output, &idx)?;
    Ok(IndexSummary {
        rows: idx.len(),
        dim: idx.dim(),
        duplicate_contents,
    })
}

// --------------------------------------------------------------- prep-train

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum TrainLayout {
    /// `{"prompt", "completion"}`
    #[default]
    PromptCompletion,
    /// `{"instruction", "input", "output"}`
    Instruction,
}

pub fn prep_train(
    cfg: &PipelineConfig,
    train: &Path,
    index_path: &Path,
    output: &Path,
    layout: TrainLayout,
) -> Result<usize, Error> {
    let arity = cfg.ablation.arity();
    let samples = read_samples(train)?;
    let idx = read_index(index_path)?;
    let template = cfg.prompt.template(arity);
    let builder = PromptBuilder::new(&template, &cfg.format, arity, &samples)?;
    let pairs = builder.build_training_pairs(&idx, &samples)?;
    match layout {
        TrainLayout::PromptCompletion => write_jsonl(output, &pairs)?,
        TrainLayout::Instruction => {
            let records: Vec<_> = pairs.iter().map(|p| to_instruction_record(p, &template)).collect();
            write_jsonl(output, &records)?
        }
    }
    Ok(pairs.len())
}

// -------------------------------------------------------------------- infer

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: u64,
    /// Serialized quadruplets; empty when no valid answer was produced.
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnswerCount {
    pub answer: String,
    pub count: u64,
}

/// Per-sample audit line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditLine {
    pub id: u64,
    pub winner: String,
    pub quadruplets: Vec<Quadruplet>,
    pub rounds: u32,
    pub counts_top5: Vec<AnswerCount>,
    pub discarded: u64,
    pub stopped_by: StopReason,
}

/// Everything needed to replay one sample's vote under another threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub id: u64,
    pub arity: Arity,
    pub k: usize,
    pub tau: u32,
    /// Explicit round cap of the recorded run, if one was configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<u32>,
    pub vote_unit: VoteUnit,
    pub rounds: Vec<RoundVotes>,
}

#[derive(Debug, Clone)]
pub struct InferPaths {
    pub test: PathBuf,
    pub output: PathBuf,
    pub train: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub test_vectors: Option<PathBuf>,
    pub audit: Option<PathBuf>,
    pub record_votes: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InferSummary {
    pub samples: usize,
    pub threshold: usize,
    pub plurality: usize,
    pub aborted: usize,
    pub empty_predictions: usize,
}

/// Decodes an outcome into the predictions-file line. Aborted runs and runs
/// without a valid answer predict nothing.
pub fn prediction_for(
    id: u64,
    outcome: &MavOutcome,
    arity: Arity,
    rule: &TrRule,
    format: &AnnotationFormat,
) -> (PredictionLine, Vec<Quadruplet>) {
    let quads = if outcome.stopped_by == StopReason::Aborted {
        None
    } else {
        decode_winner(&outcome.winner, arity, rule, format).ok()
    };
    let output = quads.as_ref().map(|l| l.serialize(format)).unwrap_or_default();
    (
        PredictionLine { id, output },
        quads.map(|l| l.into_items()).unwrap_or_default(),
    )
}

/// The voting configuration actually run: with voting disabled, a single
/// generation from the top-ranked prompt.
pub fn effective_mav_config(cfg: &PipelineConfig) -> MavConfig {
    if cfg.ablation.mav {
        cfg.mav.clone()
    } else {
        MavConfig {
            k: 1,
            tau: 1,
            max_rounds: Some(1),
            ..cfg.mav.clone()
        }
    }
}

fn check_corpus(corpus: &[Sample], arity: Arity, format: &AnnotationFormat) -> Result<(), Error> {
    for s in corpus {
        if canonicalize_answer(&s.output, arity, format) == INVALID_KEY {
            return Err(PromptError::BadCompletion { id: s.id, arity }.into());
        }
    }
    Ok(())
}

fn build_prompts(cfg: &PipelineConfig, paths: &InferPaths, tests: &[Sample], k: usize) -> Result<Vec<Vec<String>>, Error> {
    let arity = cfg.ablation.arity();
    let template = cfg.prompt.template(arity);
    if !cfg.ablation.srag {
        template.validate()?;
        return Ok(tests.iter().map(|s| vec![template.render(None, &s.content); k]).collect());
    }

    let train_path = resolve_path(paths.train.clone(), &cfg.data.train, "training corpus")?;
    let index_path = resolve_path(paths.index.clone(), &cfg.data.index, "index")?;
    let corpus = read_samples(&train_path)?;
    if cfg.prompt.include_example_answer {
        check_corpus(&corpus, arity, &cfg.format)?;
    }
    let idx = read_index(&index_path)?;
    let vectors = match paths.test_vectors.clone().or_else(|| cfg.data.test_vectors.clone()) {
        Some(p) => read_vectors(&p)?,
        None => embed_samples(tests, build_embedder(&cfg.embedding).as_ref())?,
    };
    let by_id: HashMap<u64, &[f32]> = vectors.ids.iter().copied().zip(vectors.rows.iter().map(Vec::as_slice)).collect();
    let builder = PromptBuilder::new(&template, &cfg.format, arity, &corpus)?
        .with_example_answers(cfg.prompt.include_example_answer);
    tests
        .iter()
        .map(|s| {
            let q = by_id.get(&s.id).ok_or(RetrievalError::MissingVector(s.id))?;
            let prompts = builder.build_inference_prompts(&idx, &s.content, q, k, true)?;
            Ok(prompts.into_iter().map(|p| p.text).collect())
        })
        .collect()
}

/// Runs voting over every sample of `tests` with up to `workers` samples in
/// flight, returning outcomes in input order.
pub fn run_all(
    engine: &MavEngine<'_>,
    tests: &[Sample],
    prompts: &[Vec<String>],
    workers: usize,
) -> Result<Vec<MavOutcome>, MavError> {
    let next = AtomicUsize::new(0);
    let workers = workers.clamp(1, tests.len().max(1));
    let mut collected: Vec<(usize, Result<MavOutcome, MavError>)> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= tests.len() {
                            break out;
                        }
                        out.push((i, engine.run(tests[i].id, &prompts[i])));
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("inference worker panicked"))
            .collect()
    });
    collected.sort_by_key(|(i, _)| *i);
    collected.into_iter().map(|(_, r)| r).collect()
}

pub fn infer(cfg: &PipelineConfig, paths: &InferPaths) -> Result<InferSummary, Error> {
    cfg.validate()?;
    if paths.record_votes.is_some() && !cfg.ablation.mav {
        return Err(Error::Usage("--record-votes requires voting; drop --no-mav".into()));
    }
    let arity = cfg.ablation.arity();
    let rule = cfg.tr.rule();
    let mav_cfg = effective_mav_config(cfg);
    let tests = read_samples(&paths.test)?;
    let prompts = build_prompts(cfg, paths, &tests, mav_cfg.k)?;

    let backend = build_generator(cfg)?;
    let mut engine = MavEngine::new(&mav_cfg, backend.as_ref(), arity, &cfg.format);
    engine.params = cfg.gen_params();
    engine.max_in_flight = cfg.parallel.max_in_flight;
    info!(samples = tests.len(), k = mav_cfg.k, tau = mav_cfg.tau, %arity, "running inference");
    let outcomes = run_all(&engine, &tests, &prompts, cfg.parallel.samples)?;

    let mut preds = JsonlWriter::create(&paths.output)?;
    let mut audit = paths.audit.as_deref().map(JsonlWriter::create).transpose()?;
    let mut votes = paths.record_votes.as_deref().map(JsonlWriter::create).transpose()?;
    let mut summary = InferSummary {
        samples: tests.len(),
        ..InferSummary::default()
    };
    for (sample, outcome) in tests.iter().zip(outcomes) {
        match outcome.stopped_by {
            StopReason::Threshold => summary.threshold += 1,
            StopReason::MaxRoundsPlurality => summary.plurality += 1,
            StopReason::Aborted => summary.aborted += 1,
        }
        let (line, quads) = prediction_for(sample.id, &outcome, arity, &rule, &cfg.format);
        if line.output.is_empty() {
            summary.empty_predictions += 1;
        }
        preds.write(&line)?;
        if let Some(w) = audit.as_mut() {
            w.write(&AuditLine {
                id: sample.id,
                winner: outcome.winner.clone(),
                quadruplets: quads,
                rounds: outcome.tally.rounds_run,
                counts_top5: outcome
                    .tally
                    .top(5)
                    .into_iter()
                    .map(|(answer, count)| AnswerCount { answer, count })
                    .collect(),
                discarded: outcome.tally.discarded,
                stopped_by: outcome.stopped_by,
            })?;
        }
        if let Some(w) = votes.as_mut() {
            w.write(&VoteRecord {
                id: sample.id,
                arity,
                k: mav_cfg.k,
                tau: mav_cfg.tau,
                max_rounds: mav_cfg.max_rounds,
                vote_unit: mav_cfg.vote_unit,
                rounds: outcome.rounds,
            })?;
        }
    }
    preds.finish()?;
    if let Some(w) = audit {
        w.finish()?;
    }
    if let Some(w) = votes {
        w.finish()?;
    }
    if summary.aborted > 0 {
        warn!(aborted = summary.aborted, "samples aborted after repeated backend failures");
    }
    Ok(summary)
}

// --------------------------------------------------------------------- eval

/// Gold quadruplets by sample id. Every gold annotation must parse.
pub fn load_gold(path: &Path, format: &AnnotationFormat) -> Result<BTreeMap<u64, Vec<Quadruplet>>, Error> {
    read_samples(path)?
        .into_iter()
        .map(|s| {
            parse_annotation::<Quadruplet>(&s.output, format)
                .map(|l| (s.id, l.into_items()))
                .map_err(|source| Error::Annotation {
                    path: path.to_path_buf(),
                    id: s.id,
                    source,
                })
        })
        .collect()
}

/// Parses predictions; an output that does not parse counts as predicting
/// nothing. Duplicate ids are rejected.
pub fn parse_predictions(
    lines: &[PredictionLine],
    format: &AnnotationFormat,
    source: &Path,
) -> Result<HashMap<u64, Vec<Quadruplet>>, Error> {
    let mut out = HashMap::with_capacity(lines.len());
    let mut unparseable = 0usize;
    for line in lines {
        let quads = if line.output.trim().is_empty() {
            Vec::new()
        } else {
            match parse_annotation::<Quadruplet>(&line.output, format) {
                Ok(l) => l.into_items(),
                Err(_) => {
                    unparseable += 1;
                    Vec::new()
                }
            }
        };
        if out.insert(line.id, quads).is_some() {
            return Err(Error::DuplicatePrediction {
                path: source.to_path_buf(),
                id: line.id,
            });
        }
    }
    if unparseable > 0 {
        warn!(unparseable, "predictions that do not parse were scored as empty");
    }
    Ok(out)
}

pub fn eval(
    cfg: &PipelineConfig,
    predictions: &Path,
    gold: &Path,
    report_path: Option<&Path>,
    per_sample_path: Option<&Path>,
) -> Result<EvalReport, Error> {
    let golds = load_gold(gold, &cfg.format)?;
    let lines: Vec<PredictionLine> = read_jsonl(predictions)?;
    let preds = parse_predictions(&lines, &cfg.format, predictions)?;
    let (report, per_sample): (EvalReport, Vec<SampleScore>) = score_dataset(&preds, &golds, &cfg.scoring)?;
    if let Some(p) = report_path {
        write_json(p, &report)?;
    }
    if let Some(p) = per_sample_path {
        write_jsonl(p, &per_sample)?;
    }
    Ok(report)
}

// -------------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: u32,
    pub hard: f64,
    pub soft: f64,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// `tau,hard,soft,average` with three decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,hard,soft,average\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.3},{:.3},{:.3}", r.tau, r.hard, r.soft, r.average);
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutputs {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    /// Writes `tau_{tau}.jsonl` predictions for every threshold.
    pub predictions_dir: Option<PathBuf>,
}

pub fn validate_taus(taus: &[u32]) -> Result<(), Error> {
    if taus.is_empty() {
        return Err(Error::Usage("the threshold list is empty".into()));
    }
    if taus[0] == 0 {
        return Err(Error::Usage("thresholds must be at least 1".into()));
    }
    if taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage("thresholds must be strictly increasing".into()));
    }
    Ok(())
}

/// Predictions a recorded run would have produced at threshold `tau`.
pub fn replay_predictions(
    records: &[VoteRecord],
    tau: u32,
    rule: &TrRule,
    format: &AnnotationFormat,
) -> Result<Vec<PredictionLine>, Error> {
    records
        .iter()
        .map(|r| {
            if tau > r.tau {
                return Err(Error::TauExceedsRecorded {
                    tau,
                    recorded: r.tau,
                    id: r.id,
                });
            }
            let max_rounds = r.max_rounds.unwrap_or_else(|| default_max_rounds(tau, r.k));
            let outcome = replay_to_end(&r.rounds, tau, max_rounds);
            Ok(prediction_for(r.id, &outcome, r.arity, rule, format).0)
        })
        .collect()
}

pub fn sweep(
    cfg: &PipelineConfig,
    votes: &Path,
    gold: &Path,
    taus: &[u32],
    outputs: &SweepOutputs,
) -> Result<SweepResult, Error> {
    validate_taus(taus)?;
    let records: Vec<VoteRecord> = read_jsonl(votes)?;
    let mut seen = HashSet::with_capacity(records.len());
    if let Some(r) = records.iter().find(|r| !seen.insert(r.id)) {
        return Err(Error::Usage(format!("{}: duplicate vote record for sample {}", votes.display(), r.id)));
    }
    let golds = load_gold(gold, &cfg.format)?;
    let rule = cfg.tr.rule();
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let lines = replay_predictions(&records, tau, &rule, &cfg.format)?;
        if let Some(dir) = &outputs.predictions_dir {
            write_jsonl(&dir.join(format!("tau_{tau}.jsonl")), &lines)?;
        }
        let preds = parse_predictions(&lines, &cfg.format, votes)?;
        let (report, _) = score_dataset(&preds, &golds, &cfg.scoring)?;
        rows.push(SweepRow {
            tau,
            hard: report.hard.f1,
            soft: report.soft.f1,
            average: report.average_score,
        });
    }
    let result = SweepResult { rows };
    if let Some(p) = &outputs.csv {
        write_text(p, &result.to_csv())?;
    }
    if let Some(p) = &outputs.json {
        write_json(p, &result)?;
    }
    Ok(result)
}
