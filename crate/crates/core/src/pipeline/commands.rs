use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::backends::{build_generator, build_labeler, GeneratorSpec};
use crate::corpus::{
    corpus_stats, read_jsonl_file, synthesize_corpus, write_jsonl, CorpusError, CorpusStats, InstanceId,
    MixedTextInstance, SynthParams,
};
use crate::encoder_io::{boundary_index, make_training_examples, EncoderExample, TrainingMix};
use crate::ensemble::{aggregate, BoundaryPrediction, Rounding};
use crate::folds::{cross_label_plan, split};
use crate::metrics::{render_table, score, EvalReport, MetricsError};

use super::artifacts;
use super::config::{PipelineConfig, TrainingData, DECODER_STAGE};
use super::stages::{run_decoder, run_encoder, StageFailure, StageOutput};
use super::PipelineError;

fn read_corpus(path: &Path) -> Result<Vec<MixedTextInstance>, PipelineError> {
    if !path.is_file() {
        return Err(PipelineError::Input(format!("input file {} does not exist", path.display())));
    }
    read_jsonl_file(path).map_err(|e| match e {
        CorpusError::Invalid(problems) => {
            let listed: Vec<String> = problems.iter().take(10).map(ToString::to_string).collect();
            PipelineError::Input(format!(
                "{}: {} invalid line(s):\n  {}",
                path.display(),
                problems.len(),
                listed.join("\n  ")
            ))
        }
        other => PipelineError::Input(format!("{}: {other}", path.display())),
    })
}

fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file =
        File::open(path).map_err(|e| PipelineError::Input(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    let mut problems = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => out.push(r),
            Err(e) => problems.push(format!("line {}: {e}", i + 1)),
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(PipelineError::Input(format!(
            "{}: {} invalid line(s):\n  {}",
            path.display(),
            problems.len(),
            problems.iter().take(10).cloned().collect::<Vec<_>>().join("\n  ")
        )))
    }
}

/// Reads a prediction JSONL file (`id`, `label`, optional diagnostics).
pub fn read_predictions(path: &Path) -> Result<Vec<BoundaryPrediction>, PipelineError> {
    read_records(path)
}

pub fn read_failures(path: &Path) -> Result<Vec<StageFailure>, PipelineError> {
    read_records(path)
}

fn write_records<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let file = BufWriter::new(File::create(path)?);
    write_jsonl(file, items).map_err(|e| match e {
        CorpusError::Io(io) => PipelineError::Io(io),
        other => PipelineError::Input(other.to_string()),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Input(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn gold_map(instances: &[MixedTextInstance]) -> HashMap<InstanceId, usize> {
    instances
        .iter()
        .filter_map(|i| i.gold_boundary.map(|g| (i.id.clone(), g)))
        .collect()
}

fn check_unique_ids(instances: &[MixedTextInstance]) -> Result<(), PipelineError> {
    let mut seen = HashSet::new();
    let dups: Vec<InstanceId> = instances.iter().filter(|i| !seen.insert(&i.id)).map(|i| i.id.clone()).collect();
    if dups.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::Ids {
            message: format!("duplicate ids in corpus: {}", join_ids(&dups)),
            ids: dups,
        })
    }
}

fn join_ids(ids: &[InstanceId]) -> String {
    let shown: Vec<String> = ids.iter().take(20).map(ToString::to_string).collect();
    let more = if ids.len() > 20 { format!(" (+{} more)", ids.len() - 20) } else { String::new() };
    format!("{}{more}", shown.join(", "))
}

fn exhausted(stage: &str, out: &StageOutput) -> Result<(), PipelineError> {
    if out.transport_exhausted() {
        let first = &out.failures[0].error;
        return Err(PipelineError::BackendExhausted(format!("stage {stage}: every request failed ({first})")));
    }
    Ok(())
}

/// Generates a synthetic corpus and writes it to `output`.
pub fn cmd_synth(params: &SynthParams, output: &Path) -> Result<CorpusStats, PipelineError> {
    let corpus = synthesize_corpus(params).map_err(|e| PipelineError::Input(e.to_string()))?;
    write_records(output, &corpus)?;
    Ok(corpus_stats(&corpus, 25))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub out_dir: PathBuf,
    pub fold_sizes: Vec<usize>,
    pub decoder_predictions: usize,
    pub failures: usize,
    /// Rows per encoder training file.
    pub training_rows: Vec<(TrainingData, usize)>,
}

/// Splits the training set into folds, labels every fold with a decoder that
/// did not train on it, and writes encoder training files for each kind of
/// training data. Nothing is written unless every step succeeds.
pub fn cmd_prepare(
    config: &PipelineConfig,
    train: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<PrepareSummary, PipelineError> {
    let train = train
        .map(Path::to_path_buf)
        .or_else(|| config.paths.train.clone())
        .ok_or_else(|| PipelineError::Input("no training file given".into()))?;
    let out_dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| config.paths.work_dir.clone())
        .ok_or_else(|| PipelineError::Input("no output directory given".into()))?;
    let corpus = read_corpus(&train)?;
    check_unique_ids(&corpus)?;
    let unlabeled: Vec<InstanceId> = corpus.iter().filter(|i| i.gold_boundary.is_none()).map(|i| i.id.clone()).collect();
    if !unlabeled.is_empty() {
        return Err(PipelineError::Input(format!(
            "{} training instance(s) lack a label: {}",
            unlabeled.len(),
            join_ids(&unlabeled)
        )));
    }
    let golds = gold_map(&corpus);
    let ids: Vec<InstanceId> = corpus.iter().map(|i| i.id.clone()).collect();
    let folds = split(&ids, config.training.folds, config.training.fold_seed).map_err(|e| PipelineError::Ids {
        message: e.to_string(),
        ids: Vec::new(),
    })?;
    let plan = cross_label_plan(&folds);

    // Without a decoder only the plain training set can be written.
    let mut fold_outputs = Vec::with_capacity(plan.len());
    if let Some(decoder) = &config.decoder {
        for entry in &plan {
            let members: Vec<MixedTextInstance> = corpus
                .iter()
                .filter(|i| folds.fold_of(&i.id) == Some(entry.predict_fold))
                .cloned()
                .collect();
            let spec: &GeneratorSpec = decoder.fold_backends.get(entry.predict_fold).unwrap_or(&decoder.backend);
            let generator = build_generator(spec, &golds).map_err(PipelineError::Input)?;
            log::info!(
                "labeling fold {} ({} instances) with a decoder trained on folds {:?}",
                entry.predict_fold,
                members.len(),
                entry.train_folds
            );
            let out = run_decoder(generator.as_ref(), &members, &decoder.gen, spec.max_in_flight());
            exhausted(&format!("decoder fold {}", entry.predict_fold), &out)?;
            fold_outputs.push(out);
        }
    }

    // Decoder predictions in corpus order.
    let mut by_id: HashMap<InstanceId, BoundaryPrediction> = HashMap::new();
    let mut failures = Vec::new();
    for out in &fold_outputs {
        by_id.extend(out.predictions.iter().map(|p| (p.id.clone(), p.clone())));
        failures.extend(out.failures.iter().cloned());
    }
    let predictions: Vec<BoundaryPrediction> = corpus.iter().filter_map(|i| by_id.get(&i.id).cloned()).collect();

    let build = |mix: TrainingMix, preds: &[BoundaryPrediction]| {
        make_training_examples(&corpus, preds, mix).map_err(|e| PipelineError::Ids {
            message: e.to_string(),
            ids: Vec::new(),
        })
    };
    let source_with_gold_break = config.training.source_with_gold_break;
    let mut files: Vec<(TrainingData, Vec<EncoderExample>)> = Vec::new();
    if config.decoder.is_some() {
        files.push((TrainingData::DecoderPredictions, build(TrainingMix::default(), &predictions)?));
        files.push((
            TrainingData::TrainingSetPlusDecoderPredictions,
            build(TrainingMix { mix_source: true, source_with_gold_break }, &predictions)?,
        ));
    }
    files.push((TrainingData::TrainingSet, build(TrainingMix { mix_source: true, source_with_gold_break }, &[])?));

    std::fs::create_dir_all(&out_dir)?;
    write_json(&out_dir.join(artifacts::FOLDS), &folds)?;
    write_json(&out_dir.join(artifacts::PLAN), &plan)?;
    for (entry, out) in plan.iter().zip(&fold_outputs) {
        write_records(&out_dir.join(artifacts::fold_decoder_predictions(entry.predict_fold)), &out.predictions)?;
    }
    for (kind, rows) in &files {
        write_records(&out_dir.join(kind.file_name()), rows)?;
    }
    write_records(&out_dir.join(artifacts::PREPARE_FAILURES), &failures)?;

    Ok(PrepareSummary {
        out_dir,
        fold_sizes: folds.fold_sizes(),
        decoder_predictions: predictions.len(),
        failures: failures.len(),
        training_rows: files.iter().map(|(k, rows)| (*k, rows.len())).collect(),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub input: Option<PathBuf>,
    pub work_dir: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Reuse stage artifacts already present in the work directory.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub output: PathBuf,
    pub work_dir: PathBuf,
    pub predictions: usize,
    pub failures: usize,
}

fn run_or_resume(
    work_dir: &Path,
    stage: &str,
    resume: bool,
    run: impl FnOnce() -> Result<StageOutput, PipelineError>,
) -> Result<StageOutput, PipelineError> {
    let pred_path = work_dir.join(artifacts::stage_predictions(stage));
    let fail_path = work_dir.join(artifacts::stage_failures(stage));
    if resume && pred_path.is_file() && fail_path.is_file() {
        log::info!("stage {stage}: reusing {}", pred_path.display());
        return Ok(StageOutput {
            predictions: read_predictions(&pred_path)?,
            failures: read_failures(&fail_path)?,
        });
    }
    let out = run()?;
    write_records(&pred_path, &out.predictions)?;
    write_records(&fail_path, &out.failures)?;
    exhausted(stage, &out)?;
    Ok(out)
}

/// Runs the configured stages over `input` and writes one prediction per
/// instance, or a failure record when some stage could not produce one.
pub fn cmd_run(config: &PipelineConfig, opts: &RunOptions) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let input = opts
        .input
        .clone()
        .or_else(|| config.paths.input.clone())
        .ok_or_else(|| PipelineError::Input("no input file given".into()))?;
    let work_dir = opts
        .work_dir
        .clone()
        .or_else(|| config.paths.work_dir.clone())
        .ok_or_else(|| PipelineError::Input("no work directory given".into()))?;
    let output = opts
        .output
        .clone()
        .or_else(|| config.paths.output.clone())
        .unwrap_or_else(|| work_dir.join(artifacts::PREDICTIONS));

    let corpus = read_corpus(&input)?;
    check_unique_ids(&corpus)?;
    std::fs::create_dir_all(&work_dir)?;
    let golds = gold_map(&corpus);
    let mut stage_outputs: IndexMap<String, StageOutput> = IndexMap::new();

    let members = config.ensemble_members();
    let decoder_needed = config.use_break_at_inference || members.iter().any(|m| m == DECODER_STAGE);
    if let Some(decoder) = config.decoder.as_ref().filter(|_| decoder_needed) {
        let out = run_or_resume(&work_dir, DECODER_STAGE, opts.resume, || {
            let generator = build_generator(&decoder.backend, &golds).map_err(PipelineError::Input)?;
            Ok(run_decoder(generator.as_ref(), &corpus, &decoder.gen, decoder.backend.max_in_flight()))
        })?;
        stage_outputs.insert(DECODER_STAGE.to_owned(), out);
    }

    let mut early_failures: Vec<StageFailure> = Vec::new();
    let examples: Vec<EncoderExample> = if config.use_break_at_inference {
        let decoded: HashMap<&InstanceId, &BoundaryPrediction> = stage_outputs[DECODER_STAGE]
            .predictions
            .iter()
            .map(|p| (&p.id, p))
            .collect();
        let mut examples = Vec::new();
        for inst in &corpus {
            let Some(p) = decoded.get(&inst.id) else { continue };
            match boundary_index(inst, p.value).and_then(|b| EncoderExample::marked(inst, b)) {
                Ok(ex) => examples.push(ex),
                Err(e) => early_failures.push(StageFailure {
                    id: inst.id.clone(),
                    stage: "break".into(),
                    error: e.to_string(),
                    transport: false,
                }),
            }
        }
        write_records(&work_dir.join(artifacts::BREAK_TEXTS), &examples)?;
        examples
    } else {
        corpus.iter().map(EncoderExample::plain).collect()
    };

    for enc in &config.encoders {
        let out = run_or_resume(&work_dir, &enc.name, opts.resume, || {
            let labeler = build_labeler(&enc.backend, &golds).map_err(PipelineError::Input)?;
            Ok(run_encoder(labeler.as_ref(), &examples, &enc.name, enc.backend.max_in_flight()))
        })?;
        stage_outputs.insert(enc.name.clone(), out);
    }

    // Every instance ends up exactly once in the predictions or the failures.
    let mut failure_of: HashMap<InstanceId, StageFailure> = HashMap::new();
    for f in stage_outputs.values().flat_map(|o| &o.failures).chain(&early_failures) {
        failure_of.entry(f.id.clone()).or_insert_with(|| f.clone());
    }
    let member_preds: Vec<HashMap<&InstanceId, &BoundaryPrediction>> = members
        .iter()
        .map(|m| stage_outputs[m.as_str()].predictions.iter().map(|p| (&p.id, p)).collect())
        .collect();
    let mut groups: IndexMap<InstanceId, Vec<BoundaryPrediction>> = IndexMap::new();
    let mut failures = Vec::new();
    for inst in &corpus {
        let found: Vec<BoundaryPrediction> = member_preds.iter().filter_map(|m| m.get(&inst.id).map(|p| (*p).clone())).collect();
        if found.len() == members.len() {
            groups.insert(inst.id.clone(), found);
        } else {
            failures.push(failure_of.remove(&inst.id).unwrap_or_else(|| StageFailure {
                id: inst.id.clone(),
                stage: "ensemble".into(),
                error: "missing member prediction".into(),
                transport: false,
            }));
        }
    }
    let word_counts: HashMap<InstanceId, usize> = corpus.iter().map(|i| (i.id.clone(), i.word_count())).collect();
    let finals = aggregate(&groups, &word_counts, config.ensemble.rounding).map_err(|e| PipelineError::Ids {
        message: e.to_string(),
        ids: Vec::new(),
    })?;

    let submission: Vec<BoundaryPrediction> = finals.iter().map(BoundaryPrediction::submission).collect();
    write_records(&output, &submission)?;
    write_records(&work_dir.join(artifacts::FAILURES), &failures)?;
    Ok(RunSummary {
        output,
        work_dir,
        predictions: submission.len(),
        failures: failures.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreOptions {
    pub predictions: PathBuf,
    pub gold: PathBuf,
    /// Where `report.json` and `report.txt` go; defaults to the predictions'
    /// directory.
    pub report_dir: Option<PathBuf>,
    /// Failure records whose ids are left out of scoring.
    pub exclude: Option<PathBuf>,
    pub top: usize,
}

/// Scores a prediction file against a gold corpus and writes the report.
/// Returns the report and its console rendering.
pub fn cmd_score(opts: &ScoreOptions) -> Result<(EvalReport, String), PipelineError> {
    let mut golds = read_corpus(&opts.gold)?;
    if !opts.predictions.is_file() {
        return Err(PipelineError::Input(format!(
            "prediction file {} does not exist",
            opts.predictions.display()
        )));
    }
    let preds = read_predictions(&opts.predictions)?;
    if let Some(path) = &opts.exclude {
        let excluded: HashSet<InstanceId> = read_failures(path)?.into_iter().map(|f| f.id).collect();
        golds.retain(|g| !excluded.contains(&g.id));
    }
    let report = score(&preds, &golds).map_err(|e| match e {
        MetricsError::UnlabeledGold(_) | MetricsError::Empty => PipelineError::Input(e.to_string()),
        other => PipelineError::Ids {
            message: format!("{}: {}", describe(&other), join_ids(other.offending_ids())),
            ids: other.offending_ids().to_vec(),
        },
    })?;
    let table = render_table(&report, opts.top);
    let dir = opts
        .report_dir
        .clone()
        .or_else(|| opts.predictions.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&dir)?;
    }
    write_json(&dir.join("report.json"), &report)?;
    std::fs::write(dir.join("report.txt"), &table)?;
    Ok((report, table))
}

fn describe(e: &MetricsError) -> &'static str {
    match e {
        MetricsError::DuplicatePredictions(_) => "duplicate prediction ids",
        MetricsError::MissingPredictions(_) => "missing predictions",
        MetricsError::UnknownPredictions(_) => "predictions for unknown ids",
        MetricsError::UnlabeledGold(_) => "unlabeled gold",
        MetricsError::Empty => "empty gold",
    }
}

/// Averages existing prediction files. Every corpus id must appear exactly
/// once in every file.
pub fn cmd_ensemble(
    prediction_files: &[PathBuf],
    corpus: &Path,
    rounding: Rounding,
    output: &Path,
) -> Result<usize, PipelineError> {
    if prediction_files.is_empty() {
        return Err(PipelineError::Input("no prediction files given".into()));
    }
    let corpus = read_corpus(corpus)?;
    let mut groups: IndexMap<InstanceId, Vec<BoundaryPrediction>> =
        corpus.iter().map(|i| (i.id.clone(), Vec::new())).collect();
    let mut bad = Vec::new();
    for path in prediction_files {
        let preds = read_predictions(path)?;
        let mut seen = HashSet::new();
        for p in preds {
            if !seen.insert(p.id.clone()) {
                bad.push(p.id);
                continue;
            }
            match groups.get_mut(&p.id) {
                Some(g) => g.push(p),
                None => bad.push(p.id),
            }
        }
    }
    bad.extend(groups.iter().filter(|(_, g)| g.len() != prediction_files.len()).map(|(id, _)| id.clone()));
    if !bad.is_empty() {
        bad.sort();
        bad.dedup();
        return Err(PipelineError::Ids {
            message: format!("prediction files do not line up with the corpus: {}", join_ids(&bad)),
            ids: bad,
        });
    }
    let word_counts: HashMap<InstanceId, usize> = corpus.iter().map(|i| (i.id.clone(), i.word_count())).collect();
    let finals = aggregate(&groups, &word_counts, rounding).map_err(|e| PipelineError::Ids {
        message: e.to_string(),
        ids: Vec::new(),
    })?;
    let submission: Vec<BoundaryPrediction> = finals.iter().map(BoundaryPrediction::submission).collect();
    write_records(output, &submission)?;
    Ok(submission.len())
}
