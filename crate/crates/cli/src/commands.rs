use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use alertnet::corpus::{read_any, read_jsonl, save_jsonl, sha256_hex, CorpusRecord};
use alertnet::embedding::{train_skipgram, EmbeddingTable, SkipGramConfig};
use alertnet::evaluation::{
    attribute_effect, calibrate_threshold, catch_rate, count_above, fraction_label, render_table, CatchRateReport,
    CorpusSource, EffectFormula, FoldScores, ScoredCorpus, ScoredEntry,
};
use alertnet::model_io::ModelKind;
use alertnet::preprocess::{strip_markup, tokenize, Label, PreprocessConfig, TokenSequence};
use alertnet::registry::{load_classifier, preprocess_texts, score_all, FitSettings, StrategyRegistry};
use alertnet::synth::{generate, generate_alerts, SynthConfig};

use crate::{Cli, Command, EmbedArgs, EvaluateArgs, FormulaArg, SourceArg, SynthArgs, TrainArgs};

/// A bad invocation that clap could not catch; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(alertnet::Error::UnknownPreset { .. }) = cause.downcast_ref::<alertnet::Error>() {
            return 2;
        }
    }
    1
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest { input, output } => ingest(input, output),
        Command::Synth(a) => synth(a, cli.seed),
        Command::EmbedTrain(a) => embed_train(a, cli.seed),
        Command::Train(a) => train(a, cli),
        Command::Score {
            model,
            embedding,
            corpus,
            output,
            source,
        } => score(model, embedding, corpus, output, *source),
        Command::Calibrate { scores, fractions } => calibrate(scores, fractions),
        Command::Evaluate(a) => evaluate(a),
        Command::Effects {
            reports,
            formula,
            output,
        } => effects(reports, *formula, output.as_deref()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let outcome = read_jsonl(path).with_context(|| format!("reading corpus {}", path.display()))?;
    if !outcome.skipped.is_empty() {
        log::warn!("{}: skipped {} malformed or duplicate records", path.display(), outcome.skipped.len());
    }
    Ok(outcome.records)
}

fn load_table(path: &Path) -> Result<EmbeddingTable> {
    EmbeddingTable::load(path).with_context(|| format!("loading embedding {}", path.display()))
}

/// Percent list such as `0.1,0.3,4` into fractions.
pub fn parse_fractions(s: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let pct: f64 = part.parse().map_err(|_| usage(format!("bad review fraction `{part}`")))?;
        if !(pct > 0.0 && pct <= 100.0) {
            return Err(usage(format!("review fraction {pct}% is outside (0, 100]")));
        }
        out.push(pct / 100.0);
    }
    if out.is_empty() {
        return Err(usage("no review fractions given"));
    }
    Ok(out)
}

fn ingest(input: &Path, output: &Path) -> Result<()> {
    let outcome = read_any(input).with_context(|| format!("reading {}", input.display()))?;
    for s in &outcome.skipped {
        log::warn!("{}: record {} skipped: {}", input.display(), s.position, s.reason);
    }
    if !outcome.skipped.is_empty() {
        log::warn!("skipped {} records", outcome.skipped.len());
    }
    let records: Vec<CorpusRecord> = outcome
        .records
        .into_iter()
        .map(|r| CorpusRecord {
            text: strip_markup(&r.text),
            ..r
        })
        .collect();
    if records.is_empty() {
        log::warn!("{}: no records", input.display());
    }
    save_jsonl(output, &records).with_context(|| format!("writing {}", output.display()))?;
    log::info!("wrote {} records to {}", records.len(), output.display());
    Ok(())
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let mut cfg = SynthConfig {
        responses: a.responses,
        alerts_per_million: a.alerts_per_million,
        seed,
        id_prefix: a.id_prefix.clone(),
        ..SynthConfig::default()
    };
    if let Some(t) = a.typo_rate {
        cfg.typo_rate = t;
    }
    if let Some(h) = a.hyperbole_rate {
        cfg.hyperbole_rate = h;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let records = match a.alerts_only {
        Some(n) => generate_alerts(n, &cfg)?,
        None => generate(&cfg)?,
    };
    let alerts = records.iter().filter(|r| r.label == Label::Alert).count();
    let out: Vec<CorpusRecord> = records
        .into_iter()
        .map(|r| CorpusRecord {
            id: r.id,
            text: r.text,
            label: Some(r.label),
        })
        .collect();
    save_jsonl(&a.output, &out).with_context(|| format!("writing {}", a.output.display()))?;
    log::info!("wrote {} records ({alerts} alerts) to {}", out.len(), a.output.display());
    Ok(())
}

fn embed_train(a: &EmbedArgs, seed: u64) -> Result<()> {
    let mut corpus: Vec<TokenSequence> = Vec::new();
    for path in &a.corpora {
        corpus.extend(read_corpus(path)?.iter().map(|r| tokenize(&strip_markup(&r.text))));
    }
    let cfg = SkipGramConfig {
        dim: a.dim,
        window: a.window,
        negatives: a.negatives,
        epochs: a.epochs,
        min_count: a.min_count,
        seed,
        ..SkipGramConfig::default()
    };
    let outcome = train_skipgram(&corpus, &cfg)?;
    outcome.table.save(&a.output).with_context(|| format!("writing {}", a.output.display()))?;
    log::info!(
        "embedding: {} words, dim {}, epoch losses {:?}",
        outcome.table.vocab().content_len(),
        cfg.dim,
        outcome.epoch_losses
    );
    Ok(())
}

#[derive(Deserialize)]
struct TrainConfigFile {
    preset: String,
    #[serde(default)]
    settings: FitSettings,
}

#[derive(Serialize)]
struct FileRef {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    preset: String,
    display_name: String,
    configuration: String,
    kind: ModelKind,
    seed: u64,
    settings: FitSettings,
    corpus: FileRef,
    corpus_records: usize,
    corpus_alerts: usize,
    embedding: FileRef,
    vocab_hash: String,
    embedding_dim: usize,
    model: FileRef,
    #[serde(skip_serializing_if = "Option::is_none")]
    tuned_embedding: Option<String>,
    epoch_losses: Vec<f64>,
    tool_version: &'static str,
}

fn file_ref(path: &Path) -> Result<FileRef> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileRef {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train(a: &TrainArgs, cli: &Cli) -> Result<()> {
    let (preset, mut settings) = match (&a.preset, &a.config) {
        (Some(p), None) => (p.clone(), FitSettings::default()),
        (None, Some(path)) => {
            let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file: TrainConfigFile = serde_json::from_str(&raw).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            (file.preset, file.settings)
        }
        _ => return Err(usage("give exactly one of --preset or --config")),
    };
    let registry = StrategyRegistry::with_defaults();
    let strategy = registry.get(&preset)?;

    let t = &mut settings.train;
    t.seed = cli.seed;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = a.alert_weight {
        t.alert_weight = v;
    }
    if let Some(v) = a.width_scale {
        t.width_scale = v;
    }
    if let Some(v) = a.max_tokens {
        t.max_tokens = v;
    }
    t.trainable_embedding |= a.trainable_embedding;
    t.validate().map_err(|e| usage(e.to_string()))?;
    settings.attention_tanh |= a.attention_tanh;
    settings.baseline.logistic.seed = cli.seed;
    if let Some(k) = a.lsa_rank {
        settings.baseline.rank = k;
    }
    if let Some(l2) = a.l2 {
        settings.baseline.logistic.l2 = l2;
    }

    let mut table = load_table(&a.embedding)?;
    let records = read_corpus(&a.corpus)?;
    let mut labels = Vec::with_capacity(records.len());
    for r in &records {
        match r.label {
            Some(l) => labels.push(l),
            None => bail!("{}: record {} has no label", a.corpus.display(), r.id),
        }
    }
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let pre = PreprocessConfig {
        max_tokens: settings.train.max_tokens,
        ..PreprocessConfig::default()
    };
    let sequences = preprocess_texts(&texts, &table, &pre)?;
    log::info!("training {} on {} responses", strategy.display_name(), sequences.len());
    let fitted = strategy.fit(&mut table, &sequences, &labels, &settings)?;
    if let Some(r) = &fitted.report {
        log::info!("epoch losses {:?}", r.epoch_losses);
    }
    let c = fitted.classifier.as_ref();
    c.to_container()?
        .save(&a.output)
        .with_context(|| format!("writing {}", a.output.display()))?;
    let tuned = if settings.train.trainable_embedding && c.kind() == ModelKind::Recurrent {
        let path = with_suffix(&a.output, ".embedding.txt");
        table.save(&path).with_context(|| format!("writing {}", path.display()))?;
        Some(path.display().to_string())
    } else {
        None
    };
    let manifest = Manifest {
        preset: c.preset().to_string(),
        display_name: c.display_name(),
        configuration: c.configuration(),
        kind: c.kind(),
        seed: cli.seed,
        corpus: file_ref(&a.corpus)?,
        corpus_records: records.len(),
        corpus_alerts: labels.iter().filter(|l| **l == Label::Alert).count(),
        embedding: file_ref(&a.embedding)?,
        vocab_hash: c.vocab_hash().to_string(),
        embedding_dim: table.dim(),
        model: file_ref(&a.output)?,
        tuned_embedding: tuned,
        epoch_losses: fitted.report.map(|r| r.epoch_losses).unwrap_or_default(),
        settings,
        tool_version: env!("CARGO_PKG_VERSION"),
    };
    write_json(&with_suffix(&a.output, ".manifest.json"), &manifest)
}

fn source_of(s: SourceArg) -> CorpusSource {
    match s {
        SourceArg::Threshold => CorpusSource::Threshold,
        SourceArg::HeldoutAlerts => CorpusSource::HeldoutAlerts,
        SourceArg::Training => CorpusSource::Training,
    }
}

fn score_records(
    model: &Path,
    table: &EmbeddingTable,
    records: &[CorpusRecord],
) -> Result<(Box<dyn alertnet::registry::Classifier>, Vec<f64>)> {
    let c = load_classifier(model, table).with_context(|| format!("loading model {}", model.display()))?;
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let seqs = preprocess_texts(&texts, table, &PreprocessConfig::default())?;
    let scores = score_all(c.as_ref(), &seqs, table)?;
    Ok((c, scores))
}

fn score(model: &Path, embedding: &Path, corpus: &Path, output: &Path, source: SourceArg) -> Result<()> {
    let table = load_table(embedding)?;
    let records = read_corpus(corpus)?;
    let (_, scores) = score_records(model, &table, &records)?;
    let entries = records
        .into_iter()
        .zip(scores)
        .map(|(r, score)| ScoredEntry { id: r.id, score })
        .collect();
    let scored = ScoredCorpus::new(source_of(source), entries)?;
    write_json(output, &scored)?;
    log::info!("scored {} responses", scored.len());
    Ok(())
}

#[derive(Serialize)]
struct Cut {
    fraction: f64,
    label: String,
    threshold: f64,
    flagged: usize,
}

fn calibrate(scores: &Path, fractions: &str) -> Result<()> {
    let fractions = parse_fractions(fractions)?;
    let raw = fs::read_to_string(scores).with_context(|| format!("reading {}", scores.display()))?;
    let corpus: ScoredCorpus = serde_json::from_str(&raw).with_context(|| format!("parsing {}", scores.display()))?;
    let corpus = ScoredCorpus::new(corpus.source, corpus.entries)?;
    let values = corpus.scores();
    let mut cuts = Vec::new();
    for f in fractions {
        let t = calibrate_threshold(&values, f)?;
        cuts.push(Cut {
            fraction: f,
            label: fraction_label(f),
            threshold: t,
            flagged: count_above(&values, t),
        });
    }
    println!("{}", serde_json::to_string_pretty(&cuts)?);
    Ok(())
}

/// The `evaluate` output file.
#[derive(Serialize, Deserialize)]
pub struct EvaluationFile {
    pub fractions: Vec<f64>,
    pub reports: Vec<CatchRateReport>,
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let fractions = parse_fractions(&a.fractions)?;
    let table = load_table(&a.embedding)?;
    let mut heldout = read_corpus(&a.heldout)?;
    let before = heldout.len();
    heldout.retain(|r| r.label != Some(Label::Normal));
    if heldout.len() < before {
        log::warn!("ignored {} held-out records labelled normal", before - heldout.len());
    }
    let threshold = read_corpus(&a.threshold)?;
    let mut reports = Vec::new();
    for model in &a.models {
        let (c, heldout_scores) = score_records(model, &table, &heldout)?;
        let (_, threshold_scores) = score_records(model, &table, &threshold)?;
        let fold = FoldScores {
            heldout_alerts: heldout_scores,
            threshold_corpus: threshold_scores,
        };
        reports.push(catch_rate(&c.display_name(), &c.configuration(), &[fold], &fractions)?);
    }
    let table_text = render_table(&reports);
    write_json(&a.output, &EvaluationFile { fractions, reports })?;
    if let Some(path) = &a.table {
        fs::write(path, &table_text).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{table_text}");
    Ok(())
}

#[derive(Serialize)]
struct EffectsOutput {
    formula: EffectFormula,
    effects: Vec<EffectLine>,
}

#[derive(Serialize)]
struct EffectLine {
    attribute: String,
    effect_percent: f64,
}

fn effects(paths: &[PathBuf], formula: FormulaArg, output: Option<&Path>) -> Result<()> {
    let mut reports = Vec::new();
    for p in paths {
        let raw = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let file: EvaluationFile = serde_json::from_str(&raw).with_context(|| format!("parsing {}", p.display()))?;
        reports.extend(file.reports);
    }
    let formula = match formula {
        FormulaArg::PooledRatio => EffectFormula::PooledRatio,
        FormulaArg::PairedRelativeMean => EffectFormula::PairedRelativeMean,
    };
    let map = attribute_effect(&reports, formula)?;
    let out = EffectsOutput {
        formula,
        effects: map
            .into_iter()
            .map(|(a, v)| EffectLine {
                attribute: a.label().to_string(),
                effect_percent: v,
            })
            .collect(),
    };
    match output {
        Some(p) => write_json(p, &out)?,
        None => println!("{}", serde_json::to_string_pretty(&out)?),
    }
    Ok(())
}
