//! Desk-scale synthetic experiment: a labelled training corpus, held-out
//! alerts and a threshold corpus, an embedding trained on the unlabelled
//! text, and catch-rate reports for chosen presets.

use serde::{Deserialize, Serialize};

use crate::embedding::{train_skipgram, EmbeddingTable, SkipGramConfig};
use crate::error::Result;
use crate::evaluation::{catch_rate, CatchRateReport, FoldScores, DEFAULT_FRACTIONS};
use crate::preprocess::{strip_markup, tokenize, Label, PreprocessConfig, TokenSequence};
use crate::registry::{preprocess_texts, score_all, FitSettings, Strategy};
use crate::synth::{generate, generate_alerts, SynthConfig};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub train_responses: usize,
    /// Alert share of the training corpus, per million.
    pub train_alerts_per_million: f64,
    pub heldout_alerts: usize,
    pub threshold_responses: usize,
    pub threshold_alerts_per_million: f64,
    pub skipgram: SkipGramConfig,
    pub preprocess: PreprocessConfig,
    pub fractions: Vec<f64>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            seed: 7,
            train_responses: 10_000,
            train_alerts_per_million: 10_000.0,
            heldout_alerts: 200,
            threshold_responses: 20_000,
            threshold_alerts_per_million: 85.0,
            skipgram: SkipGramConfig {
                dim: 32,
                epochs: 3,
                ..SkipGramConfig::default()
            },
            preprocess: PreprocessConfig::default(),
            fractions: DEFAULT_FRACTIONS.to_vec(),
        }
    }
}

pub struct BenchmarkData {
    pub table: EmbeddingTable,
    pub train: Vec<TokenSequence>,
    pub labels: Vec<Label>,
    pub heldout: Vec<TokenSequence>,
    pub threshold: Vec<TokenSequence>,
    pub fractions: Vec<f64>,
}

/// Generates the three corpora from sub-seeds of `cfg.seed`, trains the
/// embedding on the training and threshold text, and resolves every response.
pub fn prepare(cfg: &BenchmarkConfig) -> Result<BenchmarkData> {
    let synth = |responses, per_million, offset: u64, prefix: &str| SynthConfig {
        responses,
        alerts_per_million: per_million,
        seed: cfg.seed.wrapping_mul(1000).wrapping_add(offset),
        id_prefix: prefix.into(),
        ..SynthConfig::default()
    };
    let train = generate(&synth(cfg.train_responses, cfg.train_alerts_per_million, 1, "t"))?;
    let heldout = generate_alerts(cfg.heldout_alerts, &synth(0, 0.0, 2, "h"))?;
    let threshold = generate(&synth(cfg.threshold_responses, cfg.threshold_alerts_per_million, 3, "c"))?;

    let corpus: Vec<TokenSequence> = train
        .iter()
        .chain(&threshold)
        .map(|r| tokenize(&strip_markup(&r.text)))
        .collect();
    let skipgram = SkipGramConfig {
        seed: cfg.seed,
        ..cfg.skipgram.clone()
    };
    let table = train_skipgram(&corpus, &skipgram)?.table;

    let texts = |rs: &[crate::synth::SynthRecord]| rs.iter().map(|r| r.text.clone()).collect::<Vec<_>>();
    Ok(BenchmarkData {
        train: preprocess_texts(&texts(&train), &table, &cfg.preprocess)?,
        labels: train.iter().map(|r| r.label).collect(),
        heldout: preprocess_texts(&texts(&heldout), &table, &cfg.preprocess)?,
        threshold: preprocess_texts(&texts(&threshold), &table, &cfg.preprocess)?,
        table,
        fractions: cfg.fractions.clone(),
    })
}

/// Fits one strategy on the training corpus and reports catch rates for the
/// held-out alerts against the threshold corpus.
pub fn run_strategy(data: &BenchmarkData, strategy: &dyn Strategy, settings: &FitSettings) -> Result<CatchRateReport> {
    let mut table = data.table.clone();
    let fitted = strategy.fit(&mut table, &data.train, &data.labels, settings)?;
    let c = fitted.classifier.as_ref();
    let folds = [FoldScores {
        heldout_alerts: score_all(c, &data.heldout, &table)?,
        threshold_corpus: score_all(c, &data.threshold, &table)?,
    }];
    catch_rate(&strategy.display_name(), &c.configuration(), &folds, &data.fractions)
}

/// Training settings used for the desk-scale runs.
pub fn desk_settings(seed: u64) -> FitSettings {
    FitSettings {
        train: TrainConfig {
            epochs: 6,
            batch_size: 32,
            learning_rate: 5e-3,
            seed,
            alert_weight: 10.0,
            width_scale: 1.0 / 16.0,
            ..TrainConfig::default()
        },
        ..FitSettings::default()
    }
}
