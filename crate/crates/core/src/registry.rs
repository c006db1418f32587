//! Named model strategies selected at runtime: the sixteen recurrent presets
//! and the bag-of-words baseline, all behind [`Strategy`] and [`Classifier`].

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{BaselineConfig, BaselineModel, LogisticModel, LsaProjection, TfidfModel};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model_io::{Container, Header, ModelKind, Tensor, TensorEntry};
use crate::numerics::{Matrix, Vector};
use crate::preprocess::{Label, PreprocessConfig, Preprocessor, TokenSequence};
use crate::recurrent::{ModelConfig, ModelParams, RecurrentModel, Variant};
use crate::training::{train, Example, TrainConfig, TrainReport};

pub const BASELINE: &str = "baseline";

/// A fitted model that scores preprocessed token sequences.
pub trait Classifier: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn preset(&self) -> &str;
    fn display_name(&self) -> String;
    fn configuration(&self) -> String;
    fn vocab_hash(&self) -> &str;
    fn score(&self, tokens: &TokenSequence, table: &EmbeddingTable) -> Result<f64>;
    fn to_container(&self) -> Result<Container>;
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub attention_tanh: bool,
}

pub struct Fitted {
    pub classifier: Box<dyn Classifier>,
    /// Recurrent strategies report per-epoch losses.
    pub report: Option<TrainReport>,
}

/// A trainable model family registered under a name.
pub trait Strategy: Send + Sync {
    fn name(&self) -> String;
    fn display_name(&self) -> String;
    fn configuration(&self, width_scale: f64) -> String;
    /// Fits on resolved token sequences. Recurrent strategies may update the
    /// table when the settings make the embedding trainable.
    fn fit(
        &self,
        table: &mut EmbeddingTable,
        sequences: &[TokenSequence],
        labels: &[Label],
        settings: &FitSettings,
    ) -> Result<Fitted>;
}

pub struct RecurrentStrategy {
    pub variant: Variant,
}

impl Strategy for RecurrentStrategy {
    fn name(&self) -> String {
        self.variant.name()
    }

    fn display_name(&self) -> String {
        self.variant.display_name()
    }

    fn configuration(&self, width_scale: f64) -> String {
        self.variant.configuration(width_scale)
    }

    fn fit(
        &self,
        table: &mut EmbeddingTable,
        sequences: &[TokenSequence],
        labels: &[Label],
        settings: &FitSettings,
    ) -> Result<Fitted> {
        if sequences.len() != labels.len() {
            return Err(Error::shape("fit", "labels", sequences.len(), labels.len()));
        }
        let cfg = &settings.train;
        let mut config = self.variant.config(table.dim(), cfg.width_scale);
        config.attention_tanh = settings.attention_tanh;
        let mut model = RecurrentModel::new(config, cfg.seed)?;
        let examples: Vec<Example> = sequences
            .iter()
            .zip(labels)
            .map(|(s, &label)| Example { ids: table.vocab().ids(s), label })
            .collect();
        let report = train(&mut model, table, &examples, cfg)?;
        Ok(Fitted {
            classifier: Box::new(RecurrentClassifier {
                variant: self.variant,
                preset: self.variant.name(),
                width_scale: cfg.width_scale,
                max_tokens: cfg.max_tokens,
                vocab_hash: table.vocab().hash(),
                model,
            }),
            report: Some(report),
        })
    }
}

pub struct BaselineStrategy;

impl Strategy for BaselineStrategy {
    fn name(&self) -> String {
        BASELINE.into()
    }

    fn display_name(&self) -> String {
        "BOW + LSA + Logistic Regression".into()
    }

    fn configuration(&self, _width_scale: f64) -> String {
        "-".into()
    }

    fn fit(
        &self,
        table: &mut EmbeddingTable,
        sequences: &[TokenSequence],
        labels: &[Label],
        settings: &FitSettings,
    ) -> Result<Fitted> {
        let docs: Vec<Vec<&str>> = sequences.iter().map(|s| s.texts().collect()).collect();
        let model = BaselineModel::fit(&docs, labels, &settings.baseline)?;
        Ok(Fitted {
            classifier: Box::new(BaselineClassifier {
                model,
                config: settings.baseline.clone(),
                vocab_hash: table.vocab().hash(),
                embedding_dim: table.dim(),
            }),
            report: None,
        })
    }
}

pub struct RecurrentClassifier {
    pub variant: Variant,
    preset: String,
    pub width_scale: f64,
    pub max_tokens: usize,
    vocab_hash: String,
    pub model: RecurrentModel,
}

#[derive(Serialize, Deserialize)]
struct RecurrentHeaderConfig {
    model: ModelConfig,
    width_scale: f64,
    max_tokens: usize,
}

fn manifest_of(params: &ModelParams) -> Vec<TensorEntry> {
    params
        .tensors()
        .into_iter()
        .map(|t| TensorEntry {
            name: t.name,
            shape: [t.shape.0, t.shape.1],
        })
        .collect()
}

impl RecurrentClassifier {
    fn from_container(c: &Container) -> Result<Self> {
        let variant: Variant = c.header.preset.parse()?;
        let hc: RecurrentHeaderConfig = serde_json::from_value(c.header.config.clone())?;
        let mut params = ModelParams::zeros(&hc.model);
        c.verify_manifest(&manifest_of(&params))?;
        for (slot, t) in params.slices_mut().into_iter().zip(&c.tensors) {
            slot.copy_from_slice(&t.data);
        }
        Ok(RecurrentClassifier {
            variant,
            preset: c.header.preset.clone(),
            width_scale: hc.width_scale,
            max_tokens: hc.max_tokens,
            vocab_hash: c.header.vocab_hash.clone(),
            model: RecurrentModel::from_parts(hc.model, params)?,
        })
    }
}

impl Classifier for RecurrentClassifier {
    fn kind(&self) -> ModelKind {
        ModelKind::Recurrent
    }

    fn preset(&self) -> &str {
        &self.preset
    }

    fn display_name(&self) -> String {
        self.variant.display_name()
    }

    fn configuration(&self) -> String {
        self.variant.configuration(self.width_scale)
    }

    fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    fn score(&self, tokens: &TokenSequence, table: &EmbeddingTable) -> Result<f64> {
        let mut ids = table.vocab().ids(tokens);
        ids.truncate(self.max_tokens);
        self.model.forward(&table.embed_ids(&ids))
    }

    fn to_container(&self) -> Result<Container> {
        let tensors = self
            .model
            .params
            .tensors()
            .into_iter()
            .map(|t| Tensor {
                name: t.name,
                shape: [t.shape.0, t.shape.1],
                data: t.data.to_vec(),
            })
            .collect();
        Container::new(
            Header {
                kind: ModelKind::Recurrent,
                preset: self.preset.clone(),
                configuration: self.configuration(),
                config: serde_json::to_value(RecurrentHeaderConfig {
                    model: self.model.config().clone(),
                    width_scale: self.width_scale,
                    max_tokens: self.max_tokens,
                })?,
                vocab_hash: self.vocab_hash.clone(),
                embedding_dim: self.model.config().input_dim,
                tensors: Vec::new(),
                extra: serde_json::Value::Null,
            },
            tensors,
        )
    }
}

pub struct BaselineClassifier {
    pub model: BaselineModel,
    pub config: BaselineConfig,
    vocab_hash: String,
    embedding_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct BaselineExtra {
    terms: Vec<String>,
    document_frequencies: Vec<usize>,
    documents: usize,
}

impl BaselineClassifier {
    fn from_container(c: &Container) -> Result<Self> {
        let config: BaselineConfig = serde_json::from_value(c.header.config.clone())?;
        let extra: BaselineExtra = serde_json::from_value(c.header.extra.clone())?;
        let tfidf = TfidfModel::from_parts(extra.terms, extra.document_frequencies, extra.documents)?;
        let basis = c.tensor("lsa.basis")?;
        let k = basis.shape[0];
        let d = tfidf.dim();
        c.verify_manifest(&[
            TensorEntry { name: "lsa.basis".into(), shape: [k, d] },
            TensorEntry { name: "lsa.singular_values".into(), shape: [k, 1] },
            TensorEntry { name: "logistic.w".into(), shape: [1, k] },
            TensorEntry { name: "logistic.b".into(), shape: [1, 1] },
        ])?;
        let lsa = LsaProjection::from_basis(
            Matrix::from_vec(k, d, basis.data.clone())?,
            c.tensor("lsa.singular_values")?.data.clone(),
        )?;
        let logistic = LogisticModel {
            weights: Vector::from(c.tensor("logistic.w")?.data.clone()),
            intercept: c.tensor("logistic.b")?.data[0],
        };
        Ok(BaselineClassifier {
            model: BaselineModel { tfidf, lsa, logistic },
            config,
            vocab_hash: c.header.vocab_hash.clone(),
            embedding_dim: c.header.embedding_dim,
        })
    }
}

impl Classifier for BaselineClassifier {
    fn kind(&self) -> ModelKind {
        ModelKind::Baseline
    }

    fn preset(&self) -> &str {
        BASELINE
    }

    fn display_name(&self) -> String {
        BaselineStrategy.display_name()
    }

    fn configuration(&self) -> String {
        BaselineStrategy.configuration(1.0)
    }

    fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    fn score(&self, tokens: &TokenSequence, _table: &EmbeddingTable) -> Result<f64> {
        let doc: Vec<&str> = tokens.texts().collect();
        Ok(self.model.score(&doc))
    }

    fn to_container(&self) -> Result<Container> {
        let m = &self.model;
        let k = m.lsa.rank();
        let tensors = vec![
            Tensor {
                name: "lsa.basis".into(),
                shape: [k, m.lsa.input_dim()],
                data: m.lsa.basis().as_slice().to_vec(),
            },
            Tensor {
                name: "lsa.singular_values".into(),
                shape: [k, 1],
                data: m.lsa.singular_values().to_vec(),
            },
            Tensor {
                name: "logistic.w".into(),
                shape: [1, k],
                data: m.logistic.weights.as_slice().to_vec(),
            },
            Tensor {
                name: "logistic.b".into(),
                shape: [1, 1],
                data: vec![m.logistic.intercept],
            },
        ];
        Container::new(
            Header {
                kind: ModelKind::Baseline,
                preset: BASELINE.into(),
                configuration: self.configuration(),
                config: serde_json::to_value(&self.config)?,
                vocab_hash: self.vocab_hash.clone(),
                embedding_dim: self.embedding_dim,
                tensors: Vec::new(),
                extra: serde_json::to_value(BaselineExtra {
                    terms: m.tfidf.terms().map(String::from).collect(),
                    document_frequencies: m.tfidf.document_frequencies().to_vec(),
                    documents: m.tfidf.n_docs(),
                })?,
            },
            tensors,
        )
    }
}

/// Strategies in registration order, looked up by name.
#[derive(Default)]
pub struct StrategyRegistry {
    entries: Vec<Box<dyn Strategy>>,
}

impl StrategyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The sixteen recurrent presets followed by the baseline.
    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        for variant in Variant::all() {
            r.register(Box::new(RecurrentStrategy { variant }));
        }
        r.register(Box::new(BaselineStrategy));
        r
    }

    /// Adds a strategy, replacing any registered under the same name.
    pub fn register(&mut self, strategy: Box<dyn Strategy>) {
        let name = strategy.name();
        match self.entries.iter().position(|s| s.name() == name) {
            Some(i) => self.entries[i] = strategy,
            None => self.entries.push(strategy),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|s| s.name()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn Strategy> {
        self.entries
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::UnknownPreset {
                name: name.to_string(),
                valid: self.names(),
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Strategy> {
        self.entries.iter().map(|s| s.as_ref())
    }
}

/// Rebuilds a classifier and refuses it when its vocabulary or embedding
/// width differs from `table`.
pub fn classifier_from_container(c: &Container, table: &EmbeddingTable) -> Result<Box<dyn Classifier>> {
    let actual = table.vocab().hash();
    if c.header.vocab_hash != actual {
        return Err(Error::VocabularyMismatch {
            expected: c.header.vocab_hash.clone(),
            actual,
        });
    }
    if c.header.embedding_dim != table.dim() {
        return Err(Error::shape("load_classifier", "embedding dim", c.header.embedding_dim, table.dim()));
    }
    Ok(match c.header.kind {
        ModelKind::Recurrent => Box::new(RecurrentClassifier::from_container(c)?),
        ModelKind::Baseline => Box::new(BaselineClassifier::from_container(c)?),
    })
}

pub fn load_classifier(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<Box<dyn Classifier>> {
    classifier_from_container(&Container::load(path)?, table)
}

/// Cleans, tokenizes and resolves each text against the table's vocabulary.
/// Work is split into fixed chunks so output order never depends on threads.
pub fn preprocess_texts<S: AsRef<str> + Sync>(
    texts: &[S],
    table: &EmbeddingTable,
    cfg: &PreprocessConfig,
) -> Result<Vec<TokenSequence>> {
    let chunks: Vec<Result<Vec<TokenSequence>>> = texts
        .par_chunks(256)
        .map(|chunk| {
            let p = Preprocessor::new(table.vocab(), cfg.clone())?;
            Ok(chunk.iter().map(|t| p.process(t.as_ref())).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(texts.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn score_all(classifier: &dyn Classifier, sequences: &[TokenSequence], table: &EmbeddingTable) -> Result<Vec<f64>> {
    sequences.par_iter().map(|s| classifier.score(s, table)).collect()
}
