use alertnet::baseline::BaselineConfig;
use alertnet::embedding::EmbeddingTable;
use alertnet::model_io::{Container, ModelKind};
use alertnet::preprocess::{Label, TokenSequence};
use alertnet::registry::{classifier_from_container, load_classifier, FitSettings, StrategyRegistry};
use alertnet::training::TrainConfig;
use alertnet::Error;

fn table(words: &[&str]) -> EmbeddingTable {
    let rows = (0..words.len())
        .map(|i| (0..5).map(|j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5).collect())
        .collect();
    EmbeddingTable::new(words.iter().map(|s| s.to_string()).collect(), rows, None).unwrap()
}

const WORDS: &[&str] = &["i", "want", "to", "hurt", "myself", "the", "plant", "grows", "tall", "today"];

fn data() -> (Vec<TokenSequence>, Vec<Label>) {
    let texts: &[(&[&str], Label)] = &[
        (&["i", "want", "to", "hurt", "myself"], Label::Alert),
        (&["hurt", "myself", "today"], Label::Alert),
        (&["the", "plant", "grows"], Label::Normal),
        (&["the", "plant", "grows", "tall", "today"], Label::Normal),
        (&["i", "want", "the", "plant"], Label::Normal),
        (&["grows", "tall"], Label::Normal),
    ];
    (
        texts.iter().map(|(w, _)| TokenSequence::from_words(w)).collect(),
        texts.iter().map(|(_, l)| *l).collect(),
    )
}

fn settings() -> FitSettings {
    FitSettings {
        train: TrainConfig {
            epochs: 2,
            width_scale: 1.0 / 128.0,
            ..TrainConfig::default()
        },
        baseline: BaselineConfig {
            rank: 3,
            ..BaselineConfig::default()
        },
        attention_tanh: false,
    }
}

#[test]
fn every_registered_strategy_roundtrips() {
    let registry = StrategyRegistry::with_defaults();
    assert_eq!(registry.names().len(), 17);
    let (seqs, labels) = data();
    let dir = tempfile::tempdir().unwrap();
    for strategy in registry.iter() {
        let mut t = table(WORDS);
        let fitted = strategy.fit(&mut t, &seqs, &labels, &settings()).unwrap();
        let c = fitted.classifier;
        let bytes = c.to_container().unwrap().to_bytes().unwrap();
        let path = dir.path().join(format!("{}.bin", strategy.name()));
        std::fs::write(&path, &bytes).unwrap();
        let back = load_classifier(&path, &t).unwrap();
        assert_eq!(back.preset(), strategy.name());
        assert_eq!(back.display_name(), c.display_name());
        assert_eq!(back.configuration(), c.configuration());
        // stored weights are f32: a second trip is exact, the first within rounding
        assert_eq!(back.to_container().unwrap().to_bytes().unwrap(), bytes, "{}", strategy.name());
        for s in &seqs {
            let (a, b) = (c.score(s, &t).unwrap(), back.score(s, &t).unwrap());
            assert!((a - b).abs() < 1e-4, "{}: {a} vs {b}", strategy.name());
        }
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let registry = StrategyRegistry::with_defaults();
    let (seqs, labels) = data();
    let mut t = table(WORDS);
    let gru = registry.get("stacked-gru").unwrap().fit(&mut t, &seqs, &labels, &settings()).unwrap();
    let container = gru.classifier.to_container().unwrap();
    assert_eq!(container.header.kind, ModelKind::Recurrent);

    let other = table(&WORDS[1..]);
    assert!(matches!(
        classifier_from_container(&container, &other),
        Err(Error::VocabularyMismatch { .. })
    ));

    // a header whose tensor manifest disagrees with its own config
    let mut bad = container.clone();
    bad.header.tensors.swap(0, 1);
    bad.tensors.swap(0, 1);
    let reread = Container::read_from(bad.to_bytes().unwrap().as_slice()).unwrap();
    assert!(classifier_from_container(&reread, &t).is_err());

    let mut bytes = container.to_bytes().unwrap();
    bytes.truncate(bytes.len() - 4);
    assert!(Container::read_from(bytes.as_slice()).is_err());
    let mut bytes = container.to_bytes().unwrap();
    bytes[0] ^= 0xff;
    assert!(Container::read_from(bytes.as_slice()).is_err());
}
