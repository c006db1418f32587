//! Review-budget evaluation: threshold calibration on a typical-response
//! corpus, catch rates on held-out alerts, attribute effects across the model
//! grid, and population alert-rate estimates.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recurrent::{CellKind, Variant};
use crate::training::kfold_split;

/// Review fractions 0.1, 0.3, 0.5, 1, 2 and 4 percent.
pub const DEFAULT_FRACTIONS: [f64; 6] = [0.001, 0.003, 0.005, 0.01, 0.02, 0.04];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusSource {
    Threshold,
    HeldoutAlerts,
    Training,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub id: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCorpus {
    pub source: CorpusSource,
    pub entries: Vec<ScoredEntry>,
}

impl ScoredCorpus {
    pub fn new(source: CorpusSource, entries: Vec<ScoredEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !(0.0..=1.0).contains(&e.score) {
                return Err(Error::invalid(format!("score {} for {} is outside [0, 1]", e.score, e.id)));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        Ok(ScoredCorpus { source, entries })
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("review fraction {fraction} is outside (0, 1]")));
    }
    Ok(())
}

/// Number of responses a review budget allows.
pub fn review_budget(n: usize, fraction: f64) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Smallest observed score `s` with at most `floor(fraction·N)` scores
/// strictly above it. Responses scoring strictly above the threshold are
/// flagged, so tied scores at the cut are all left unflagged. When the budget
/// covers every response the threshold lies just below the minimum.
pub fn calibrate_threshold(scores: &[f64], fraction: f64) -> Result<f64> {
    check_fraction(fraction)?;
    if scores.is_empty() {
        return Err(Error::Empty("threshold corpus"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("threshold corpus contains NaN scores"));
    }
    let n = scores.len();
    let allowed = review_budget(n, fraction);
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    if allowed >= n {
        return Ok(sorted[0].next_down());
    }
    Ok(sorted[n - allowed - 1])
}

pub fn count_above(scores: &[f64], threshold: f64) -> usize {
    scores.iter().filter(|&&s| s > threshold).count()
}

/// Scores of one fold: its held-out alerts and the threshold corpus as scored
/// by that fold's model.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldScores {
    pub heldout_alerts: Vec<f64>,
    pub threshold_corpus: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldBreakdown {
    pub fold: usize,
    pub heldout: usize,
    pub thresholds: Vec<f64>,
    pub caught: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub fraction: f64,
    pub caught: usize,
    /// Percentage of held-out alerts flagged, pooled over folds.
    pub catch_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatchRateReport {
    pub model: String,
    pub configuration: String,
    pub heldout: usize,
    pub rates: Vec<RatePoint>,
    pub folds: Vec<FoldBreakdown>,
}

impl CatchRateReport {
    pub fn fractions(&self) -> Vec<f64> {
        self.rates.iter().map(|r| r.fraction).collect()
    }

    pub fn catch_rates(&self) -> Vec<f64> {
        self.rates.iter().map(|r| r.catch_rate).collect()
    }

    /// Whether catch rates never decrease as the review fraction grows.
    pub fn is_monotone(&self) -> bool {
        let mut pts: Vec<&RatePoint> = self.rates.iter().collect();
        pts.sort_by(|a, b| a.fraction.total_cmp(&b.fraction));
        pts.windows(2).all(|w| w[0].catch_rate <= w[1].catch_rate)
    }

    /// A report holding given catch percentages, with no fold detail.
    pub fn from_rates(model: impl Into<String>, configuration: impl Into<String>, fractions: &[f64], rates: &[f64]) -> Result<Self> {
        if fractions.len() != rates.len() {
            return Err(Error::shape("from_rates", "rates", fractions.len(), rates.len()));
        }
        Ok(CatchRateReport {
            model: model.into(),
            configuration: configuration.into(),
            heldout: 0,
            rates: fractions
                .iter()
                .zip(rates)
                .map(|(&fraction, &catch_rate)| RatePoint { fraction, caught: 0, catch_rate })
                .collect(),
            folds: Vec::new(),
        })
    }
}

/// Catch rates at each fraction, pooling caught counts over folds.
pub fn catch_rate(
    model: &str,
    configuration: &str,
    folds: &[FoldScores],
    fractions: &[f64],
) -> Result<CatchRateReport> {
    if fractions.is_empty() {
        return Err(Error::Empty("fraction grid"));
    }
    for &f in fractions {
        check_fraction(f)?;
    }
    let heldout: usize = folds.iter().map(|f| f.heldout_alerts.len()).sum();
    if heldout == 0 {
        return Err(Error::Empty("held-out alerts"));
    }
    let mut breakdown = Vec::with_capacity(folds.len());
    let mut caught = vec![0usize; fractions.len()];
    for (i, fold) in folds.iter().enumerate() {
        let mut thresholds = Vec::with_capacity(fractions.len());
        let mut fold_caught = Vec::with_capacity(fractions.len());
        for (j, &f) in fractions.iter().enumerate() {
            let t = calibrate_threshold(&fold.threshold_corpus, f)?;
            let c = count_above(&fold.heldout_alerts, t);
            caught[j] += c;
            thresholds.push(t);
            fold_caught.push(c);
        }
        breakdown.push(FoldBreakdown {
            fold: i,
            heldout: fold.heldout_alerts.len(),
            thresholds,
            caught: fold_caught,
        });
    }
    Ok(CatchRateReport {
        model: model.to_string(),
        configuration: configuration.to_string(),
        heldout,
        rates: fractions
            .iter()
            .zip(&caught)
            .map(|(&fraction, &c)| RatePoint {
                fraction,
                caught: c,
                catch_rate: 100.0 * c as f64 / heldout as f64,
            })
            .collect(),
        folds: breakdown,
    })
}

/// Splits the alerts into `k` folds and, for each, calls `run(fold, training_alerts, heldout_alerts)`.
pub fn cross_validate<T: Clone, F>(alerts: &[T], k: usize, seed: u64, mut run: F) -> Result<Vec<FoldScores>>
where
    F: FnMut(usize, Vec<T>, Vec<T>) -> Result<FoldScores>,
{
    let folds = kfold_split(alerts, k, seed)?;
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let train: Vec<T> = folds.iter().enumerate().filter(|(j, _)| *j != i).flat_map(|(_, f)| f.iter().cloned()).collect();
        out.push(run(i, train, folds[i].clone())?);
    }
    Ok(out)
}

/// `0.001` → `"0.1%"`, `0.04` → `"4%"`.
pub fn fraction_label(fraction: f64) -> String {
    let pct = (fraction * 100.0 * 1e6).round() / 1e6;
    format!("{pct}%")
}

/// Aligned text table: model, configuration, one column per fraction.
pub fn render_table(reports: &[CatchRateReport]) -> String {
    let fractions = reports.first().map(CatchRateReport::fractions).unwrap_or_default();
    let mut header = vec!["Model".to_string(), "Configuration".to_string()];
    header.extend(fractions.iter().map(|&f| fraction_label(f)));
    let mut rows = vec![header];
    for r in reports {
        let mut row = vec![r.model.clone(), r.configuration.clone()];
        row.extend(r.rates.iter().map(|p| format!("{:.1}", p.catch_rate)));
        rows.push(row);
    }
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            if c < 2 {
                let _ = write!(line, "{cell:<w$}", w = widths[c]);
            } else {
                let _ = write!(line, "{cell:>w$}", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attribute {
    Lstm,
    Stacked,
    Bidirectional,
    Attention,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [Attribute::Lstm, Attribute::Stacked, Attribute::Bidirectional, Attribute::Attention];

    pub fn label(self) -> &'static str {
        match self {
            Attribute::Lstm => "LSTM vs GRU",
            Attribute::Stacked => "Stacked",
            Attribute::Bidirectional => "Bidirectional",
            Attribute::Attention => "Attention",
        }
    }

    fn has(self, v: Variant) -> bool {
        match self {
            Attribute::Lstm => v.cell == CellKind::Lstm,
            Attribute::Stacked => v.stacked,
            Attribute::Bidirectional => v.bidirectional,
            Attribute::Attention => v.attention,
        }
    }

    fn flip(self, v: Variant) -> Variant {
        let mut w = v;
        match self {
            Attribute::Lstm => {
                w.cell = match v.cell {
                    CellKind::Gru => CellKind::Lstm,
                    CellKind::Lstm => CellKind::Gru,
                }
            }
            Attribute::Stacked => w.stacked = !v.stacked,
            Attribute::Bidirectional => w.bidirectional = !v.bidirectional,
            Attribute::Attention => w.attention = !v.attention,
        }
        w
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectFormula {
    /// `100·(Σ catch_with / Σ catch_without − 1)` over all paired cells.
    #[default]
    PooledRatio,
    /// `100·mean((catch_with − catch_without) / catch_without)` over all paired cells.
    PairedRelativeMean,
}

fn lookup_variant(model: &str) -> Option<Variant> {
    let m = model.trim();
    Variant::all()
        .into_iter()
        .find(|v| v.name().eq_ignore_ascii_case(m) || v.display_name().eq_ignore_ascii_case(m))
}

/// Percentage effect of each attribute across the 16-model grid. Each model
/// is paired with the one that differs only in that attribute. Reports for
/// other models (the baseline) are ignored.
pub fn attribute_effect(reports: &[CatchRateReport], formula: EffectFormula) -> Result<BTreeMap<Attribute, f64>> {
    let mut grid: BTreeMap<String, &CatchRateReport> = BTreeMap::new();
    for r in reports {
        if let Some(v) = lookup_variant(&r.model) {
            grid.insert(v.name(), r);
        }
    }
    let missing: Vec<String> = Variant::all().iter().map(Variant::name).filter(|n| !grid.contains_key(n)).collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteGrid(missing));
    }
    let fractions = grid.values().next().map(|r| r.fractions()).unwrap_or_default();
    if fractions.is_empty() || grid.values().any(|r| r.fractions() != fractions) {
        return Err(Error::invalid("reports do not share one nonempty fraction grid"));
    }
    let mut out = BTreeMap::new();
    for attr in Attribute::ALL {
        let (mut sum_with, mut sum_without, mut rel, mut cells) = (0.0, 0.0, 0.0, 0usize);
        for v in Variant::all().into_iter().filter(|v| attr.has(*v)) {
            let with = grid[&v.name()].catch_rates();
            let without = grid[&attr.flip(v).name()].catch_rates();
            for (w, wo) in with.iter().zip(&without) {
                sum_with += w;
                sum_without += wo;
                if formula == EffectFormula::PairedRelativeMean {
                    if *wo == 0.0 {
                        return Err(Error::invalid(format!("zero catch rate for {} makes the relative effect undefined", attr.flip(v))));
                    }
                    rel += (w - wo) / wo;
                }
                cells += 1;
            }
        }
        let effect = match formula {
            EffectFormula::PooledRatio => {
                if sum_without == 0.0 {
                    return Err(Error::invalid(format!("no catches without {}", attr.label())));
                }
                100.0 * (sum_with / sum_without - 1.0)
            }
            EffectFormula::PairedRelativeMean => 100.0 * rel / cells as f64,
        };
        out.insert(attr, effect);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlertRateEstimate {
    /// Estimated true alerts in the scored population.
    pub total_low: f64,
    pub total_high: f64,
    pub per_million_low: f64,
    pub per_million_high: f64,
}

/// Scales confirmed alerts by the model's catch rate. The catch band
/// `[catch_low, catch_high]` gives the range: the high catch rate yields the
/// low estimate.
pub fn estimate_alert_rate(
    flagged_reviewed: u64,
    confirmed: u64,
    catch_low: f64,
    catch_high: f64,
    population: u64,
) -> Result<AlertRateEstimate> {
    if confirmed > flagged_reviewed {
        return Err(Error::invalid("confirmed alerts exceed reviewed responses"));
    }
    for c in [catch_low, catch_high] {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::invalid(format!("catch rate {c} is outside (0, 1]")));
        }
    }
    if catch_low > catch_high {
        return Err(Error::invalid("catch band is reversed"));
    }
    if population == 0 {
        return Err(Error::invalid("population must be positive"));
    }
    let total_low = confirmed as f64 / catch_high;
    let total_high = confirmed as f64 / catch_low;
    let per_million = |t: f64| t / population as f64 * 1e6;
    Ok(AlertRateEstimate {
        total_low,
        total_high,
        per_million_low: per_million(total_low),
        per_million_high: per_million(total_high),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_distinct_scores() {
        let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let t = calibrate_threshold(&scores, 0.2).unwrap();
        assert_eq!(count_above(&scores, t), 2);
        assert_eq!(t, 0.8);
    }

    #[test]
    fn full_budget_flags_everything() {
        let scores = [0.3, 0.0, 0.9];
        let t = calibrate_threshold(&scores, 1.0).unwrap();
        assert!(t < 0.0);
        assert_eq!(count_above(&scores, t), 3);
    }

    #[test]
    fn ties_flag_none() {
        let scores = [0.4; 10];
        let t = calibrate_threshold(&scores, 0.5).unwrap();
        assert_eq!(count_above(&scores, t), 0);
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(calibrate_threshold(&[0.1], 0.0).is_err());
        assert!(calibrate_threshold(&[0.1], -0.1).is_err());
        assert!(calibrate_threshold(&[0.1], 1.5).is_err());
        assert!(calibrate_threshold(&[], 0.1).is_err());
    }

    #[test]
    fn perfect_model_catches_all() {
        let threshold: Vec<f64> = (0..1000).map(|i| 0.9 * i as f64 / 999.0).collect();
        let folds = [FoldScores { heldout_alerts: vec![1.0; 50], threshold_corpus: threshold }];
        let r = catch_rate("m", "(1)", &folds, &DEFAULT_FRACTIONS).unwrap();
        assert!(r.catch_rates().iter().all(|&c| c == 100.0));
        assert!(catch_rate("m", "", &[FoldScores { heldout_alerts: vec![], threshold_corpus: vec![0.5] }], &[0.1]).is_err());
    }

    #[test]
    fn alert_rate_closed_forms() {
        let e = estimate_alert_rate(20, 10, 0.5, 0.5, 1_000_000).unwrap();
        assert_eq!(e.per_million_low, 20.0);
        assert_eq!(e.per_million_high, 20.0);
        let z = estimate_alert_rate(200, 0, 0.8, 0.9, 1000).unwrap();
        assert_eq!((z.total_low, z.total_high), (0.0, 0.0));
        assert!(estimate_alert_rate(10, 1, 0.0, 0.5, 10).is_err());
        assert!(estimate_alert_rate(1, 2, 0.5, 0.5, 10).is_err());
    }

    #[test]
    fn fraction_labels() {
        let labels: Vec<String> = DEFAULT_FRACTIONS.iter().map(|&f| fraction_label(f)).collect();
        assert_eq!(labels, ["0.1%", "0.3%", "0.5%", "1%", "2%", "4%"]);
    }

    fn grid(rate: impl Fn(Variant) -> f64) -> Vec<CatchRateReport> {
        Variant::all()
            .into_iter()
            .map(|v| CatchRateReport::from_rates(v.display_name(), v.configuration(1.0), &[0.01, 0.02], &[rate(v), rate(v) + 1.0]).unwrap())
            .collect()
    }

    #[test]
    fn identical_pairs_have_no_effect() {
        for f in [EffectFormula::PooledRatio, EffectFormula::PairedRelativeMean] {
            let e = attribute_effect(&grid(|_| 50.0), f).unwrap();
            assert!(e.values().all(|&x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn doubling_gives_hundred_percent() {
        let reports: Vec<CatchRateReport> = Variant::all()
            .into_iter()
            .map(|v| {
                let base = if v.attention { 2.0 } else { 1.0 };
                CatchRateReport::from_rates(v.name(), "", &[0.01, 0.04], &[10.0 * base, 20.0 * base]).unwrap()
            })
            .collect();
        for f in [EffectFormula::PooledRatio, EffectFormula::PairedRelativeMean] {
            let e = attribute_effect(&reports, f).unwrap();
            assert!((e[&Attribute::Attention] - 100.0).abs() < 1e-12);
            assert!(e[&Attribute::Stacked].abs() < 1e-12);
        }
    }

    #[test]
    fn incomplete_grid_lists_missing() {
        let mut reports = grid(|_| 50.0);
        reports.retain(|r| r.model != "GRU");
        match attribute_effect(&reports, EffectFormula::default()) {
            Err(Error::IncompleteGrid(m)) => assert_eq!(m, vec!["gru".to_string()]),
            other => panic!("{other:?}"),
        }
    }
}
