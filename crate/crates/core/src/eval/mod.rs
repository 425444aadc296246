//! Fidelity, utility and fairness assessment of a synthetic table.

pub mod classifier;
pub mod fairness;
pub mod fidelity;
pub mod sweep;

pub use classifier::{auc, binary_labels, features, BuiltinClassifier, ClassifierKind, Features};
pub use fairness::{composite, dpr, eor, eor_detailed, EorResult, MetricWeights};
pub use fidelity::{column_density_error, dcr, pairwise_correlation_error, DcrScores};
pub use sweep::{sweep_csv, sweep_svg, tradeoff_sweep, SweepRow};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TabularEncoder};
use crate::error::{Error, Result};
use crate::rng;

pub const DENSITY_DEFINITION: &str = "mean over columns of KS statistic (numerical) or total variation (categorical)";
pub const CORRELATION_DEFINITION: &str =
    "mean |difference| of Pearson (num-num), Cramer's V (cat-cat), correlation ratio (num-cat) over column pairs";
pub const DCR_DEFINITION: &str = "distance: median synthetic-to-train nearest distance over median holdout-to-train; \
closeness: fraction of synthetic rows strictly nearer to train than to holdout (train subsampled to holdout size)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seeds: Vec<u64>,
    pub level: Option<u8>,
    pub sensitive_attribute: String,
    pub classifier: ClassifierKind,
    pub weights: MetricWeights,
    pub eor_degenerate: bool,
    pub n_synthetic: usize,
    pub n_test: usize,
    pub density_definition: String,
    pub correlation_definition: String,
    pub dcr_definition: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub density: f64,
    pub correlation: f64,
    pub dcr_distance: f64,
    pub dcr_closeness: f64,
    pub auc: f64,
    pub dpr: f64,
    pub eor: f64,
    pub composite: f64,
    pub metadata: ReportMetadata,
}

/// Real splits and synthetic rows to score, all under one schema.
pub struct EvalInputs<'a> {
    pub encoder: &'a TabularEncoder,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub synthetic: &'a Dataset,
    pub classifier: ClassifierKind,
    pub weights: MetricWeights,
    /// Sensitive column the fairness ratios are computed over.
    pub fairness_attribute: &'a str,
    pub seed: u64,
}

/// Scores a synthetic table: fidelity against the train split, privacy
/// against train/test, and train-on-synthetic test-on-real utility and
/// fairness.
pub fn evaluate(inp: &EvalInputs<'_>) -> Result<FairnessReport> {
    let schema = inp.train.schema();
    let group_col = schema.index_of(inp.fairness_attribute)?;
    if !schema.sensitive.iter().any(|s| s == inp.fairness_attribute) {
        return Err(Error::Config(format!("{} is not a sensitive column", inp.fairness_attribute)));
    }
    let density = column_density_error(inp.train, inp.synthetic)?;
    let correlation = pairwise_correlation_error(inp.train, inp.synthetic)?;

    let enc_train = inp.encoder.encode(inp.train)?;
    let enc_test = inp.encoder.encode(inp.test)?;
    let enc_synth = inp.encoder.encode(inp.synthetic)?;
    let mut pick: Vec<usize> = (0..enc_train.rows()).collect();
    pick.shuffle(&mut rng::stream(rng::derive(inp.seed, "dcr"), 0));
    pick.truncate(enc_test.rows().min(enc_train.rows()));
    pick.sort_unstable();
    let scores = dcr(&enc_train.select(&pick), &enc_test, &enc_synth)?;

    let x_synth = features(inp.encoder, inp.synthetic)?;
    let y_synth = binary_labels(inp.synthetic)?;
    let clf = BuiltinClassifier::fit(&x_synth, &y_synth, inp.classifier)?;
    let x_test = features(inp.encoder, inp.test)?;
    let y_test = binary_labels(inp.test)?;
    let proba = clf.predict_proba(&x_test);
    let auc = auc(&proba, &y_test)?;
    let preds: Vec<bool> = proba.iter().map(|p| *p >= 0.5).collect();
    let groups = inp.test.categorical(group_col);
    let dpr = dpr(&preds, groups)?;
    let eor = eor_detailed(&preds, &y_test, groups)?;

    Ok(FairnessReport {
        density,
        correlation,
        dcr_distance: scores.distance,
        dcr_closeness: scores.closeness,
        auc,
        dpr,
        eor: eor.value,
        composite: composite(auc, dpr, eor.value, &inp.weights),
        metadata: ReportMetadata {
            seeds: vec![inp.seed],
            level: None,
            sensitive_attribute: inp.fairness_attribute.to_string(),
            classifier: inp.classifier,
            weights: inp.weights,
            eor_degenerate: eor.degenerate,
            n_synthetic: inp.synthetic.n_rows(),
            n_test: inp.test.n_rows(),
            density_definition: DENSITY_DEFINITION.into(),
            correlation_definition: CORRELATION_DEFINITION.into(),
            dcr_definition: DCR_DEFINITION.into(),
            config_hash: String::new(),
        },
    })
}
