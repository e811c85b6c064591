//! Training loop (MSE objective over graph pairs), evaluation, and the
//! ablation / portability harnesses.
//!
//! Gradients for a batch are computed on independent tapes (in parallel,
//! one pair each) and accumulated in pair order, so runs are bit-identical
//! for a fixed seed regardless of thread count.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::baseline::{BaselineConfig, GraphSimStub};
use crate::config::ExperimentConfig;
use crate::data::{Corpus, DataError, LabeledPair};
use crate::encoder::{GraphFeatures, Variant};
use crate::matcher::MatcherError;
use crate::matrix::Matrix;
use crate::metrics::{compute_metrics, EvalReport, QueryScores};
use crate::model::{precompute_features, PairData, PairModel, SegmnModel};
use crate::optim::{adam_step, AdamState, OptimError};
use crate::params::ModelParams;
use crate::tensor::{Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("log write failed: {0}")]
    Log(std::io::Error),
}

/// Per-parameter gradients of one pair's loss.
type PairGrads = BTreeMap<String, Matrix>;

/// One line of the training log.
#[derive(Clone, Debug, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub wallclock_secs: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub best_val_mse: Option<f64>,
    pub final_train_mse: f64,
}

fn forward_loss<M: PairModel>(
    model: &M,
    corpus: &Corpus,
    features: &[GraphFeatures],
    pair: &LabeledPair,
) -> Result<(PairGrads, f64), TrainError> {
    let tape = Tape::new();
    let pd = PairData::build(
        corpus.graph(pair.i),
        corpus.graph(pair.j),
        &features[pair.i],
        &features[pair.j],
        model.needs_spm(),
    );
    let pred = model.predict(&tape, &pd)?;
    let target = tape.constant(Matrix::scalar(pair.target));
    let loss = tape.mse(pred, target);
    tape.backward(loss)?;
    Ok((tape.named_grads(), tape.value(loss)[(0, 0)]))
}

/// Minimizes mean squared error over the train pairs. Periodically
/// evaluates on the test queries and keeps the best parameters by
/// validation MSE; the model holds those best parameters on return.
pub fn train<M: PairModel>(
    model: &mut M,
    corpus: &Corpus,
    cfg: &ExperimentConfig,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome, TrainError> {
    let features = precompute_features(corpus.graphs());
    let pairs = corpus.train_pairs(cfg.seed, cfg.include_self_pairs)?;
    let adam_cfg = cfg.adam_config();
    let mut adam = AdamState::new();

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ModelParams)> = None;
    let mut final_train_mse = f64::NAN;
    let started = Instant::now();

    for epoch in 0..cfg.epochs {
        // Fresh pair order each epoch, derived from the run seed.
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64 + 1));
        for k in (1..order.len()).rev() {
            order.swap(k, rng.gen_range(0..=k));
        }
        let take = if cfg.pairs_per_epoch == 0 {
            order.len()
        } else {
            cfg.pairs_per_epoch.min(order.len())
        };

        let mut epoch_sq_err = 0.0;
        let mut epoch_pairs = 0usize;
        for (batch_no, chunk) in order[..take].chunks(cfg.batch_size).enumerate() {
            let results: Result<Vec<(PairGrads, f64)>, TrainError> = chunk
                .par_iter()
                .map(|&k| forward_loss(model, corpus, &features, &pairs[k]))
                .collect();
            let results = results?;

            let mut grads: PairGrads = BTreeMap::new();
            let mut batch_loss = 0.0;
            for (g, loss) in &results {
                batch_loss += loss;
                for (name, grad) in g {
                    match grads.get_mut(name) {
                        Some(acc) => acc.add_assign(grad),
                        None => {
                            grads.insert(name.clone(), grad.clone());
                        }
                    }
                }
            }
            let scale = 1.0 / results.len() as f64;
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: batch_no, loss: batch_loss });
            }
            for g in grads.values_mut() {
                *g = g.scale(scale);
            }
            adam_step(model.params_mut(), &grads, &mut adam, &adam_cfg)?;

            epoch_sq_err += batch_loss * results.len() as f64;
            epoch_pairs += results.len();
        }

        let train_mse = if epoch_pairs == 0 { 0.0 } else { epoch_sq_err / epoch_pairs as f64 };
        final_train_mse = train_mse;

        let due = cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
        let last = epoch + 1 == cfg.epochs;
        let mut val_mse = None;
        if (due || last) && !corpus.test_indices().is_empty() {
            let report = evaluate(model, corpus, &features)?;
            val_mse = Some(report.mse);
            if best.as_ref().is_none_or(|(b, _)| report.mse < *b) {
                best = Some((report.mse, model.params().clone()));
            }
        }

        let record = EpochRecord {
            epoch,
            train_mse,
            val_mse,
            wallclock_secs: started.elapsed().as_secs_f64(),
        };
        if let Some(sink) = log_sink.as_deref_mut() {
            writeln!(
                sink,
                "{} {} {} {}",
                record.epoch,
                record.train_mse,
                record.val_mse.map_or("-".to_string(), |v| v.to_string()),
                record.wallclock_secs
            )
            .map_err(TrainError::Log)?;
        }
        log.push(record);
    }

    // Hand back the best validated parameters.
    let best_val_mse = best.as_ref().map(|(m, _)| *m);
    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    Ok(TrainOutcome { log, best_val_mse, final_train_mse })
}

/// Scores every test query against all train candidates with forward-only
/// tapes and aggregates the ranking metrics.
pub fn evaluate<M: PairModel>(
    model: &M,
    corpus: &Corpus,
    features: &[GraphFeatures],
) -> Result<EvalReport, TrainError> {
    let started = Instant::now();
    let queries = corpus.eval_queries()?;
    let mut scored = Vec::with_capacity(queries.len());
    for q in &queries {
        let preds: Result<Vec<f64>, TrainError> = q
            .candidates
            .par_iter()
            .map(|&c| {
                let tape = Tape::inference();
                let pd = PairData::build(
                    corpus.graph(q.query),
                    corpus.graph(c),
                    &features[q.query],
                    &features[c],
                    model.needs_spm(),
                );
                let pred = model.predict(&tape, &pd)?;
                Ok(tape.value(pred)[(0, 0)])
            })
            .collect();
        scored.push(QueryScores {
            query_id: corpus.graph(q.query).id().to_string(),
            predictions: preds?,
            targets: q.targets.clone(),
        });
    }
    let mut report = compute_metrics(&scored);
    report.runtime_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

// ---- harnesses ------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct HarnessRow {
    pub label: String,
    pub status: String,
    pub mse: Option<f64>,
    pub spearman: Option<f64>,
    pub p_at_10: Option<f64>,
    pub spm_executions: u64,
    /// Portability only: whether this row's predictions differ from the
    /// 0-insertion baseline on at least one probe pair.
    pub differs_from_baseline: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct HarnessReport {
    pub kind: String,
    pub dataset: String,
    pub config_echo: String,
    pub rows: Vec<HarnessRow>,
}

impl HarnessReport {
    /// Fixed-width table for the terminal.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<24} {:>12} {:>8} {:>8}  {}\n",
            "variant", "mse(x1e-3)", "rho", "p@10", "status"
        ));
        for row in &self.rows {
            let fmt = |v: Option<f64>, scale: f64| {
                v.map_or("n/a".to_string(), |x| format!("{:.3}", x * scale))
            };
            out.push_str(&format!(
                "{:<24} {:>12} {:>8} {:>8}  {}\n",
                row.label,
                fmt(row.mse, 1e3),
                fmt(row.spearman, 1.0),
                fmt(row.p_at_10, 1.0),
                row.status
            ));
        }
        out
    }
}

/// Trains and evaluates the six embedding x SPM variants on one corpus with
/// a shared seed. A failed run marks its row and the harness continues.
pub fn ablation_harness(corpus: &Corpus, base: &ExperimentConfig) -> HarnessReport {
    let spm = base.spm_layers.max(1);
    let variants: [(&str, Variant, usize); 6] = [
        ("node", Variant::NodeOnly, 0),
        ("edge", Variant::EdgeOnly, 0),
        ("DE (node+edge)", Variant::Dual, 0),
        ("node+SPM", Variant::NodeOnly, spm),
        ("edge+SPM", Variant::EdgeOnly, spm),
        ("DE+SPM (full model)", Variant::Dual, spm),
    ];

    let mut rows = Vec::with_capacity(variants.len());
    for (label, variant, spm_layers) in variants {
        let mut cfg = base.clone();
        cfg.variant = variant;
        cfg.spm_layers = spm_layers;
        let mut model =
            SegmnModel::new(cfg.model_config(corpus.input_dim(), corpus.n_max()), cfg.seed);
        let row = match train(&mut model, corpus, &cfg, None)
            .and_then(|_| evaluate(&model, corpus, &precompute_features(corpus.graphs())))
        {
            Ok(report) => HarnessRow {
                label: label.to_string(),
                status: "ok".to_string(),
                mse: Some(report.mse),
                spearman: Some(report.spearman),
                p_at_10: report.p_at_10,
                spm_executions: model.spm_executions(),
                differs_from_baseline: None,
            },
            Err(e) => HarnessRow {
                label: label.to_string(),
                status: format!("failed: {e}"),
                mse: None,
                spearman: None,
                p_at_10: None,
                spm_executions: model.spm_executions(),
                differs_from_baseline: None,
            },
        };
        rows.push(row);
    }

    HarnessReport {
        kind: "ablation".to_string(),
        dataset: corpus.name().to_string(),
        config_echo: base.echo(),
        rows,
    }
}

/// Probe predictions on up to `limit` eval pairs, for the portability
/// prediction-difference check.
fn probe_predictions<M: PairModel>(
    model: &M,
    corpus: &Corpus,
    features: &[GraphFeatures],
    limit: usize,
) -> Result<Vec<f64>, TrainError> {
    let queries = corpus.eval_queries()?;
    let mut out = Vec::with_capacity(limit);
    'outer: for q in &queries {
        for &c in &q.candidates {
            if out.len() >= limit {
                break 'outer;
            }
            let tape = Tape::inference();
            let pd = PairData::build(
                corpus.graph(q.query),
                corpus.graph(c),
                &features[q.query],
                &features[c],
                model.needs_spm(),
            );
            let pred = model.predict(&tape, &pd)?;
            out.push(tape.value(pred)[(0, 0)]);
        }
    }
    Ok(out)
}

/// Trains the GraphSim-style baseline with 0..=3 SPM insertions (after the
/// first k GCN layers) and reports each row, the SPM execution count, and
/// whether predictions moved relative to the 0-insertion baseline.
pub fn portability_harness(corpus: &Corpus, base: &ExperimentConfig) -> HarnessReport {
    let features = precompute_features(corpus.graphs());
    let mut rows = Vec::with_capacity(4);
    let mut baseline_preds: Option<Vec<f64>> = None;

    for k in 0..=3usize {
        let cfg = BaselineConfig {
            input_dim: corpus.input_dim(),
            hidden: base.hidden,
            layers: 3,
            spm_positions: (1..=k).collect(),
            conv_layers: base.conv_layers,
            conv_channels: base.conv_channels,
            mlp_hidden: base.mlp_hidden,
            n_max: corpus.n_max(),
        };
        let mut model = GraphSimStub::new(cfg, base.seed);
        let outcome = train(&mut model, corpus, base, None)
            .and_then(|_| evaluate(&model, corpus, &features))
            .and_then(|report| {
                let preds = probe_predictions(&model, corpus, &features, 32)?;
                Ok((report, preds))
            });

        let row = match outcome {
            Ok((report, preds)) => {
                let differs = match (&baseline_preds, k) {
                    (_, 0) => {
                        baseline_preds = Some(preds);
                        None
                    }
                    (Some(base_preds), _) => {
                        Some(base_preds.iter().zip(&preds).any(|(a, b)| a != b))
                    }
                    (None, _) => None,
                };
                HarnessRow {
                    label: format!("{k} SPM insertions"),
                    status: "ok".to_string(),
                    mse: Some(report.mse),
                    spearman: Some(report.spearman),
                    p_at_10: report.p_at_10,
                    spm_executions: model.spm_executions(),
                    differs_from_baseline: differs,
                }
            }
            Err(e) => HarnessRow {
                label: format!("{k} SPM insertions"),
                status: format!("failed: {e}"),
                mse: None,
                spearman: None,
                p_at_10: None,
                spm_executions: model.spm_executions(),
                differs_from_baseline: None,
            },
        };
        rows.push(row);
    }

    HarnessReport {
        kind: "portability".to_string(),
        dataset: corpus.name().to_string(),
        config_echo: base.echo(),
        rows,
    }
}
