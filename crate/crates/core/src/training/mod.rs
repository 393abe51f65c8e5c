//! Fitting the bilinear operator to analogy instances with AdaGrad.
//!
//! Training follows a fixed recipe: standardized embeddings in, every
//! parameter initialized uniformly from `init_range`, `P` and `Q` held to
//! `pI` and `qI`, a Frobenius penalty on `A`, and shuffled mini-batches.
//! All randomness comes from `TrainingConfig::seed`, split into separate
//! ChaCha streams for initialization, instance sampling and shuffling.

mod adagrad;
mod config;
mod groups;
mod instances;
mod loss;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adagrad::{adagrad_step, AdaGrad};
pub use config::{NegativeStrategy, TrainingConfig};
pub use groups::{
    load_bats_dir, load_groups, read_groups_jsonl, write_groups_jsonl, RelationGroup,
};
pub use instances::{build_instances, AnalogyInstance, InstanceSet, Sign};
pub use loss::{flat_gradients, gradients, instance_loss, total_loss, Gradients};

use crate::compose::{frobenius_norm_a, BilinearOperator};
use crate::embedding::{csv_error, EmbeddingMatrix};
use crate::error::{Error, Result};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 2;

/// Benchmark accuracies attached to an epoch, when evaluation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkScores {
    pub sat_acc: Option<f64>,
    pub maxdiff_acc: Option<f64>,
}

/// One row of the training trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean signed instance loss over the whole training set after the
    /// epoch, plus `λ‖A‖_F²`.
    pub loss: f64,
    pub frob_a: f64,
    pub p: f64,
    pub q: f64,
    pub sat_acc: Option<f64>,
    pub maxdiff_acc: Option<f64>,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// State before the first update: `‖A‖_F`, `p`, `q` and the loss.
    pub initial: EpochRecord,
    pub records: Vec<EpochRecord>,
    pub n_positive: usize,
    pub n_negative: usize,
    pub skipped_pairs: usize,
}

impl TrainingTrace {
    /// CSV with header `epoch,loss,frob_A,p,q,sat_acc,maxdiff_acc,seconds`;
    /// missing scores are empty fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record([
            "epoch",
            "loss",
            "frob_A",
            "p",
            "q",
            "sat_acc",
            "maxdiff_acc",
            "seconds",
        ])
        .map_err(csv_error)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            csv.write_record([
                r.epoch.to_string(),
                r.loss.to_string(),
                r.frob_a.to_string(),
                r.p.to_string(),
                r.q.to_string(),
                opt(r.sat_acc),
                opt(r.maxdiff_acc),
                opt(r.seconds),
            ])
            .map_err(csv_error)?;
        }
        csv.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// `p` and `q` of the operator; for a general-mode operator, the mean of
/// the diagonals of `P` and `Q`.
fn first_order_scalars(op: &BilinearOperator) -> (f64, f64) {
    op.diagonal_scalars().unwrap_or_else(|| {
        let d = op.dim() as f64;
        (
            op.p_matrix().diag().sum() / d,
            op.q_matrix().diag().sum() / d,
        )
    })
}

/// Draw every parameter uniformly from `init_range`.
pub fn initial_operator(dim: usize, cfg: &TrainingConfig) -> BilinearOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(INIT_STREAM);
    let mut op = BilinearOperator::zeros(dim, cfg.mode);
    let (lo, hi) = cfg.init_range;
    let params: Vec<f64> = (0..op.num_parameters())
        .map(|_| rng.random_range(lo..hi))
        .collect();
    op.assign(&params);
    op
}

fn mean_loss(op: &BilinearOperator, instances: &[AnalogyInstance<'_>], lambda_a: f64) -> f64 {
    let partials: Vec<f64> = instances
        .par_chunks(256)
        .map(|chunk| {
            chunk
                .iter()
                .map(|i| instance_loss(op, i).expect("dimensions checked"))
                .sum()
        })
        .collect();
    let sum: f64 = partials.iter().sum();
    let n = instances.len().max(1) as f64;
    sum / n + lambda_a * frobenius_norm_a(op).powi(2)
}

fn record(
    epoch: usize,
    op: &BilinearOperator,
    instances: &[AnalogyInstance<'_>],
    cfg: &TrainingConfig,
) -> EpochRecord {
    let (p, q) = first_order_scalars(op);
    EpochRecord {
        epoch,
        loss: mean_loss(op, instances, cfg.lambda_a),
        frob_a: frobenius_norm_a(op),
        p,
        q,
        sat_acc: None,
        maxdiff_acc: None,
        seconds: None,
    }
}

/// Train without per-epoch evaluation.
pub fn train(
    embeddings: &EmbeddingMatrix,
    groups: &[RelationGroup],
    cfg: &TrainingConfig,
) -> Result<(BilinearOperator, TrainingTrace)> {
    train_with(embeddings, groups, cfg, |_, _| BenchmarkScores::default())
}

/// Train, calling `evaluate` after every epoch to attach benchmark scores
/// to the trace.
pub fn train_with<F>(
    embeddings: &EmbeddingMatrix,
    groups: &[RelationGroup],
    cfg: &TrainingConfig,
    mut evaluate: F,
) -> Result<(BilinearOperator, TrainingTrace)>
where
    F: FnMut(usize, &BilinearOperator) -> BenchmarkScores,
{
    cfg.validate()?;
    if !embeddings.is_standardized() && !cfg.allow_unstandardized {
        return Err(Error::NotStandardized);
    }
    let set = build_instances(groups, embeddings, cfg)?;
    let instances = &set.instances;

    let mut op = initial_operator(embeddings.dim(), cfg);
    let initial = record(0, &op, instances, cfg);
    let mut trace = TrainingTrace {
        initial,
        records: Vec::with_capacity(cfg.epochs),
        n_positive: set.n_positive,
        n_negative: set.n_negative,
        skipped_pairs: set.skipped_pairs,
    };

    let mut optimizer = AdaGrad::new(op.num_parameters(), cfg.learning_rate, cfg.adagrad_epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| instances[i]));
            let (grad, loss) = flat_gradients(&op, &batch, cfg.lambda_a)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, batch: b });
            }
            let mut params = op.flatten();
            optimizer.step(&mut params, &grad);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged { epoch, batch: b });
            }
            op.assign(&params);
        }

        let mut rec = record(epoch, &op, instances, cfg);
        if !rec.loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
            });
        }
        let scores = evaluate(epoch, &op);
        rec.sat_acc = scores.sat_acc;
        rec.maxdiff_acc = scores.maxdiff_acc;
        if cfg.record_timing {
            rec.seconds = Some(start.elapsed().as_secs_f64());
        }
        log::info!(
            "epoch {epoch}: loss {:.6} |A|_F {:.6} p {:.4} q {:.4}",
            rec.loss,
            rec.frob_a,
            rec.p,
            rec.q
        );
        trace.records.push(rec);
    }

    Ok((op, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compose::ConstraintMode;
    use crate::embedding::standardize;
    use crate::theorem_lab::synth_offset_relations;

    fn small_fixture() -> (EmbeddingMatrix, Vec<RelationGroup>) {
        let (e, groups) = synth_offset_relations(12, 4, 3, 0.1, 5).unwrap();
        let (e, _) = standardize(&e).unwrap();
        (e, groups)
    }

    #[test]
    fn refuses_unstandardized_embeddings() {
        let (raw, groups) = synth_offset_relations(10, 3, 2, 0.1, 1).unwrap();
        let cfg = TrainingConfig {
            epochs: 1,
            ..Default::default()
        };
        assert!(matches!(
            train(&raw, &groups, &cfg),
            Err(Error::NotStandardized)
        ));
        let cfg = TrainingConfig {
            allow_unstandardized: true,
            ..cfg
        };
        assert!(train(&raw, &groups, &cfg).is_ok());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (e, groups) = small_fixture();
        let cfg = TrainingConfig {
            epochs: 0,
            seed: 4,
            ..Default::default()
        };
        let (op, trace) = train(&e, &groups, &cfg).unwrap();
        assert_eq!(op, initial_operator(e.dim(), &cfg));
        assert!(trace.records.is_empty());
        assert!(op.flatten().iter().all(|x| (-1.0..1.0).contains(x)));
    }

    #[test]
    fn same_seed_same_trace() {
        let (e, groups) = small_fixture();
        let cfg = TrainingConfig {
            epochs: 3,
            seed: 77,
            ..Default::default()
        };
        let (op1, t1) = train(&e, &groups, &cfg).unwrap();
        let (op2, t2) = train(&e, &groups, &cfg).unwrap();
        assert_eq!(op1, op2);
        assert_eq!(t1, t2);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        t1.write_csv(&mut a).unwrap();
        t2.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trace_is_well_formed() {
        let (e, groups) = small_fixture();
        let cfg = TrainingConfig {
            epochs: 4,
            record_timing: true,
            ..Default::default()
        };
        let (_, trace) = train_with(&e, &groups, &cfg, |epoch, _| BenchmarkScores {
            sat_acc: Some(epoch as f64 / 10.0),
            maxdiff_acc: None,
        })
        .unwrap();
        let epochs: Vec<usize> = trace.records.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![1, 2, 3, 4]);
        for r in &trace.records {
            assert!(r.loss.is_finite() && r.frob_a.is_finite());
            assert!(r.seconds.is_some());
        }
        let mut out = Vec::new();
        trace.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,loss,frob_A,p,q,sat_acc,maxdiff_acc,seconds"
        );
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "1");
        assert_eq!(first[5], "0.1");
        assert_eq!(first[6], "");
    }

    #[test]
    fn general_mode_trains() {
        let (e, groups) = small_fixture();
        let cfg = TrainingConfig {
            epochs: 2,
            mode: ConstraintMode::General,
            ..Default::default()
        };
        let (op, trace) = train(&e, &groups, &cfg).unwrap();
        assert_eq!(op.mode(), ConstraintMode::General);
        assert_eq!(trace.records.len(), 2);
    }

    #[test]
    fn divergence_is_reported() {
        let (e, groups) = small_fixture();
        let cfg = TrainingConfig {
            epochs: 5,
            learning_rate: 1e308,
            ..Default::default()
        };
        assert!(matches!(
            train(&e, &groups, &cfg),
            Err(Error::Diverged { epoch: 1, .. })
        ));
    }
}
