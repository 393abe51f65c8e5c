//! Positive and negative analogy instances drawn from relation groups.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{NegativeStrategy, TrainingConfig};
use super::groups::RelationGroup;
use crate::compose::squared_distance;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

pub(crate) const INSTANCE_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, Eq, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }
}

/// Two word pairs `(h, t)` and `(h′, t′)` with their label.
///
/// Vectors borrow from the embedding matrix the instance was built from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalogyInstance<'a> {
    pub h: &'a [f64],
    pub t: &'a [f64],
    pub h2: &'a [f64],
    pub t2: &'a [f64],
    pub sign: Sign,
    pub source_relation: &'a str,
    pub contrast_relation: &'a str,
}

impl<'a> AnalogyInstance<'a> {
    pub fn positive(first: (&'a [f64], &'a [f64]), second: (&'a [f64], &'a [f64])) -> Self {
        AnalogyInstance {
            h: first.0,
            t: first.1,
            h2: second.0,
            t2: second.1,
            sign: Sign::Positive,
            source_relation: "",
            contrast_relation: "",
        }
    }

    pub fn negative(first: (&'a [f64], &'a [f64]), second: (&'a [f64], &'a [f64])) -> Self {
        AnalogyInstance {
            sign: Sign::Negative,
            contrast_relation: "<other>",
            ..Self::positive(first, second)
        }
    }
}

#[derive(Clone, Debug)]
pub struct InstanceSet<'a> {
    pub instances: Vec<AnalogyInstance<'a>>,
    pub n_positive: usize,
    pub n_negative: usize,
    /// Pairs dropped because a word was missing from the embeddings.
    pub skipped_pairs: usize,
    pub warnings: Vec<String>,
}

struct ResolvedPair {
    group: usize,
    head: usize,
    tail: usize,
}

/// Build the training set.
///
/// Positives are the unordered pairings of distinct word pairs within a
/// group, subsampled uniformly without replacement when the configured cap
/// is smaller than `C(n, 2)`. Every resolvable word pair anchors
/// `negatives_per_pair` negatives whose second pair comes from a different
/// group.
pub fn build_instances<'a>(
    groups: &'a [RelationGroup],
    embeddings: &'a EmbeddingMatrix,
    cfg: &TrainingConfig,
) -> Result<InstanceSet<'a>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(INSTANCE_STREAM);

    let mut warnings = Vec::new();
    let mut skipped_pairs = 0;
    let mut pairs: Vec<ResolvedPair> = Vec::new();
    // (group index into `groups`, start, end) into `pairs`
    let mut ranges: Vec<(usize, usize, usize)> = Vec::new();

    for (gi, group) in groups.iter().enumerate() {
        let start = pairs.len();
        for (head, tail) in &group.pairs {
            match (embeddings.index_of(head), embeddings.index_of(tail)) {
                (Some(h), Some(t)) => pairs.push(ResolvedPair {
                    group: ranges.len(),
                    head: h,
                    tail: t,
                }),
                _ => skipped_pairs += 1,
            }
        }
        let end = pairs.len();
        if end == start {
            warnings.push(format!(
                "relation {:?}: no resolvable pairs, ignored",
                group.relation_id
            ));
            continue;
        }
        if end - start < 2 {
            warnings.push(format!(
                "relation {:?}: fewer than 2 resolvable pairs, no positives",
                group.relation_id
            ));
        }
        ranges.push((gi, start, end));
    }
    if ranges.len() < 2 {
        return Err(Error::TooFewGroups(ranges.len()));
    }
    if skipped_pairs > 0 {
        warnings.push(format!(
            "{skipped_pairs} pairs skipped: word not in vocabulary"
        ));
    }

    let pair_vectors = |p: &ResolvedPair| (embeddings.row(p.head), embeddings.row(p.tail));
    let relation = |p: &ResolvedPair| groups[ranges[p.group].0].relation_id.as_str();

    let mut instances = Vec::new();
    for &(_, start, end) in &ranges {
        let n = end - start;
        let total = n * (n - 1) / 2;
        let chosen: Vec<usize> = match cfg.max_positives_per_group {
            Some(cap) if total > cap => {
                let mut picked = index::sample(&mut rng, total, cap).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..total).collect(),
        };
        for linear in chosen {
            let (a, b) = unrank_pair(linear, n);
            let (first, second) = (&pairs[start + a], &pairs[start + b]);
            instances.push(AnalogyInstance {
                h: embeddings.row(first.head),
                t: embeddings.row(first.tail),
                h2: embeddings.row(second.head),
                t2: embeddings.row(second.tail),
                sign: Sign::Positive,
                source_relation: relation(first),
                contrast_relation: relation(first),
            });
        }
    }
    let n_positive = instances.len();

    // Offsets from the embeddings as given, fixed for the whole run.
    let offsets: Vec<Vec<f64>> = match cfg.negative_strategy {
        NegativeStrategy::NearestInPool => pairs
            .iter()
            .map(|p| {
                let (h, t) = pair_vectors(p);
                h.iter().zip(t).map(|(a, b)| a - b).collect()
            })
            .collect(),
        NegativeStrategy::Uniform => Vec::new(),
    };

    let k = cfg.negatives_per_pair;
    for (ai, anchor) in pairs.iter().enumerate() {
        let (_, start, end) = ranges[anchor.group];
        let others = pairs.len() - (end - start);
        let other_at = |j: usize| if j < start { j } else { j + (end - start) };

        let picked: Vec<usize> = match cfg.negative_strategy {
            NegativeStrategy::Uniform if others >= k => index::sample(&mut rng, others, k)
                .into_iter()
                .map(other_at)
                .collect(),
            NegativeStrategy::Uniform => (0..k)
                .map(|_| other_at(rng.random_range(0..others)))
                .collect(),
            NegativeStrategy::NearestInPool => {
                let pool = cfg.candidate_pool.min(others);
                let mut candidates: Vec<(f64, usize)> = index::sample(&mut rng, others, pool)
                    .into_iter()
                    .map(other_at)
                    .map(|j| (squared_distance(&offsets[ai], &offsets[j]), j))
                    .collect();
                candidates.sort_by(|x, y| x.0.total_cmp(&y.0));
                candidates.iter().cycle().take(k).map(|&(_, j)| j).collect()
            }
        };

        let (h, t) = pair_vectors(anchor);
        for j in picked {
            let other = &pairs[j];
            debug_assert_ne!(other.group, anchor.group);
            let (h2, t2) = pair_vectors(other);
            instances.push(AnalogyInstance {
                h,
                t,
                h2,
                t2,
                sign: Sign::Negative,
                source_relation: relation(anchor),
                contrast_relation: relation(other),
            });
        }
    }
    let n_negative = instances.len() - n_positive;

    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(InstanceSet {
        instances,
        n_positive,
        n_negative,
        skipped_pairs,
        warnings,
    })
}

/// Map `0..C(n,2)` onto pairs `(a, b)` with `a < b`, in lexicographic order.
fn unrank_pair(mut linear: usize, n: usize) -> (usize, usize) {
    for a in 0..n {
        let row = n - 1 - a;
        if linear < row {
            return (a, a + 1 + linear);
        }
        linear -= row;
    }
    unreachable!("index out of range for C({n}, 2)")
}
