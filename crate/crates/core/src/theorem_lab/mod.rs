//! Monte Carlo checks of the expected-loss identities on synthetic
//! embeddings that satisfy the standardisation, uncorrelation and
//! relational-independence assumptions by construction.
//!
//! Every estimator runs over fixed-size chunks. Chunk `c` of a stream draws
//! from its own ChaCha substream derived from the master seed, and chunk
//! statistics are merged in chunk order with the exact pairwise
//! mean/variance update. The result is therefore identical for any number
//! of worker threads.

mod manifest;

pub use manifest::{random_first_order, run_manifest, CheckRecord, Manifest, ManifestConfig};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compose::{BilinearOperator, Pair};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::training::RelationGroup;

/// Below this many samples per estimate a check reports a low-power
/// warning instead of failing.
pub const LOW_POWER_SAMPLES: usize = 1000;

const CHUNK: usize = 4096;

const POSITIVE_TAG: u64 = 0x504f53;
const NEGATIVE_TAG: u64 = 0x4e4547;
const OPERATOR_TAG: u64 = 0x4f50;

#[derive(Clone, Copy, Debug, Eq, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    StandardNormal,
    Rademacher,
}

impl std::str::FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard-normal" | "normal" => Ok(Distribution::StandardNormal),
            "rademacher" => Ok(Distribution::Rademacher),
            other => Err(Error::InvalidParameter(format!(
                "unknown distribution {other:?}"
            ))),
        }
    }
}

impl Distribution {
    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            Distribution::StandardNormal => rng.sample(StandardNormal),
            Distribution::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    fn fill<R: Rng>(self, rng: &mut R, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = self.sample(rng));
    }
}

/// How the two words of one pair relate.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairCoupling {
    /// `h` and `t` drawn independently.
    Independent,
    /// `t = h`: every dimension of the pair is perfectly correlated.
    IdenticalTail,
}

/// How the two pairs of a quadruple relate. Relational independence
/// leaves only one choice.
#[derive(Clone, Copy, Debug, Default, Eq, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossPairCoupling {
    #[default]
    Independent,
}

/// Distribution of the quadruples `(h, t, h′, t′)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub d: usize,
    pub pair_coupling: PairCoupling,
    #[serde(default)]
    pub cross_pair_coupling: CrossPairCoupling,
    pub distribution: Distribution,
    pub seed: u64,
}

impl SamplerSpec {
    pub fn independent_normal(d: usize, seed: u64) -> Self {
        SamplerSpec {
            d,
            pair_coupling: PairCoupling::Independent,
            cross_pair_coupling: CrossPairCoupling::Independent,
            distribution: Distribution::StandardNormal,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidParameter(
                "sampler dimension must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Fill `quad` (length `4d`) with `h, t, h′, t′`.
    fn draw<R: Rng>(&self, rng: &mut R, quad: &mut [f64]) {
        let d = self.d;
        let (first, second) = quad.split_at_mut(2 * d);
        for pair in [first, second] {
            let (h, t) = pair.split_at_mut(d);
            self.distribution.fill(rng, h);
            match self.pair_coupling {
                PairCoupling::Independent => self.distribution.fill(rng, t),
                PairCoupling::IdenticalTail => t.copy_from_slice(h),
            }
        }
    }

    fn with_seed(&self, seed: u64) -> Self {
        SamplerSpec {
            seed,
            ..self.clone()
        }
    }
}

/// A sample-mean estimate with its standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub estimate: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub sampler: SamplerSpec,
    pub operator_digest: String,
}

/// Running count, mean and sum of squared deviations.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let wa = self.n as f64 / n as f64;
        let wb = other.n as f64 / n as f64;
        Moments {
            n,
            mean: wa * self.mean + wb * other.mean,
            m2: self.m2 + other.m2 + delta * delta * wa * other.n as f64,
        }
    }

    /// Sample standard deviation over `√n`.
    fn std_error(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2.max(0.0) / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn substream(seed: u64, tag: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(tag)));
    rng.set_stream(chunk);
    rng
}

/// `‖r(h, t) − r(h′, t′)‖²` averaged over `n` quadruples of `sampler`.
fn loss_moments(op: &BilinearOperator, sampler: &SamplerSpec, tag: u64, n: usize) -> Moments {
    let d = sampler.d;
    let chunks = n.div_ceil(CHUNK);
    let partial: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(sampler.seed, tag, c as u64);
            let mut quad = vec![0.0; 4 * d];
            let (mut r1, mut r2) = (vec![0.0; d], vec![0.0; d]);
            let mut m = Moments::default();
            let count = CHUNK.min(n - c * CHUNK);
            for _ in 0..count {
                sampler.draw(&mut rng, &mut quad);
                op.compose_into(&quad[..d], &quad[d..2 * d], &mut r1);
                op.compose_into(&quad[2 * d..3 * d], &quad[3 * d..], &mut r2);
                m.push(r1.iter().zip(&r2).map(|(a, b)| (a - b) * (a - b)).sum());
            }
            m
        })
        .collect();
    partial.into_iter().fold(Moments::default(), Moments::merge)
}

fn check_inputs(op: &BilinearOperator, sampler: &SamplerSpec, n: usize) -> Result<()> {
    sampler.validate()?;
    if n < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples".into()));
    }
    if op.dim() != sampler.d {
        return Err(Error::DimensionMismatch {
            expected: sampler.d,
            found: op.dim(),
        });
    }
    Ok(())
}

/// Matrix of i.i.d. zero-mean unit-variance entries; words are `w0, w1, …`.
pub fn synth_embeddings(
    m: usize,
    d: usize,
    distribution: Distribution,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    if m < 2 || d == 0 {
        return Err(Error::InvalidParameter("need m >= 2 and d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..m * d).map(|_| distribution.sample(&mut rng)).collect();
    let vocab = (0..m).map(|i| format!("w{i}")).collect();
    EmbeddingMatrix::new(
        vocab,
        Array2::from_shape_vec((m, d), data).expect("m*d values"),
    )
}

/// Offset-relation data where PairDiff is the right operator: for relation
/// `r` with offset `v_r`, tails are `t = h + v_r + ε`, `ε ~ noise·N(0, I)`.
///
/// `pairs_per_relation` heads are drawn per relation; offsets are standard
/// normal. Words are named `r{i}_p{j}_h` and `r{i}_p{j}_t`.
pub fn synth_offset_relations(
    pairs_per_relation: usize,
    d: usize,
    n_relations: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<(EmbeddingMatrix, Vec<RelationGroup>)> {
    if n_relations < 2 {
        return Err(Error::InvalidParameter("need at least 2 relations".into()));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<Vec<f64>> = (0..n_relations)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    offset_relations_with(&offsets, pairs_per_relation, noise_scale, &mut rng)
}

/// As [`synth_offset_relations`] with caller-chosen offset vectors.
pub fn synth_offset_relations_with_offsets(
    offsets: &[Vec<f64>],
    pairs_per_relation: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<(EmbeddingMatrix, Vec<RelationGroup>)> {
    let d = offsets.first().map_or(0, Vec::len);
    if offsets.len() < 2 || d == 0 || offsets.iter().any(|v| v.len() != d) {
        return Err(Error::InvalidParameter(
            "need at least 2 offsets of equal nonzero length".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    offset_relations_with(offsets, pairs_per_relation, noise_scale, &mut rng)
}

fn offset_relations_with(
    offsets: &[Vec<f64>],
    pairs_per_relation: usize,
    noise_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(EmbeddingMatrix, Vec<RelationGroup>)> {
    if pairs_per_relation == 0 {
        return Err(Error::InvalidParameter(
            "need at least one pair per relation".into(),
        ));
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::InvalidParameter(
            "noise_scale must be nonnegative".into(),
        ));
    }
    let d = offsets[0].len();
    let mut vocab = Vec::new();
    let mut data = Vec::new();
    let mut groups = Vec::new();
    for (r, offset) in offsets.iter().enumerate() {
        let mut pairs = Vec::with_capacity(pairs_per_relation);
        for p in 0..pairs_per_relation {
            let head: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let tail: Vec<f64> = head
                .iter()
                .zip(offset)
                .map(|(h, v)| {
                    let eps: f64 = rng.sample(StandardNormal);
                    h + v + noise_scale * eps
                })
                .collect();
            let (hw, tw) = (format!("r{r}_p{p}_h"), format!("r{r}_p{p}_t"));
            vocab.push(hw.clone());
            data.extend(head);
            vocab.push(tw.clone());
            data.extend(tail);
            pairs.push((hw, tw));
        }
        groups.push(RelationGroup::new(format!("r{r}"), pairs)?);
    }
    let m = vocab.len();
    let embeddings = EmbeddingMatrix::new(
        vocab,
        Array2::from_shape_vec((m, d), data).expect("m*d values"),
    )?;
    Ok((embeddings, groups))
}

/// Expected loss over positive quadruples, estimated from `n` draws.
pub fn mc_expected_positive_loss(
    op: &BilinearOperator,
    sampler: &SamplerSpec,
    n: usize,
) -> Result<MonteCarloReport> {
    check_inputs(op, sampler, n)?;
    let m = loss_moments(op, sampler, POSITIVE_TAG, n);
    Ok(MonteCarloReport {
        estimate: m.mean,
        std_error: m.std_error(),
        n_samples: m.n,
        sampler: sampler.clone(),
        operator_digest: op.digest(),
    })
}

/// Estimates of `E₊[J] − E₋[J]` and of the positive term alone.
///
/// Positive and negative quadruples come from the same sampler on
/// independent substreams, which is what relational independence implies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferenceEstimate {
    pub difference: MonteCarloReport,
    pub positive_term: f64,
    pub positive_std_error: f64,
    pub negative_term: f64,
    pub negative_std_error: f64,
}

pub fn mc_expected_loss_difference(
    op: &BilinearOperator,
    sampler: &SamplerSpec,
    n: usize,
) -> Result<DifferenceEstimate> {
    check_inputs(op, sampler, n)?;
    let pos = loss_moments(op, sampler, POSITIVE_TAG, n);
    let neg = loss_moments(op, sampler, NEGATIVE_TAG, n);
    let (se_pos, se_neg) = (pos.std_error(), neg.std_error());
    Ok(DifferenceEstimate {
        difference: MonteCarloReport {
            estimate: pos.mean - neg.mean,
            std_error: se_pos.hypot(se_neg),
            n_samples: n,
            sampler: sampler.clone(),
            operator_digest: op.digest(),
        },
        positive_term: pos.mean,
        positive_std_error: se_pos,
        negative_term: neg.mean,
        negative_std_error: se_neg,
    })
}

/// `2(tr PᵀP + tr QᵀQ)`: the expected positive loss of `r = Ph + Qt`
/// under independent standardized words.
pub fn closed_form_positive_loss(p: &Array2<f64>, q: &Array2<f64>) -> f64 {
    let tr = |m: &Array2<f64>| m.t().dot(m).diag().sum();
    2.0 * (tr(p) + tr(q))
}

/// Expected positive loss of a full operator when `h, t, h′, t′` are
/// independent with zero mean and unit variance:
/// `2‖A‖_F² + 2(tr PᵀP + tr QᵀQ)`.
pub fn independent_positive_loss(op: &BilinearOperator) -> f64 {
    let a2: f64 = op.tensor().iter().map(|a| a * a).sum();
    2.0 * a2 + closed_form_positive_loss(&op.p_matrix(), &op.q_matrix())
}

fn low_power(n: usize) -> Vec<String> {
    if n < LOW_POWER_SAMPLES {
        vec![format!(
            "low power: {n} samples per estimate (< {LOW_POWER_SAMPLES}); pass/fail not meaningful"
        )]
    } else {
        Vec::new()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorDraw {
    pub index: usize,
    pub frob_a: f64,
    pub estimate: DifferenceEstimate,
    /// `2‖A‖_F² + 2(tr PᵀP + tr QᵀQ)`, the positive term expected under
    /// an independent sampler.
    pub independent_positive_term: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    pub draws: Vec<TensorDraw>,
    /// Largest `|Êₐ − Ê_b|` over all pairs of draws.
    pub max_pairwise_deviation: f64,
    /// Largest `|Êₐ − Ê_b| / √(seₐ² + se_b²)`.
    pub max_pairwise_z: f64,
    /// Largest `|Êₐ| / seₐ`.
    pub max_abs_z_from_zero: f64,
    /// Every pair of estimates within 3 combined standard errors.
    pub pairwise_pass: bool,
    /// Every estimate within 3 standard errors of zero.
    pub zero_pass: bool,
    /// `pairwise_pass`, or forced true under a low-power warning.
    pub pass: bool,
    pub warnings: Vec<String>,
}

fn z_score(diff: f64, se: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else if se == 0.0 {
        f64::INFINITY
    } else {
        diff.abs() / se
    }
}

/// Draw `n_operators` tensors with entries uniform in `[−a_scale, a_scale]`
/// and estimate `E₊[J] − E₋[J]` for each `(A, P, Q)`. Passes when the
/// estimates agree pairwise within 3 combined standard errors.
pub fn theorem1_independence_check(
    p: &Array2<f64>,
    q: &Array2<f64>,
    sampler: &SamplerSpec,
    n: usize,
    n_operators: usize,
    a_scale: f64,
    seed: u64,
) -> Result<IndependenceReport> {
    sampler.validate()?;
    if n_operators < 2 {
        return Err(Error::InvalidParameter(
            "need at least 2 operator draws".into(),
        ));
    }
    if !(a_scale >= 0.0 && a_scale.is_finite()) {
        return Err(Error::InvalidParameter(
            "a_scale must be nonnegative".into(),
        ));
    }
    let d = sampler.d;
    let mut rng = substream(seed, OPERATOR_TAG, 0);

    let mut draws = Vec::with_capacity(n_operators);
    for index in 0..n_operators {
        let tensor = Array3::from_shape_simple_fn((d, d, d), || {
            if a_scale == 0.0 {
                0.0
            } else {
                rng.random_range(-a_scale..=a_scale)
            }
        });
        let op = BilinearOperator::general(tensor, p.clone(), q.clone())?;
        // Fresh quadruples per draw so the estimates are independent.
        let draw_sampler = sampler.with_seed(splitmix(sampler.seed.wrapping_add(index as u64)));
        let mut estimate = mc_expected_loss_difference(&op, &draw_sampler, n)?;
        estimate.difference.sampler = sampler.clone();
        draws.push(TensorDraw {
            index,
            frob_a: crate::compose::frobenius_norm_a(&op),
            estimate,
            independent_positive_term: independent_positive_loss(&op),
        });
    }

    let mut max_dev: f64 = 0.0;
    let mut max_z: f64 = 0.0;
    for (i, a) in draws.iter().enumerate() {
        for b in &draws[i + 1..] {
            let (ea, eb) = (&a.estimate.difference, &b.estimate.difference);
            let dev = (ea.estimate - eb.estimate).abs();
            max_dev = max_dev.max(dev);
            max_z = max_z.max(z_score(dev, ea.std_error.hypot(eb.std_error)));
        }
    }
    let max_zero_z = draws
        .iter()
        .map(|t| {
            z_score(
                t.estimate.difference.estimate,
                t.estimate.difference.std_error,
            )
        })
        .fold(0.0, f64::max);

    let warnings = low_power(n);
    let pairwise_pass = max_z <= 3.0;
    Ok(IndependenceReport {
        draws,
        max_pairwise_deviation: max_dev,
        max_pairwise_z: max_z,
        max_abs_z_from_zero: max_zero_z,
        pairwise_pass,
        zero_pass: max_zero_z <= 3.0,
        pass: pairwise_pass || !warnings.is_empty(),
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroLossReport {
    pub report: MonteCarloReport,
    pub positive_term: f64,
    pub negative_term: f64,
    pub z: f64,
    pub statistical_pass: bool,
    pub pass: bool,
    pub warnings: Vec<String>,
}

/// With `A = 0`, check `E₊[J] − E₋[J] = 0` to within 3 standard errors.
pub fn zero_expected_loss_check(
    p: &Array2<f64>,
    q: &Array2<f64>,
    sampler: &SamplerSpec,
    n: usize,
) -> Result<ZeroLossReport> {
    let d = sampler.d;
    let op = BilinearOperator::general(Array3::zeros((d, d, d)), p.clone(), q.clone())?;
    let est = mc_expected_loss_difference(&op, sampler, n)?;
    let diff = &est.difference;
    let statistical_pass = diff.estimate.abs() <= 3.0 * diff.std_error;
    let warnings = low_power(n);
    Ok(ZeroLossReport {
        z: z_score(diff.estimate, diff.std_error),
        pass: statistical_pass || !warnings.is_empty(),
        statistical_pass,
        positive_term: est.positive_term,
        negative_term: est.negative_term,
        report: est.difference,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormReport {
    pub report: MonteCarloReport,
    pub analytic: f64,
    pub z: f64,
    pub tolerance_se: f64,
    pub pass: bool,
    pub warnings: Vec<String>,
}

/// Compare the positive-term estimate for `(A = 0, P, Q)` against
/// `2(tr PᵀP + tr QᵀQ)`, passing within `tolerance_se` standard errors.
pub fn closed_form_check(
    p: &Array2<f64>,
    q: &Array2<f64>,
    sampler: &SamplerSpec,
    n: usize,
    tolerance_se: f64,
) -> Result<ClosedFormReport> {
    let d = sampler.d;
    let op = BilinearOperator::general(Array3::zeros((d, d, d)), p.clone(), q.clone())?;
    let report = mc_expected_positive_loss(&op, sampler, n)?;
    let analytic = closed_form_positive_loss(p, q);
    let z = z_score(report.estimate - analytic, report.std_error);
    let warnings = low_power(n);
    Ok(ClosedFormReport {
        pass: z <= tolerance_se || !warnings.is_empty(),
        report,
        analytic,
        z,
        tolerance_se,
        warnings,
    })
}

/// Positive-term estimates for one operator under both pair couplings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub independent: MonteCarloReport,
    pub identical_tail: MonteCarloReport,
    pub discrepancy: f64,
    pub discrepancy_std_error: f64,
}

/// Measure how the positive term moves when `t = h` instead of
/// independent, for the same operator and distribution.
pub fn coupling_discrepancy(
    op: &BilinearOperator,
    sampler: &SamplerSpec,
    n: usize,
) -> Result<CouplingReport> {
    let mut spec = sampler.clone();
    spec.pair_coupling = PairCoupling::Independent;
    let independent = mc_expected_positive_loss(op, &spec, n)?;
    spec.pair_coupling = PairCoupling::IdenticalTail;
    let identical_tail = mc_expected_positive_loss(op, &spec, n)?;
    Ok(CouplingReport {
        discrepancy: identical_tail.estimate - independent.estimate,
        discrepancy_std_error: identical_tail.std_error.hypot(independent.std_error),
        independent,
        identical_tail,
    })
}

/// PairDiff relational distance, exposed for the synthetic-data checks.
pub fn pairdiff_distance_sq(a: Pair<'_>, b: Pair<'_>) -> f64 {
    a.0.iter()
        .zip(a.1)
        .zip(b.0.iter().zip(b.1))
        .map(|((h, t), (h2, t2))| ((h - t) - (h2 - t2)).powi(2))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compose::{relational_distance_sq, relational_similarity};
    use crate::embedding::correlation_report;

    #[test]
    fn rademacher_support() {
        let e = synth_embeddings(200, 4, Distribution::Rademacher, 3).unwrap();
        assert!(e.vectors().iter().all(|&x| x == 1.0 || x == -1.0));
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_embeddings(50, 3, Distribution::StandardNormal, 8).unwrap();
        let b = synth_embeddings(50, 3, Distribution::StandardNormal, 8).unwrap();
        let c = synth_embeddings(50, 3, Distribution::StandardNormal, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_dimensions_are_uncorrelated() {
        let m = 10_000;
        let e = synth_embeddings(m, 50, Distribution::StandardNormal, 1).unwrap();
        let report = correlation_report(&e, 100).unwrap();
        assert!(report.mean_abs_offdiag <= 3.0 / (m as f64).sqrt());
    }

    #[test]
    fn noiseless_offsets_are_constant() {
        let (e, groups) = synth_offset_relations(5, 3, 2, 0.0, 4).unwrap();
        let op = BilinearOperator::pairdiff(3);
        for g in &groups {
            let offsets: Vec<Vec<f64>> = g
                .pairs
                .iter()
                .map(|(h, t)| {
                    let (h, t) = (e.lookup(h).unwrap(), e.lookup(t).unwrap());
                    h.iter().zip(t).map(|(a, b)| b - a).collect()
                })
                .collect();
            for o in &offsets[1..] {
                for (x, y) in o.iter().zip(&offsets[0]) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
            let p0 = (
                e.lookup(&g.pairs[0].0).unwrap(),
                e.lookup(&g.pairs[0].1).unwrap(),
            );
            let p1 = (
                e.lookup(&g.pairs[1].0).unwrap(),
                e.lookup(&g.pairs[1].1).unwrap(),
            );
            assert!(relational_distance_sq(&op, p0, p1).unwrap() < 1e-24);
            assert!(pairdiff_distance_sq(p0, p1) < 1e-24);
        }
    }

    #[test]
    fn antiparallel_offsets() {
        let offsets = vec![vec![1.0, -2.0, 0.5], vec![-1.0, 2.0, -0.5]];
        let (e, groups) = synth_offset_relations_with_offsets(&offsets, 2, 0.0, 6).unwrap();
        let op = BilinearOperator::pairdiff(3);
        let pair = |g: usize| {
            let (h, t) = &groups[g].pairs[0];
            (e.lookup(h).unwrap(), e.lookup(t).unwrap())
        };
        let s = relational_similarity(&op, pair(0), pair(1)).unwrap();
        assert!((s.value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn moments_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000)
            .map(|i| ((i * 37) % 101) as f64 * 0.3 - 7.0)
            .collect();
        let mut whole = Moments::default();
        xs.iter().for_each(|&x| whole.push(x));
        let merged = xs
            .chunks(77)
            .map(|c| {
                let mut m = Moments::default();
                c.iter().for_each(|&x| m.push(x));
                m
            })
            .fold(Moments::default(), Moments::merge);
        assert_eq!(merged.n, whole.n);
        assert!((merged.mean - whole.mean).abs() < 1e-12);
        assert!((merged.m2 - whole.m2).abs() < 1e-8 * whole.m2);
        // two-pass reference
        let mean = xs.iter().sum::<f64>() / 1000.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 999.0;
        assert!((merged.std_error() - (var / 1000.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn zero_operator_is_exact() {
        let op = BilinearOperator::zeros(3, crate::compose::ConstraintMode::General);
        let r =
            mc_expected_positive_loss(&op, &SamplerSpec::independent_normal(3, 1), 100).unwrap();
        assert_eq!((r.estimate, r.std_error, r.n_samples), (0.0, 0.0, 100));

        let zeros = Array2::zeros((3, 3));
        let z =
            zero_expected_loss_check(&zeros, &zeros, &SamplerSpec::independent_normal(3, 1), 5000)
                .unwrap();
        assert_eq!((z.report.estimate, z.report.std_error), (0.0, 0.0));
        assert!(z.pass && z.statistical_pass);
    }

    #[test]
    fn rejects_bad_inputs() {
        let op = BilinearOperator::pairdiff(3);
        assert!(mc_expected_positive_loss(&op, &SamplerSpec::independent_normal(3, 1), 1).is_err());
        assert!(
            mc_expected_positive_loss(&op, &SamplerSpec::independent_normal(4, 1), 10).is_err()
        );
        let eye = Array2::eye(2);
        assert!(theorem1_independence_check(
            &eye,
            &eye,
            &SamplerSpec::independent_normal(2, 0),
            100,
            1,
            1.0,
            0
        )
        .is_err());
    }

    /// Exact expectation over all 2^(4d) Rademacher quadruples.
    fn rademacher_exact(op: &BilinearOperator, coupling: PairCoupling) -> f64 {
        let d = op.dim();
        let free = match coupling {
            PairCoupling::Independent => 4 * d,
            PairCoupling::IdenticalTail => 2 * d,
        };
        let mut total = 0.0;
        let (mut r1, mut r2) = (vec![0.0; d], vec![0.0; d]);
        for bits in 0u32..(1 << free) {
            let v: Vec<f64> = (0..free)
                .map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 })
                .collect();
            let (h, t, h2, t2) = match coupling {
                PairCoupling::Independent => (&v[..d], &v[d..2 * d], &v[2 * d..3 * d], &v[3 * d..]),
                PairCoupling::IdenticalTail => (&v[..d], &v[..d], &v[d..], &v[d..]),
            };
            op.compose_into(h, t, &mut r1);
            op.compose_into(h2, t2, &mut r2);
            total += r1
                .iter()
                .zip(&r2)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        }
        total / (1u64 << free) as f64
    }

    #[test]
    fn enumeration_oracle_agrees_with_closed_form() {
        let op = BilinearOperator::pairdiff(2);
        assert_eq!(rademacher_exact(&op, PairCoupling::Independent), 8.0);
        assert_eq!(
            closed_form_positive_loss(&op.p_matrix(), &op.q_matrix()),
            8.0
        );

        let tensor = Array3::from_shape_fn((2, 2, 2), |(k, i, j)| {
            0.25 * (k + i) as f64 - 0.5 * j as f64
        });
        let op = BilinearOperator::general(
            tensor,
            ndarray::array![[1.0, 0.5], [0.0, -1.0]],
            ndarray::array![[0.2, 0.0], [1.0, 1.0]],
        )
        .unwrap();
        let exact = rademacher_exact(&op, PairCoupling::Independent);
        assert!((exact - independent_positive_loss(&op)).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_agrees_with_enumeration() {
        let tensor = Array3::from_shape_fn((2, 2, 2), |(k, i, j)| {
            (k as f64 - i as f64) * 0.5 + j as f64 * 0.25
        });
        let op = BilinearOperator::general(
            tensor,
            ndarray::array![[1.0, -0.5], [0.3, 1.0]],
            ndarray::array![[-1.0, 0.0], [0.5, -0.7]],
        )
        .unwrap();
        for coupling in [PairCoupling::Independent, PairCoupling::IdenticalTail] {
            let exact = rademacher_exact(&op, coupling);
            let spec = SamplerSpec {
                d: 2,
                pair_coupling: coupling,
                cross_pair_coupling: CrossPairCoupling::Independent,
                distribution: Distribution::Rademacher,
                seed: 21,
            };
            let r = mc_expected_positive_loss(&op, &spec, 200_000).unwrap();
            assert!(
                (r.estimate - exact).abs() <= 4.0 * r.std_error,
                "{coupling:?}: {} vs {exact} (se {})",
                r.estimate,
                r.std_error
            );
        }
    }

    #[test]
    fn pairdiff_positive_loss_is_twenty_at_d5() {
        let op = BilinearOperator::pairdiff(5);
        let r = mc_expected_positive_loss(&op, &SamplerSpec::independent_normal(5, 12), 100_000)
            .unwrap();
        assert!((r.estimate - 20.0).abs() <= 3.0 * r.std_error, "{r:?}");
    }

    #[test]
    fn doubling_n_halves_variance() {
        let op = BilinearOperator::pairdiff(3);
        let mut ratios = Vec::new();
        for seed in 0..10 {
            let spec = SamplerSpec::independent_normal(3, seed);
            let small = mc_expected_positive_loss(&op, &spec, 20_000).unwrap();
            let large = mc_expected_positive_loss(&op, &spec, 40_000).unwrap();
            ratios.push(small.std_error.powi(2) / large.std_error.powi(2));
        }
        for r in ratios {
            assert!((1.0..=4.0).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn estimates_do_not_depend_on_thread_count() {
        let op = BilinearOperator::pairdiff(4);
        let spec = SamplerSpec::independent_normal(4, 99);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mc_expected_positive_loss(&op, &spec, 3 * CHUNK + 17).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn tiny_n_warns_instead_of_failing() {
        let eye = Array2::eye(3);
        let report = theorem1_independence_check(
            &eye,
            &(-&eye),
            &SamplerSpec::independent_normal(3, 5),
            10,
            4,
            1.0,
            2,
        )
        .unwrap();
        assert!(report.pass);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn zero_tensor_draws_pass() {
        let eye = Array2::eye(3);
        let report = theorem1_independence_check(
            &eye,
            &(-&eye),
            &SamplerSpec::independent_normal(3, 5),
            5000,
            4,
            0.0,
            2,
        )
        .unwrap();
        assert!(report.draws.iter().all(|d| d.frob_a == 0.0));
        assert!(report.pass && report.warnings.is_empty());
    }
}
