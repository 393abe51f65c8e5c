//! The bilinear relation operator `r(h, t) = hᵀ A t + P h + Q t` and the
//! distances and similarities built on it.
//!
//! `A` is a `d × d × d` tensor stored densely as `[k][i][j]`, so slice `k`
//! is the `d × d` matrix that produces the `k`-th output component.
//! In diagonal mode `P = pI` and `Q = qI` are held as two scalars and only
//! materialized on request.

use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Eq, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintMode {
    General,
    Diagonal,
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintMode::General => f.write_str("general"),
            ConstraintMode::Diagonal => f.write_str("diagonal"),
        }
    }
}

impl std::str::FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(ConstraintMode::General),
            "diagonal" => Ok(ConstraintMode::Diagonal),
            other => Err(Error::InvalidParameter(format!(
                "unknown constraint mode {other:?} (expected general or diagonal)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum FirstOrder {
    General { p: Array2<f64>, q: Array2<f64> },
    Diagonal { p: f64, q: f64 },
}

/// Parameters `(A, P, Q)` of the bilinear composition operator.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearOperator {
    dim: usize,
    tensor: Array3<f64>,
    first_order: FirstOrder,
}

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{what} has non-finite entries"
        )))
    }
}

impl BilinearOperator {
    /// General-mode operator from a `d × d × d` tensor and full `P`, `Q`.
    pub fn general(tensor: Array3<f64>, p: Array2<f64>, q: Array2<f64>) -> Result<Self> {
        let dim = tensor.dim().0;
        check_cube(&tensor)?;
        for m in [&p, &q] {
            if m.dim() != (dim, dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: if m.nrows() != dim {
                        m.nrows()
                    } else {
                        m.ncols()
                    },
                });
            }
        }
        check_finite(&tensor, "tensor")?;
        check_finite(p.iter().chain(q.iter()), "P/Q")?;
        Ok(BilinearOperator {
            dim,
            tensor: tensor.as_standard_layout().into_owned(),
            first_order: FirstOrder::General {
                p: p.as_standard_layout().into_owned(),
                q: q.as_standard_layout().into_owned(),
            },
        })
    }

    /// Diagonal-mode operator with `P = pI`, `Q = qI`.
    pub fn diagonal(tensor: Array3<f64>, p: f64, q: f64) -> Result<Self> {
        check_cube(&tensor)?;
        check_finite(tensor.iter().chain([&p, &q]), "operator")?;
        Ok(BilinearOperator {
            dim: tensor.dim().0,
            tensor: tensor.as_standard_layout().into_owned(),
            first_order: FirstOrder::Diagonal { p, q },
        })
    }

    /// The all-zero operator in the given mode.
    pub fn zeros(dim: usize, mode: ConstraintMode) -> Self {
        let tensor = Array3::zeros((dim, dim, dim));
        let first_order = match mode {
            ConstraintMode::General => FirstOrder::General {
                p: Array2::zeros((dim, dim)),
                q: Array2::zeros((dim, dim)),
            },
            ConstraintMode::Diagonal => FirstOrder::Diagonal { p: 0.0, q: 0.0 },
        };
        BilinearOperator {
            dim,
            tensor,
            first_order,
        }
    }

    /// `A = 0`, `P = I`, `Q = −I`: the vector offset `h − t`.
    pub fn pairdiff(dim: usize) -> Self {
        Self::scaled_pairdiff(dim, 1.0)
    }

    /// `A = 0`, `P = cI`, `Q = −cI`.
    pub fn scaled_pairdiff(dim: usize, c: f64) -> Self {
        BilinearOperator {
            dim,
            tensor: Array3::zeros((dim, dim, dim)),
            first_order: FirstOrder::Diagonal { p: c, q: -c },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> ConstraintMode {
        match self.first_order {
            FirstOrder::General { .. } => ConstraintMode::General,
            FirstOrder::Diagonal { .. } => ConstraintMode::Diagonal,
        }
    }

    pub fn tensor(&self) -> &Array3<f64> {
        &self.tensor
    }

    /// `(p, q)` for a diagonal-mode operator.
    pub fn diagonal_scalars(&self) -> Option<(f64, f64)> {
        match self.first_order {
            FirstOrder::Diagonal { p, q } => Some((p, q)),
            FirstOrder::General { .. } => None,
        }
    }

    /// `P`, materialized as `pI` in diagonal mode.
    pub fn p_matrix(&self) -> Array2<f64> {
        match &self.first_order {
            FirstOrder::General { p, .. } => p.clone(),
            FirstOrder::Diagonal { p, .. } => Array2::eye(self.dim) * *p,
        }
    }

    /// `Q`, materialized as `qI` in diagonal mode.
    pub fn q_matrix(&self) -> Array2<f64> {
        match &self.first_order {
            FirstOrder::General { q, .. } => q.clone(),
            FirstOrder::Diagonal { q, .. } => Array2::eye(self.dim) * *q,
        }
    }

    /// Replace the tensor with `A` of the same shape.
    pub fn with_tensor(&self, tensor: Array3<f64>) -> Result<Self> {
        if tensor.dim() != self.tensor.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: tensor.dim().0,
            });
        }
        check_finite(&tensor, "tensor")?;
        Ok(BilinearOperator {
            dim: self.dim,
            tensor: tensor.as_standard_layout().into_owned(),
            first_order: self.first_order.clone(),
        })
    }

    /// All trainable parameters as one flat vector: the tensor in
    /// `[k][i][j]` order followed by `p, q` (diagonal) or the row-major
    /// entries of `P` then `Q` (general).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.tensor.as_slice().expect("standard layout").to_vec();
        match &self.first_order {
            FirstOrder::Diagonal { p, q } => out.extend([*p, *q]),
            FirstOrder::General { p, q } => {
                out.extend(p.iter());
                out.extend(q.iter());
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        let d = self.dim;
        d * d * d
            + match self.first_order {
                FirstOrder::Diagonal { .. } => 2,
                FirstOrder::General { .. } => 2 * d * d,
            }
    }

    /// Inverse of [`BilinearOperator::flatten`].
    pub fn assign(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_parameters(), "parameter count");
        let n = self.dim.pow(3);
        let d2 = self.dim * self.dim;
        self.tensor
            .as_slice_mut()
            .expect("standard layout")
            .copy_from_slice(&params[..n]);
        match &mut self.first_order {
            FirstOrder::Diagonal { p, q } => {
                *p = params[n];
                *q = params[n + 1];
            }
            FirstOrder::General { p, q } => {
                p.as_slice_mut()
                    .expect("standard layout")
                    .copy_from_slice(&params[n..n + d2]);
                q.as_slice_mut()
                    .expect("standard layout")
                    .copy_from_slice(&params[n + d2..]);
            }
        }
    }

    /// Write `r(h, t)` into `out` without allocating.
    ///
    /// Panics if any slice length differs from `d`; use [`compose`] for a
    /// checked version.
    pub fn compose_into(&self, h: &[f64], t: &[f64], out: &mut [f64]) {
        let d = self.dim;
        assert!(h.len() == d && t.len() == d && out.len() == d);
        let a = self.tensor.as_slice().expect("standard layout");
        for (k, r) in out.iter_mut().enumerate() {
            let slice = &a[k * d * d..(k + 1) * d * d];
            let mut acc = 0.0;
            for (i, &hi) in h.iter().enumerate() {
                let row = &slice[i * d..(i + 1) * d];
                let inner: f64 = row.iter().zip(t).map(|(a, t)| a * t).sum();
                acc += hi * inner;
            }
            *r = acc;
        }
        match &self.first_order {
            FirstOrder::Diagonal { p, q } => {
                for ((r, hi), ti) in out.iter_mut().zip(h).zip(t) {
                    *r += p * hi + q * ti;
                }
            }
            FirstOrder::General { p, q } => {
                for (k, r) in out.iter_mut().enumerate() {
                    let ph: f64 = p.row(k).iter().zip(h).map(|(a, b)| a * b).sum();
                    let qt: f64 = q.row(k).iter().zip(t).map(|(a, b)| a * b).sum();
                    *r += ph + qt;
                }
            }
        }
    }

    /// Short content hash identifying the operator's exact parameter values.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_file()).expect("operator serializes");
        let hash = Sha256::digest(&bytes);
        hex::encode(&hash[..8])
    }

    pub fn to_file(&self) -> OperatorFile {
        let (p, q) = self.diagonal_scalars().unzip();
        OperatorFile {
            d: self.dim,
            constraint_mode: self.mode(),
            p,
            q,
            a: self.tensor.iter().copied().collect(),
            p_matrix: self.p_matrix().iter().copied().collect(),
            q_matrix: self.q_matrix().iter().copied().collect(),
        }
    }

    pub fn from_file(file: OperatorFile) -> Result<Self> {
        let d = file.d;
        if d == 0 {
            return Err(Error::InvalidParameter(
                "operator dimension must be >= 1".into(),
            ));
        }
        let tensor = Array3::from_shape_vec((d, d, d), file.a).map_err(|_| {
            Error::InvalidParameter(format!("A must hold d^3 = {} values", d * d * d))
        })?;
        let p = Array2::from_shape_vec((d, d), file.p_matrix)
            .map_err(|_| Error::InvalidParameter(format!("P must hold d^2 = {} values", d * d)))?;
        let q = Array2::from_shape_vec((d, d), file.q_matrix)
            .map_err(|_| Error::InvalidParameter(format!("Q must hold d^2 = {} values", d * d)))?;
        match file.constraint_mode {
            ConstraintMode::General => Self::general(tensor, p, q),
            ConstraintMode::Diagonal => {
                let (Some(ps), Some(qs)) = (file.p, file.q) else {
                    return Err(Error::InvalidParameter(
                        "diagonal operator needs scalar p and q".into(),
                    ));
                };
                let op = Self::diagonal(tensor, ps, qs)?;
                if op.p_matrix() != p || op.q_matrix() != q {
                    return Err(Error::InvalidParameter(
                        "diagonal operator: P and Q must equal pI and qI".into(),
                    ));
                }
                Ok(op)
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("operator serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

fn check_cube(tensor: &Array3<f64>) -> Result<()> {
    let (k, i, j) = tensor.dim();
    if k == 0 {
        return Err(Error::InvalidParameter(
            "operator dimension must be >= 1".into(),
        ));
    }
    if i != k || j != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: if i != k { i } else { j },
        });
    }
    Ok(())
}

/// On-disk JSON form of a [`BilinearOperator`].
///
/// `A` is flattened `[k][i][j]`, `P` and `Q` row-major. `p` and `q` are
/// `null` in general mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorFile {
    pub d: usize,
    pub constraint_mode: ConstraintMode,
    pub p: Option<f64>,
    pub q: Option<f64>,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "P")]
    pub p_matrix: Vec<f64>,
    #[serde(rename = "Q")]
    pub q_matrix: Vec<f64>,
}

/// A relation embedding `r(h, t)` with `δ = d` components.
/// Serialized as a plain list of numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", from = "Vec<f64>")]
pub struct RelationVector(pub Array1<f64>);

impl From<RelationVector> for Vec<f64> {
    fn from(r: RelationVector) -> Self {
        r.0.to_vec()
    }
}

impl RelationVector {
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("contiguous")
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.dot(&self.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for RelationVector {
    fn from(v: Vec<f64>) -> Self {
        RelationVector(Array1::from(v))
    }
}

/// A word pair resolved to its two embedding vectors.
pub type Pair<'a> = (&'a [f64], &'a [f64]);

fn check_len(op_dim: usize, v: &[f64]) -> Result<()> {
    if v.len() != op_dim {
        return Err(Error::DimensionMismatch {
            expected: op_dim,
            found: v.len(),
        });
    }
    Ok(())
}

/// `rₖ = Σᵢⱼ A⁽ᵏ⁾ᵢⱼ hᵢ tⱼ + Σₙ Pₖₙ hₙ + Σₙ Qₖₙ tₙ`.
pub fn compose(op: &BilinearOperator, h: &[f64], t: &[f64]) -> Result<RelationVector> {
    check_len(op.dim(), h)?;
    check_len(op.dim(), t)?;
    let mut out = vec![0.0; op.dim()];
    op.compose_into(h, t, &mut out);
    Ok(out.into())
}

/// The offset `h − t`, optionally scaled per dimension by `inv_sigma`.
pub fn pairdiff(h: &[f64], t: &[f64], inv_sigma: Option<&[f64]>) -> Result<RelationVector> {
    check_len(h.len(), t)?;
    let mut out: Vec<f64> = h.iter().zip(t).map(|(a, b)| a - b).collect();
    if let Some(scale) = inv_sigma {
        check_len(h.len(), scale)?;
        if let Some(bad) = scale.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "inv_sigma[{bad}] must be positive, got {}",
                scale[bad]
            )));
        }
        out.iter_mut().zip(scale).for_each(|(r, s)| *r *= s);
    }
    Ok(out.into())
}

/// `‖r(h, t) − r(h′, t′)‖²`.
pub fn relational_distance_sq(op: &BilinearOperator, a: Pair<'_>, b: Pair<'_>) -> Result<f64> {
    let ra = compose(op, a.0, a.1)?;
    let rb = compose(op, b.0, b.1)?;
    Ok(squared_distance(ra.as_slice(), rb.as_slice()))
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Cosine similarity of two relation vectors.
///
/// A zero-norm vector has no direction; its similarity to anything is
/// reported as `0` with `degenerate` set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub value: f64,
    pub degenerate: bool,
}

pub fn cosine(a: &[f64], b: &[f64]) -> Similarity {
    let ab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    if aa == 0.0 || bb == 0.0 {
        return Similarity {
            value: 0.0,
            degenerate: true,
        };
    }
    // sqrt(aa * bb) rather than sqrt(aa) * sqrt(bb): exact 1 for identical
    // vectors.
    Similarity {
        value: (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Cosine similarity between `r(a)` and `r(b)`.
pub fn relational_similarity(
    op: &BilinearOperator,
    a: Pair<'_>,
    b: Pair<'_>,
) -> Result<Similarity> {
    let ra = compose(op, a.0, a.1)?;
    let rb = compose(op, b.0, b.1)?;
    Ok(cosine(ra.as_slice(), rb.as_slice()))
}

/// `‖A‖_F` over all `d³` entries.
pub fn frobenius_norm_a(op: &BilinearOperator) -> f64 {
    op.tensor.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    /// Triple loop straight from the component formula.
    fn naive_compose(
        a: &Array3<f64>,
        p: &Array2<f64>,
        q: &Array2<f64>,
        h: &[f64],
        t: &[f64],
    ) -> Vec<f64> {
        let d = h.len();
        (0..d)
            .map(|k| {
                let mut r = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        r += a[[k, i, j]] * h[i] * t[j];
                    }
                }
                for n in 0..d {
                    r += p[[k, n]] * h[n] + q[[k, n]] * t[n];
                }
                r
            })
            .collect()
    }

    #[test]
    fn pairdiff_reduction() {
        let op = BilinearOperator::pairdiff(2);
        let r = compose(&op, &[1.0, 2.0], &[3.0, 5.0]).unwrap();
        assert_eq!(r.as_slice(), &[-2.0, -3.0]);
    }

    #[test]
    fn zero_operator() {
        for mode in [ConstraintMode::General, ConstraintMode::Diagonal] {
            let op = BilinearOperator::zeros(3, mode);
            let r = compose(&op, &[1.0, -2.0, 7.0], &[3.0, 5.0, 0.5]).unwrap();
            assert_eq!(r.as_slice(), &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn bilinear_hand_expansion() {
        let mut a = Array3::zeros((2, 2, 2));
        a[[0, 0, 0]] = 1.0;
        let op = BilinearOperator::diagonal(a.clone(), 1.0, -1.0).unwrap();
        let h = [1.0, 2.0];
        let t = [3.0, 5.0];
        let r = compose(&op, &h, &t).unwrap();
        assert_eq!(r.as_slice(), &[1.0, -3.0]);
        let naive = naive_compose(&a, &Array2::eye(2), &(-Array2::eye(2)), &h, &t);
        assert_eq!(naive, vec![1.0, -3.0]);
    }

    #[test]
    fn general_mode_matches_naive() {
        let a = Array3::from_shape_fn((3, 3, 3), |(k, i, j)| (k + 2 * i) as f64 - 0.5 * j as f64);
        let p = array![[1.0, 2.0, 0.0], [0.5, -1.0, 3.0], [0.0, 0.0, 1.0]];
        let q = array![[0.0, -2.0, 1.0], [1.0, 1.0, 1.0], [-3.0, 0.0, 0.25]];
        let op = BilinearOperator::general(a.clone(), p.clone(), q.clone()).unwrap();
        let h = [0.3, -1.2, 2.0];
        let t = [1.5, 0.25, -0.75];
        let r = compose(&op, &h, &t).unwrap();
        for (x, y) in r.as_slice().iter().zip(naive_compose(&a, &p, &q, &h, &t)) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let op = BilinearOperator::pairdiff(2);
        assert!(matches!(
            compose(&op, &[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 1
            })
        ));
        assert!(pairdiff(&[1.0], &[1.0, 2.0], None).is_err());
        assert!(BilinearOperator::general(
            Array3::zeros((2, 2, 2)),
            Array2::eye(3),
            Array2::eye(2)
        )
        .is_err());
        assert!(BilinearOperator::diagonal(Array3::zeros((2, 3, 2)), 1.0, 1.0).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(BilinearOperator::diagonal(Array3::zeros((1, 1, 1)), f64::NAN, 1.0).is_err());
        let mut a = Array3::zeros((1, 1, 1));
        a[[0, 0, 0]] = f64::INFINITY;
        assert!(BilinearOperator::general(a, Array2::eye(1), Array2::eye(1)).is_err());
    }

    #[test]
    fn pairdiff_cases() {
        assert_eq!(
            pairdiff(&[1.0, 2.0], &[3.0, 5.0], None).unwrap().as_slice(),
            &[-2.0, -3.0]
        );
        assert_eq!(
            pairdiff(&[4.0, 4.0], &[4.0, 4.0], None).unwrap().as_slice(),
            &[0.0, 0.0]
        );
        // σ = (2, 1) → 1/σ = (0.5, 1)
        assert_eq!(
            pairdiff(&[2.0, 2.0], &[0.0, 0.0], Some(&[0.5, 1.0]))
                .unwrap()
                .as_slice(),
            &[1.0, 2.0]
        );
        assert!(pairdiff(&[2.0], &[0.0], Some(&[0.0])).is_err());
        assert!(pairdiff(&[2.0], &[0.0], Some(&[-1.0])).is_err());
    }

    #[test]
    fn distance_and_similarity_basics() {
        let op = BilinearOperator::pairdiff(2);
        // r = (1, 0) and (0, 1)
        let a: Pair = (&[1.0, 0.0], &[0.0, 0.0]);
        let b: Pair = (&[0.0, 1.0], &[0.0, 0.0]);
        assert_eq!(relational_distance_sq(&op, a, a).unwrap(), 0.0);
        assert_eq!(relational_distance_sq(&op, a, b).unwrap(), 2.0);
        assert_eq!(relational_distance_sq(&op, b, a).unwrap(), 2.0);

        assert_eq!(relational_similarity(&op, a, a).unwrap().value, 1.0);
        assert_eq!(relational_similarity(&op, a, b).unwrap().value, 0.0);
        let c: Pair = (&[1.0, 1.0], &[0.0, 0.0]);
        let d: Pair = (&[0.0, 0.0], &[2.0, 2.0]);
        assert_eq!(relational_similarity(&op, c, d).unwrap().value, -1.0);
    }

    #[test]
    fn zero_relation_is_degenerate() {
        let op = BilinearOperator::pairdiff(2);
        let same: Pair = (&[1.0, 1.0], &[1.0, 1.0]);
        let other: Pair = (&[1.0, 0.0], &[0.0, 0.0]);
        let s = relational_similarity(&op, same, other).unwrap();
        assert_eq!(
            s,
            Similarity {
                value: 0.0,
                degenerate: true
            }
        );
    }

    #[test]
    fn frobenius() {
        assert_eq!(frobenius_norm_a(&BilinearOperator::pairdiff(3)), 0.0);
        let mut a = Array3::zeros((2, 2, 2));
        a[[1, 0, 1]] = 3.0;
        assert_eq!(
            frobenius_norm_a(&BilinearOperator::diagonal(a, 0.0, 0.0).unwrap()),
            3.0
        );
        let ones = BilinearOperator::diagonal(Array3::ones((2, 2, 2)), 0.0, 0.0).unwrap();
        assert_eq!(frobenius_norm_a(&ones), 8f64.sqrt());
    }

    #[test]
    fn diagonal_materializes_exactly() {
        let op = BilinearOperator::diagonal(Array3::zeros((3, 3, 3)), 0.7, -1.3).unwrap();
        assert_eq!(op.p_matrix(), Array2::<f64>::eye(3) * 0.7);
        assert_eq!(op.q_matrix(), Array2::<f64>::eye(3) * -1.3);
        assert_eq!(op.diagonal_scalars(), Some((0.7, -1.3)));
    }

    #[test]
    fn flatten_assign() {
        let a = Array3::from_shape_fn((2, 2, 2), |(k, i, j)| (k * 4 + i * 2 + j) as f64);
        let mut op = BilinearOperator::diagonal(a, 0.5, -0.5).unwrap();
        let mut params = op.flatten();
        assert_eq!(params.len(), 10);
        assert_eq!(&params[..3], &[0.0, 1.0, 2.0]);
        params[8] = 2.0;
        params[0] = -1.0;
        op.assign(&params);
        assert_eq!(op.diagonal_scalars(), Some((2.0, -0.5)));
        assert_eq!(op.tensor()[[0, 0, 0]], -1.0);
    }

    #[test]
    fn operator_file_rejects_inconsistent_diagonal() {
        let mut file = BilinearOperator::pairdiff(2).to_file();
        file.p_matrix[1] = 0.5;
        assert!(BilinearOperator::from_file(file).is_err());
        let mut file = BilinearOperator::pairdiff(2).to_file();
        file.a.pop();
        assert!(BilinearOperator::from_file(file).is_err());
    }

    fn arb_operator(d: usize) -> impl Strategy<Value = BilinearOperator> {
        arb_operator_in(d, 1e3)
    }

    fn arb_operator_in(d: usize, range: f64) -> impl Strategy<Value = BilinearOperator> {
        (
            prop::collection::vec(-range..range, d * d * d),
            prop::collection::vec(-range..range, d * d),
            prop::collection::vec(-range..range, d * d),
            any::<bool>(),
        )
            .prop_map(move |(a, p, q, diag)| {
                let a = Array3::from_shape_vec((d, d, d), a).unwrap();
                if diag {
                    BilinearOperator::diagonal(a, p[0], q[0]).unwrap()
                } else {
                    BilinearOperator::general(
                        a,
                        Array2::from_shape_vec((d, d), p).unwrap(),
                        Array2::from_shape_vec((d, d), q).unwrap(),
                    )
                    .unwrap()
                }
            })
    }

    proptest! {
        #[test]
        fn json_round_trip_is_exact(op in (1usize..4).prop_flat_map(arb_operator)) {
            let back = BilinearOperator::from_json(&op.to_json()).unwrap();
            prop_assert_eq!(&back, &op);
            prop_assert_eq!(back.digest(), op.digest());
        }

        #[test]
        fn compose_is_linear_in_tensor(
            op in arb_operator_in(3, 1.0),
            h in prop::collection::vec(-2f64..2.0, 3),
            t in prop::collection::vec(-2f64..2.0, 3),
            alpha in -3f64..3.0,
        ) {
            let zero_a = op.with_tensor(Array3::zeros((3, 3, 3))).unwrap();
            let scaled = op.with_tensor(op.tensor() * alpha).unwrap();
            let base = compose(&zero_a, &h, &t).unwrap();
            let full = compose(&op, &h, &t).unwrap();
            let sc = compose(&scaled, &h, &t).unwrap();
            for k in 0..3 {
                let lhs = sc.0[k] - base.0[k];
                let rhs = alpha * (full.0[k] - base.0[k]);
                prop_assert!((lhs - rhs).abs() <= 1e-12);
            }
        }

        #[test]
        fn distance_matches_naive(
            op in arb_operator(2),
            v in prop::collection::vec(-5f64..5.0, 8),
        ) {
            let a: Pair = (&v[0..2], &v[2..4]);
            let b: Pair = (&v[4..6], &v[6..8]);
            let dist = relational_distance_sq(&op, a, b).unwrap();
            let (pa, qa) = (op.p_matrix(), op.q_matrix());
            let ra = naive_compose(op.tensor(), &pa, &qa, a.0, a.1);
            let rb = naive_compose(op.tensor(), &pa, &qa, b.0, b.1);
            let naive: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
            prop_assert!(dist >= 0.0);
            prop_assert!((dist - naive).abs() <= 1e-12 * (1.0 + naive));
            prop_assert_eq!(dist, relational_distance_sq(&op, b, a).unwrap());
        }

        #[test]
        fn similarity_is_scale_invariant(
            r1 in prop::collection::vec(-5f64..5.0, 4),
            r2 in prop::collection::vec(-5f64..5.0, 4),
            c in 1e-3f64..1e3,
        ) {
            let base = cosine(&r1, &r2);
            let scaled: Vec<f64> = r1.iter().map(|x| x * c).collect();
            let s = cosine(&scaled, &r2);
            prop_assert!((base.value - s.value).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s.value));
        }
    }
}
