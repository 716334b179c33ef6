//! Complex linear algebra on `C^k` and the geometry of the projective space
//! `P(C^k)`: the metric `d(x̂, ŷ) = sqrt(1 - |<x, y>|^2)`, the action of
//! matrices on rays, second exterior powers and rank-one projectors.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Images with norm at or below this are treated as the zero vector.
pub const NULL_IMAGE_THRESHOLD: f64 = 1e-300;

/// Coordinates with modulus below this are skipped when fixing the phase.
const PHASE_CUTOFF: f64 = 1e-12;

/// A square complex matrix with finite entries.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    data: DMatrix<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexMatrix{}", self.data)
    }
}

impl ComplexMatrix {
    pub fn new(data: DMatrix<C64>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::NotSquare {
                rows: data.nrows(),
                cols: data.ncols(),
            });
        }
        if data.nrows() == 0 {
            return Err(Error::Empty("matrix"));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(Self { data })
    }

    /// Builds a matrix from row-major rows.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let k = rows.len();
        for row in rows {
            if row.len() != k {
                return Err(Error::NotSquare {
                    rows: k,
                    cols: row.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
    }

    /// Builds a real matrix from a row-major slice of length `k*k`.
    pub fn from_real(k: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != k * k {
            return Err(Error::DimensionMismatch {
                expected: k * k,
                found: entries.len(),
            });
        }
        Self::new(DMatrix::from_fn(k, k, |i, j| C64::new(entries[i * k + j], 0.0)))
    }

    pub fn identity(k: usize) -> Self {
        Self {
            data: DMatrix::identity(k, k),
        }
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            data: DMatrix::zeros(k, k),
        }
    }

    pub fn diag_real(diag: &[f64]) -> Self {
        let k = diag.len();
        Self {
            data: DMatrix::from_fn(k, k, |i, j| {
                if i == j {
                    C64::new(diag[i], 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<C64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[(i, j)]
    }

    pub fn adjoint(&self) -> Self {
        Self {
            data: self.data.adjoint(),
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            data: &self.data * c,
        }
    }

    pub fn scale_real(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    /// Matrix-vector product.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let k = self.dim();
        let mut out = vec![C64::new(0.0, 0.0); k];
        apply_into(&self.data, x, &mut out);
        out
    }

    /// `<x, A x>` with the inner product conjugate-linear in the first slot.
    pub fn quadratic_form(&self, x: &[C64]) -> C64 {
        let ax = self.apply(x);
        inner(x, &ax)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let k = self.dim();
        (0..k).all(|i| (0..k).all(|j| (self.data[(i, j)] - self.data[(j, i)].conj()).norm() <= tol))
    }

    /// Hermitian part `(A + A*)/2`.
    pub fn hermitian_part(&self) -> Self {
        Self {
            data: (&self.data + self.data.adjoint()) * C64::new(0.5, 0.0),
        }
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn kronecker(&self, other: &Self) -> DMatrix<C64> {
        self.data.kronecker(&other.data)
    }

    pub fn conjugate(&self) -> Self {
        Self {
            data: self.data.conjugate(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            data: self.data.transpose(),
        }
    }

    pub fn rows(&self) -> Vec<Vec<C64>> {
        let k = self.dim();
        (0..k)
            .map(|i| (0..k).map(|j| self.data[(i, j)]).collect())
            .collect()
    }
}

#[inline]
pub(crate) fn apply_into(a: &DMatrix<C64>, x: &[C64], out: &mut [C64]) {
    let k = a.nrows();
    for (i, o) in out.iter_mut().enumerate().take(k) {
        let mut acc = C64::new(0.0, 0.0);
        for (j, xj) in x.iter().enumerate() {
            acc += a[(i, j)] * xj;
        }
        *o = acc;
    }
}

impl<'a> Mul<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix {
            data: &self.data * &rhs.data,
        }
    }
}

impl<'a> Add<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix {
            data: &self.data + &rhs.data,
        }
    }
}

impl<'a> Sub<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix {
            data: &self.data - &rhs.data,
        }
    }
}

// JSON form: row-major nested arrays of [re, im] pairs.
impl Serialize for ComplexMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = self
            .rows()
            .into_iter()
            .map(|r| r.into_iter().map(|z| [z.re, z.im]).collect())
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(deserializer)?;
        let rows: Vec<Vec<C64>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(|[re, im]| C64::new(re, im)).collect())
            .collect();
        ComplexMatrix::from_rows(&rows).map_err(D::Error::custom)
    }
}

/// `<x, y> = sum conj(x_i) y_i`.
#[inline]
pub fn inner(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

#[inline]
pub fn norm(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// A point of `P(C^k)` stored as a unit representative whose first
/// coordinate of modulus above `1e-12` is real and positive.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectivePoint {
    coords: Vec<C64>,
}

impl ProjectivePoint {
    /// The class of a nonzero vector.
    pub fn new(v: Vec<C64>) -> Result<Self> {
        if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("vector"));
        }
        let n = norm(&v);
        if n <= NULL_IMAGE_THRESHOLD {
            return Err(Error::NullImage { norm: n });
        }
        let mut coords = v;
        normalize_in_place(&mut coords, n);
        Ok(Self { coords })
    }

    /// Assumes `coords` is already unit-norm; only fixes the phase.
    pub(crate) fn from_unit_unchecked(mut coords: Vec<C64>) -> Self {
        canonicalize_phase(&mut coords);
        Self { coords }
    }

    pub fn from_real(v: &[f64]) -> Result<Self> {
        Self::new(v.iter().map(|&r| C64::new(r, 0.0)).collect())
    }

    /// The class of the `j`-th canonical basis vector.
    pub fn basis(k: usize, j: usize) -> Self {
        let mut coords = vec![C64::new(0.0, 0.0); k];
        coords[j] = C64::new(1.0, 0.0);
        Self { coords }
    }

    /// A unitarily invariant random point: independent complex normal
    /// coordinates, normalized.
    pub fn haar<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        loop {
            let v: Vec<C64> = (0..k)
                .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            if let Ok(p) = Self::new(v) {
                return p;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[C64] {
        &self.coords
    }

    /// Bloch vector of a point of `P(C^2)`.
    pub fn bloch(&self) -> [f64; 3] {
        let (a, b) = (self.coords[0], self.coords[1]);
        let c = a.conj() * b;
        [2.0 * c.re, 2.0 * c.im, a.norm_sqr() - b.norm_sqr()]
    }
}

#[inline]
pub(crate) fn normalize_in_place(v: &mut [C64], n: f64) {
    let inv = 1.0 / n;
    for z in v.iter_mut() {
        *z *= inv;
    }
    canonicalize_phase(v);
}

#[inline]
fn canonicalize_phase(v: &mut [C64]) {
    if let Some(j) = v.iter().position(|z| z.norm() > PHASE_CUTOFF) {
        let z = v[j];
        let phase = z.conj() / z.norm();
        for w in v.iter_mut() {
            *w *= phase;
        }
        v[j] = C64::new(v[j].re, 0.0);
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// `d(x̂, ŷ)`, evaluated as `||x ∧ y||` for accuracy at small distances.
pub fn metric_d(a: &ProjectivePoint, b: &ProjectivePoint) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(metric_unchecked(a.coords(), b.coords()))
}

#[inline]
pub(crate) fn metric_unchecked(x: &[C64], y: &[C64]) -> f64 {
    let k = x.len();
    let mut s = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            s += (x[i] * y[j] - x[j] * y[i]).norm_sqr();
        }
    }
    s.sqrt().min(1.0)
}

/// The class of `A x` together with `||A x||`.
pub fn act(a: &ComplexMatrix, x: &ProjectivePoint) -> Result<(ProjectivePoint, f64)> {
    check_dims(a.dim(), x.dim())?;
    let mut y = a.apply(x.coords());
    let n = norm(&y);
    if n <= NULL_IMAGE_THRESHOLD {
        return Err(Error::NullImage { norm: n });
    }
    normalize_in_place(&mut y, n);
    Ok((ProjectivePoint { coords: y }, n))
}

/// Coordinates of `x ∧ y` in the basis `e_i ∧ e_j`, `i < j`, ordered
/// lexicographically.
pub fn wedge_vectors(x: &[C64], y: &[C64]) -> Vec<C64> {
    let k = x.len();
    let mut out = Vec::with_capacity(k * (k.saturating_sub(1)) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            out.push(x[i] * y[j] - x[j] * y[i]);
        }
    }
    out
}

/// `∧²A` in the lexicographic basis `e_i ∧ e_j`, `i < j`.
#[derive(Clone, Debug, PartialEq)]
pub struct WedgeMatrix {
    pub base_dim: usize,
    pub matrix: DMatrix<C64>,
}

impl WedgeMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, w: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        apply_into(&self.matrix, w, &mut out);
        out
    }

    pub fn op_norm(&self) -> f64 {
        largest_singular_value(&self.matrix)
    }
}

pub fn wedge2(a: &ComplexMatrix) -> Result<WedgeMatrix> {
    let k = a.dim();
    if k < 2 {
        return Err(Error::WedgeDimension(k));
    }
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
        .collect();
    let m = a.matrix();
    let matrix = DMatrix::from_fn(pairs.len(), pairs.len(), |r, c| {
        let (i, j) = pairs[r];
        let (p, q) = pairs[c];
        m[(i, p)] * m[(j, q)] - m[(j, p)] * m[(i, q)]
    });
    Ok(WedgeMatrix {
        base_dim: k,
        matrix,
    })
}

/// `π_x̂ = x x*`.
pub fn projector(x: &ProjectivePoint) -> ComplexMatrix {
    let c = x.coords();
    let k = c.len();
    ComplexMatrix {
        data: DMatrix::from_fn(k, k, |i, j| c[i] * c[j].conj()),
    }
}

/// Operator norm (largest singular value).
pub fn op_norm(a: &ComplexMatrix) -> f64 {
    largest_singular_value(a.matrix())
}

fn largest_singular_value(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

/// `||∧²A|| = σ₁σ₂`; zero for `k = 1`.
pub fn wedge_norm(a: &DMatrix<C64>) -> f64 {
    match a.nrows() {
        0 | 1 => 0.0,
        2 => (a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)]).norm(),
        _ => {
            let mut sv: Vec<f64> = a.clone().singular_values().iter().cloned().collect();
            sv.sort_by(|x, y| y.total_cmp(x));
            sv[0] * sv[1]
        }
    }
}

/// Trace norm (sum of singular values).
pub fn trace_norm(a: &ComplexMatrix) -> f64 {
    a.matrix().clone().singular_values().iter().sum()
}
