//! The channel `Φ(X) = Σ w v* X v`, its adjoint `Φ*(X) = Σ w v X v*`,
//! the ergodicity test, period and cycle decomposition, and the exact
//! peripheral eigenfunctions of the trajectory kernel.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instrument::Instrument;
use crate::linalg::{eigen_complex, hermitian_eigen, null_space};
use crate::projective::{inner, ComplexMatrix, ProjectivePoint, C64};

/// Largest `k` for which dense superoperators are formed (`k² ≤ 256`).
pub const MAX_SUPEROPERATOR_DIM: usize = 16;

/// `Φ` or `Φ*` acting on column-major `vec(X)`.
#[derive(Clone, Debug)]
pub struct Superoperator {
    k: usize,
    matrix: DMatrix<C64>,
    adjoint: bool,
}

impl Superoperator {
    pub fn dim(&self) -> usize {
        self.k * self.k
    }

    pub fn base_dim(&self) -> usize {
        self.k
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn is_adjoint(&self) -> bool {
        self.adjoint
    }

    pub fn apply(&self, x: &ComplexMatrix) -> Result<ComplexMatrix> {
        check_dim(self.k, x.dim())?;
        let v = &self.matrix * vec_of(x.matrix());
        ComplexMatrix::new(unvec(self.k, &v))
    }

    pub fn eigenvalues(&self) -> Result<Vec<C64>> {
        Ok(eigen_complex(&self.matrix)?.0)
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        Ok(self
            .eigenvalues()?
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max))
    }
}

pub(crate) fn vec_of(x: &DMatrix<C64>) -> DVector<C64> {
    DVector::from_column_slice(x.as_slice())
}

pub(crate) fn unvec(k: usize, v: &DVector<C64>) -> DMatrix<C64> {
    DMatrix::from_column_slice(k, k, v.as_slice())
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `Φ(X)` (`adjoint = false`) or `Φ*(X)` (`adjoint = true`).
pub fn phi_apply(ins: &Instrument, x: &ComplexMatrix, adjoint: bool) -> Result<ComplexMatrix> {
    check_dim(ins.dim(), x.dim())?;
    let k = ins.dim();
    let mut acc = DMatrix::<C64>::zeros(k, k);
    let xm = x.matrix();
    for a in ins.atoms() {
        let v = a.matrix.matrix();
        let w = C64::new(a.weight, 0.0);
        if adjoint {
            acc += v * xm * v.adjoint() * w;
        } else {
            acc += v.adjoint() * xm * v * w;
        }
    }
    ComplexMatrix::new(acc)
}

/// Dense matrix of `Φ` or `Φ*` on `vec(X)`, using `vec(AXB) = (Bᵀ ⊗ A) vec(X)`.
pub fn superoperator_matrix(ins: &Instrument, adjoint: bool) -> Result<Superoperator> {
    let k = ins.dim();
    if k > MAX_SUPEROPERATOR_DIM {
        return Err(Error::SizeLimit {
            what: "superoperator dimension k",
            requested: k,
            limit: MAX_SUPEROPERATOR_DIM,
        });
    }
    let mut acc = DMatrix::<C64>::zeros(k * k, k * k);
    for a in ins.atoms() {
        let v = a.matrix.matrix();
        let w = C64::new(a.weight, 0.0);
        let term = if adjoint {
            v.conjugate().kronecker(v)
        } else {
            v.transpose().kronecker(&v.adjoint())
        };
        acc += term * w;
    }
    Ok(Superoperator {
        k,
        matrix: acc,
        adjoint,
    })
}

/// `Φ(A)`: the matrix of `Π f_A`, since `(Π f_A)(x̂) = ⟨x, Φ(A) x⟩`.
pub fn pi_on_quadratic(ins: &Instrument, a: &ComplexMatrix) -> Result<ComplexMatrix> {
    phi_apply(ins, a, false)
}

#[derive(Clone, Debug, Serialize)]
pub struct ErgReport {
    pub holds: bool,
    pub fixed_space_dim: usize,
    /// Orthonormal basis vectors of `E`.
    pub e_basis: Option<Vec<Vec<C64>>>,
    pub invariant_state: Option<ComplexMatrix>,
}

fn columns(m: &DMatrix<C64>) -> Vec<Vec<C64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

/// Normalizes a fixed vector of `Φ*` into a density matrix.
fn to_state(x: DMatrix<C64>) -> DMatrix<C64> {
    let t = x.trace();
    let mut r = x / t;
    r = (&r + r.adjoint()) * C64::new(0.5, 0.0);
    r
}

/// Orthonormal basis of the range of a Hermitian PSD matrix at relative
/// cutoff `tol`, with the matching eigenvalues.
fn support(rho: &DMatrix<C64>, tol: f64) -> (Vec<f64>, DMatrix<C64>) {
    let (vals, vecs) = hermitian_eigen(rho);
    let top = vals.first().copied().unwrap_or(0.0).max(0.0);
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > tol * top).collect();
    let basis = DMatrix::from_fn(rho.nrows(), keep.len(), |i, j| vecs[(i, keep[j])]);
    (keep.iter().map(|&i| vals[i]).collect(), basis)
}

pub fn erg_check(ins: &Instrument, tol: f64) -> Result<ErgReport> {
    let s = superoperator_matrix(ins, true)?;
    let n = s.dim();
    let shifted = s.matrix() - DMatrix::<C64>::identity(n, n);
    let ns = null_space(&shifted, tol);
    let dim = ns.ncols();
    if dim != 1 {
        return Ok(ErgReport {
            holds: false,
            fixed_space_dim: dim,
            e_basis: None,
            invariant_state: None,
        });
    }
    let rho = to_state(unvec(ins.dim(), &ns.column(0).into_owned()));
    let (_, basis) = support(&rho, tol);
    Ok(ErgReport {
        holds: true,
        fixed_space_dim: 1,
        e_basis: Some(columns(&basis)),
        invariant_state: Some(ComplexMatrix::new(rho)?),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CycleDecomposition {
    pub m: usize,
    pub e_bases: Vec<Vec<Vec<C64>>>,
    #[serde(rename = "M")]
    pub m_r: Vec<ComplexMatrix>,
    pub rho: Vec<ComplexMatrix>,
    pub peripheral: Vec<C64>,
}

impl CycleDecomposition {
    pub fn period(&self) -> usize {
        self.m
    }

    /// Orthogonal projector onto `E_r`, `r` counted from 0.
    pub fn projector(&self, r: usize) -> ComplexMatrix {
        let b = &self.e_bases[r];
        let k = self.m_r[0].dim();
        let mut p = DMatrix::<C64>::zeros(k, k);
        for v in b {
            let col = DVector::from_column_slice(v);
            p += &col * col.adjoint();
        }
        ComplexMatrix::new(p).expect("finite")
    }
}

fn root_of_unity(l: usize, m: usize) -> C64 {
    C64::from_polar(1.0, 2.0 * PI * l as f64 / m as f64)
}

/// Peripheral eigenvalues of `Φ*`, matched to the `m`-th roots of unity;
/// returns `m` and, for each `l`, the index of the eigenvalue near `e^{2πil/m}`.
fn peripheral_roots(vals: &[C64], tol: f64) -> Result<(usize, Vec<usize>)> {
    let per: Vec<usize> = (0..vals.len())
        .filter(|&i| vals[i].norm() > 1.0 - 10.0 * tol)
        .collect();
    let m = per.len();
    if m == 0 {
        return Err(Error::PeripheralNotRoots("no eigenvalue on the unit circle".into()));
    }
    let mut slot: Vec<Option<usize>> = vec![None; m];
    for &i in &per {
        let z = vals[i];
        let l = ((z.arg() * m as f64 / (2.0 * PI)).round() as i64).rem_euclid(m as i64) as usize;
        if (z - root_of_unity(l, m)).norm() > 10.0 * tol {
            return Err(Error::PeripheralNotRoots(format!(
                "eigenvalue {z} is not within {:e} of a {m}-th root of unity",
                10.0 * tol
            )));
        }
        if slot[l].is_some() {
            return Err(Error::NonSimplePeripheral(format!(
                "root e^(2πi·{l}/{m}) appears more than once"
            )));
        }
        slot[l] = Some(i);
    }
    Ok((m, slot.into_iter().map(|s| s.expect("all slots filled")).collect()))
}

/// Chooses the cycle class labelled `r = 1`: the one carrying the most weight
/// on `e_0`, ties broken by the next basis vectors.
fn first_class(classes: &[DMatrix<C64>]) -> usize {
    let k = classes[0].nrows();
    for j in 0..k {
        let w: Vec<f64> = classes.iter().map(|p| p[(j, j)].re).collect();
        let best = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
        if w.iter().enumerate().all(|(i, &x)| i == best || x < w[best] - 1e-8) {
            return best;
        }
    }
    0
}

pub fn period_and_cycles(ins: &Instrument, tol: f64) -> Result<CycleDecomposition> {
    let erg = erg_check(ins, tol)?;
    if !erg.holds {
        return Err(Error::ErgFails(erg.fixed_space_dim));
    }
    let k = ins.dim();
    let star = superoperator_matrix(ins, true)?;
    let (vals, vecs) = eigen_complex(star.matrix())?;
    let (m, slots) = peripheral_roots(&vals, tol)?;
    let peripheral: Vec<C64> = slots.iter().map(|&i| vals[i]).collect();

    let rho_inf = erg.invariant_state.expect("erg holds").into_inner();
    let (svals, sbasis) = support(&rho_inf, tol);
    let p_e = &sbasis * sbasis.adjoint();

    let rho_1 = if m == 1 {
        rho_inf.clone()
    } else {
        // X_1 ∝ Σ_r ω^{-r} ρ_r, so ρ∞⁺ X_1 = c m Σ_r ω^{-r} P_r on E.
        let mut pinv = DMatrix::<C64>::zeros(k, k);
        for (j, &lam) in svals.iter().enumerate() {
            let u = sbasis.column(j);
            pinv += u * u.adjoint() * C64::new(1.0 / lam, 0.0);
        }
        let x1 = unvec(k, &vecs.column(slots[1]).into_owned());
        let d = &pinv * x1;
        let mut dm = p_e.clone();
        for _ in 0..m {
            dm = &dm * &d;
        }
        let scale = (dm.trace() / C64::new(svals.len() as f64, 0.0)).powf(1.0 / m as f64);
        let z = d / scale;
        let omega = root_of_unity(1, m);
        let classes: Vec<DMatrix<C64>> = (0..m)
            .map(|r| {
                let zr = &z * omega.powu(r as u32);
                let mut term = p_e.clone();
                let mut acc = p_e.clone();
                for _ in 1..m {
                    term = &term * &zr;
                    acc += &term;
                }
                let p = acc / C64::new(m as f64, 0.0);
                let (pv, pb) = hermitian_eigen(&p);
                let keep: Vec<usize> = (0..k).filter(|&i| pv[i] > 0.5).collect();
                let b = DMatrix::from_fn(k, keep.len(), |i, j| pb[(i, keep[j])]);
                &b * b.adjoint()
            })
            .collect();
        if classes.iter().any(|p| p.trace().re < 0.5) {
            return Err(Error::Degenerate(
                "cycle projectors could not be separated".into(),
            ));
        }
        let p1 = &classes[first_class(&classes)];
        to_state(p1 * &rho_inf * p1)
    };

    let mut rho = Vec::with_capacity(m);
    let mut cur = ComplexMatrix::new(rho_1)?;
    for _ in 0..m {
        let next = star.apply(&cur)?;
        rho.push(cur);
        cur = next;
    }
    let mut e_bases = Vec::with_capacity(m);
    let mut projs = Vec::with_capacity(m);
    for r in &rho {
        let (_, b) = support(r.matrix(), tol);
        projs.push(&b * b.adjoint());
        e_bases.push(columns(&b));
    }

    // M_r = lim_n Φ^{mn}(P_{E_r}) by repeated squaring of Φ^m.
    let phi = superoperator_matrix(ins, false)?;
    let mut t = DMatrix::<C64>::identity(k * k, k * k);
    for _ in 0..m {
        t = phi.matrix() * t;
    }
    let mut cur: Vec<DVector<C64>> = projs.iter().map(|p| &t * vec_of(p)).collect();
    let mut converged = false;
    let mut last_change = f64::INFINITY;
    for _ in 0..64 {
        t = &t * &t;
        let next: Vec<DVector<C64>> = projs.iter().map(|p| &t * vec_of(p)).collect();
        last_change = next
            .iter()
            .zip(&cur)
            .map(|(a, b)| (a - b).camax())
            .fold(0.0, f64::max);
        cur = next;
        if last_change < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged {
            iterations: 64,
            last_change,
        });
    }
    let m_r = cur
        .iter()
        .map(|v| {
            let x = unvec(k, v);
            ComplexMatrix::new((&x + x.adjoint()) * C64::new(0.5, 0.0))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CycleDecomposition {
        m,
        e_bases,
        m_r,
        rho,
        peripheral,
    })
}

/// `f_A(x̂) = ⟨x, A x⟩`; `A` may be any complex matrix (complex
/// combinations of the `M_r` are not Hermitian).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadraticObservable {
    matrix: ComplexMatrix,
}

impl QuadraticObservable {
    pub fn new(matrix: ComplexMatrix) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn eval_coords(&self, x: &[C64]) -> C64 {
        inner(x, &self.matrix.apply(x))
    }

    pub fn eval(&self, x: &ProjectivePoint) -> C64 {
        self.eval_coords(x.coords())
    }

    /// Real part of `f_A`; the full value when `A` is Hermitian.
    pub fn eval_real(&self, x: &ProjectivePoint) -> f64 {
        self.eval(x).re
    }
}

/// `f_l = Σ_r e^{i2πrl/m} ⟨x, M_r x⟩`, so that `Π f_l = e^{i2πl/m} f_l`.
pub fn peripheral_eigenfunction(cd: &CycleDecomposition, l: usize) -> Result<QuadraticObservable> {
    if l >= cd.m {
        return Err(Error::IndexOutOfRange { index: l, len: cd.m });
    }
    let k = cd.m_r[0].dim();
    let mut a = DMatrix::<C64>::zeros(k, k);
    for (idx, mr) in cd.m_r.iter().enumerate() {
        let r = idx + 1;
        a += mr.matrix() * root_of_unity((r * l) % cd.m, cd.m);
    }
    Ok(QuadraticObservable::new(ComplexMatrix::new(a)?))
}
