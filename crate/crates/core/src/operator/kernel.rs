//! Nearest-node discretizations of the trajectory kernel and its tiltings.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::mesh::Mesh;
use crate::error::{Error, Result};
use crate::instrument::Instrument;
use crate::projective::{ProjectivePoint, C64, NULL_IMAGE_THRESHOLD};
use crate::sampler::{Observable, Stepper};

/// Default admissible window for the norm tilt parameter.
pub const DEFAULT_LYAPUNOV_LOWER: f64 = -1.5;
pub const DEFAULT_LYAPUNOV_UPPER: f64 = 8.0;

#[derive(Clone, Debug)]
pub enum Tilt {
    None,
    /// Factor `e^{θ h(v·x̂)}`.
    Observable { theta: f64, h: Observable },
    /// Factor `||v x||^s`.
    Lyapunov { s: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TiltDomain {
    pub lower: f64,
    pub upper: f64,
}

impl Default for TiltDomain {
    fn default() -> Self {
        Self {
            lower: DEFAULT_LYAPUNOV_LOWER,
            upper: DEFAULT_LYAPUNOV_UPPER,
        }
    }
}

impl TiltDomain {
    pub fn check(&self, s: f64) -> Result<()> {
        if s > self.lower && s < self.upper {
            Ok(())
        } else {
            Err(Error::TiltOutOfRange {
                value: s,
                lower: self.lower,
                upper: self.upper,
            })
        }
    }
}

/// Per-row branch data shared by every tilt: target node, `w ||v x||²`,
/// `log ||v x||` and the unit image `v·x̂`.
#[derive(Clone, Debug)]
pub struct KernelSkeleton {
    mesh: Arc<Mesh>,
    row_ptr: Vec<usize>,
    target: Vec<u32>,
    prob: Vec<f64>,
    log_norm: Vec<f64>,
    images: Vec<C64>,
}

impl KernelSkeleton {
    pub fn new(ins: &Instrument, mesh: Arc<Mesh>) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::Empty("mesh"));
        }
        if mesh.dim() != ins.dim() {
            return Err(Error::DimensionMismatch {
                expected: ins.dim(),
                found: mesh.dim(),
            });
        }
        let k = ins.dim();
        let rows: Vec<Vec<(u32, f64, f64, Vec<C64>)>> = mesh
            .points()
            .par_iter()
            .map_init(
                || Stepper::new(ins),
                |st, x| {
                    st.compute(x.coords());
                    let mut row = Vec::with_capacity(ins.len());
                    for i in 0..ins.len() {
                        let nv = st.norms[i];
                        if nv <= NULL_IMAGE_THRESHOLD || st.probs[i] == 0.0 {
                            continue;
                        }
                        let img: Vec<C64> = st.images[i].iter().map(|z| z / nv).collect();
                        let b = mesh.nearest_coords(&img) as u32;
                        row.push((b, st.probs[i], nv.ln(), img));
                    }
                    row
                },
            )
            .collect();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let nnz: usize = rows.iter().map(|r| r.len()).sum();
        let mut target = Vec::with_capacity(nnz);
        let mut prob = Vec::with_capacity(nnz);
        let mut log_norm = Vec::with_capacity(nnz);
        let mut images = Vec::with_capacity(nnz * k);
        for row in rows {
            for (b, p, l, img) in row {
                target.push(b);
                prob.push(p);
                log_norm.push(l);
                images.extend(img);
            }
            row_ptr.push(target.len());
        }
        Ok(Self {
            mesh,
            row_ptr,
            target,
            prob,
            log_norm,
            images,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn len(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn image(&self, e: usize) -> &[C64] {
        let k = self.mesh.dim();
        &self.images[e * k..(e + 1) * k]
    }

    /// Entry values under `tilt`.
    fn values(&self, tilt: &Tilt, domain: &TiltDomain) -> Result<Vec<f64>> {
        match tilt {
            Tilt::None => Ok(self.prob.clone()),
            Tilt::Observable { theta, h } => Ok((0..self.prob.len())
                .map(|e| self.prob[e] * (theta * h.eval_coords(self.image(e))).exp())
                .collect()),
            Tilt::Lyapunov { s } => {
                domain.check(*s)?;
                Ok(self
                    .prob
                    .iter()
                    .zip(&self.log_norm)
                    .map(|(p, l)| p * (s * l).exp())
                    .collect())
            }
        }
    }

    pub fn tilted(&self, tilt: Tilt, domain: &TiltDomain) -> Result<DiscretizedKernel> {
        let values = self.values(&tilt, domain)?;
        Ok(DiscretizedKernel {
            mesh: self.mesh.clone(),
            row_ptr: self.row_ptr.clone(),
            col: self.target.clone(),
            values,
            tilt,
            alpha: 1.0,
        })
    }

    /// Complex kernel with entries `w ||v x||² log^n ||v x|| ||v x||^z`.
    pub fn series_term(&self, n: u32, z: C64) -> ComplexKernel {
        let values = self
            .prob
            .iter()
            .zip(&self.log_norm)
            .map(|(p, l)| (z * *l).exp() * (*p * l.powi(n as i32)))
            .collect();
        ComplexKernel {
            row_ptr: self.row_ptr.clone(),
            col: self.target.clone(),
            values,
        }
    }
}

/// Sparse nonnegative `N × N` matrix on a mesh.
#[derive(Clone, Debug)]
pub struct DiscretizedKernel {
    mesh: Arc<Mesh>,
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    values: Vec<f64>,
    tilt: Tilt,
    /// Hölder exponent used when reporting seminorms alongside the kernel.
    pub alpha: f64,
}

pub fn discretize(ins: &Instrument, mesh: Arc<Mesh>, tilt: Tilt) -> Result<DiscretizedKernel> {
    discretize_in(ins, mesh, tilt, &TiltDomain::default())
}

pub fn discretize_in(
    ins: &Instrument,
    mesh: Arc<Mesh>,
    tilt: Tilt,
    domain: &TiltDomain,
) -> Result<DiscretizedKernel> {
    if let Tilt::Lyapunov { s } = tilt {
        domain.check(s)?;
    }
    KernelSkeleton::new(ins, mesh)?.tilted(tilt, domain)
}

impl DiscretizedKernel {
    /// Kernel from explicit rows of `(column, value)` pairs.
    pub fn from_rows(mesh: Arc<Mesh>, rows: &[Vec<(usize, f64)>], tilt: Tilt) -> Result<Self> {
        if rows.len() != mesh.len() {
            return Err(Error::DimensionMismatch {
                expected: mesh.len(),
                found: rows.len(),
            });
        }
        let mut row_ptr = vec![0];
        let mut col = Vec::new();
        let mut values = Vec::new();
        for r in rows {
            for &(c, v) in r {
                if c >= mesh.len() {
                    return Err(Error::IndexOutOfRange {
                        index: c,
                        len: mesh.len(),
                    });
                }
                if !(v >= 0.0) {
                    return Err(Error::Precondition("kernel entries must be nonnegative".into()));
                }
                col.push(c as u32);
                values.push(v);
            }
            row_ptr.push(col.len());
        }
        Ok(Self {
            mesh,
            row_ptr,
            col,
            values,
            tilt,
            alpha: 1.0,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn tilt(&self) -> &Tilt {
        &self.tilt
    }

    pub fn len(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.len())
            .map(|a| self.values[self.row_ptr[a]..self.row_ptr[a + 1]].iter().sum())
            .collect()
    }

    /// `(K f)(a) = Σ_b K[a][b] f(b)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.apply_into(f, &mut out);
        out
    }

    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(a, o)| {
            let mut s = 0.0;
            for e in self.row_ptr[a]..self.row_ptr[a + 1] {
                s += self.values[e] * f[self.col[e] as usize];
            }
            *o = s;
        });
    }

    pub fn apply_complex(&self, f: &[C64]) -> Vec<C64> {
        (0..self.len())
            .into_par_iter()
            .map(|a| {
                let mut s = C64::new(0.0, 0.0);
                for e in self.row_ptr[a]..self.row_ptr[a + 1] {
                    s += f[self.col[e] as usize] * self.values[e];
                }
                s
            })
            .collect()
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.len();
        let mut d = vec![0.0; n * n];
        for a in 0..n {
            for e in self.row_ptr[a]..self.row_ptr[a + 1] {
                d[a * n + self.col[e] as usize] += self.values[e];
            }
        }
        d
    }

    pub fn entry(&self, a: usize, b: usize) -> f64 {
        (self.row_ptr[a]..self.row_ptr[a + 1])
            .filter(|&e| self.col[e] as usize == b)
            .map(|e| self.values[e])
            .sum()
    }

    pub fn min_entry(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Sparse complex kernel used for the norm-tilt series.
#[derive(Clone, Debug)]
pub struct ComplexKernel {
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    values: Vec<C64>,
}

impl ComplexKernel {
    pub fn apply(&self, f: &[C64]) -> Vec<C64> {
        (0..self.row_ptr.len() - 1)
            .into_par_iter()
            .map(|a| {
                let mut s = C64::new(0.0, 0.0);
                for e in self.row_ptr[a]..self.row_ptr[a + 1] {
                    s += self.values[e] * f[self.col[e] as usize];
                }
                s
            })
            .collect()
    }
}

/// Values of an observable at the mesh nodes.
pub fn mesh_values(mesh: &Mesh, h: &Observable) -> Vec<f64> {
    mesh.points().iter().map(|p| h.eval(p)).collect()
}

/// Values of `f_A` (real part) at the mesh nodes.
pub fn node_values<F: Fn(&ProjectivePoint) -> f64 + Sync + Send>(mesh: &Mesh, f: F) -> Vec<f64> {
    mesh.points().par_iter().map(f).collect()
}
