//! Discretized transition operators on meshes of `P(C^k)`, their tiltings,
//! leading spectra and cumulant curves.

pub mod kernel;
pub mod mesh;
pub mod spectrum;

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

pub use kernel::{
    discretize, discretize_in, mesh_values, node_values, DiscretizedKernel, KernelSkeleton, Tilt,
    TiltDomain,
};
pub use mesh::{build_mesh, Mesh, MeshKind};
pub use spectrum::{leading_spectrum, perron_root, IterationOptions, SpectrumReport};

use crate::error::{Error, Result};
use crate::instrument::Instrument;
use crate::projective::{metric_unchecked, C64};
use crate::sampler::Observable;

#[derive(Clone, Debug)]
pub enum TiltFamily {
    Observable(Observable),
    Lyapunov,
}

/// `(parameter, log ρ(K_parameter))` along `grid`.
pub fn scgf_curve(
    ins: &Instrument,
    mesh: Arc<Mesh>,
    family: &TiltFamily,
    grid: &[f64],
    domain: &TiltDomain,
) -> Result<Vec<(f64, f64)>> {
    let skel = KernelSkeleton::new(ins, mesh)?;
    scgf_curve_on(&skel, family, grid, domain)
}

/// As [`scgf_curve`] on a prebuilt skeleton; Perron vectors warm-start
/// neighbouring grid points.
pub fn scgf_curve_on(
    skel: &KernelSkeleton,
    family: &TiltFamily,
    grid: &[f64],
    domain: &TiltDomain,
) -> Result<Vec<(f64, f64)>> {
    if let TiltFamily::Lyapunov = family {
        for &s in grid {
            domain.check(s)?;
        }
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut warm: Option<Vec<f64>> = None;
    for &p in grid {
        let tilt = match family {
            TiltFamily::Observable(h) => Tilt::Observable {
                theta: p,
                h: h.clone(),
            },
            TiltFamily::Lyapunov => Tilt::Lyapunov { s: p },
        };
        let k = skel.tilted(tilt, domain)?;
        let (rho, v) = perron_root(&k, warm.as_deref(), IterationOptions::default())?;
        out.push((p, rho.ln()));
        warm = Some(v);
    }
    Ok(out)
}

/// `log ρ` of a single tilt.
pub fn scgf_at(skel: &KernelSkeleton, family: &TiltFamily, p: f64, domain: &TiltDomain) -> Result<f64> {
    Ok(scgf_curve_on(skel, family, &[p], domain)?[0].1)
}

/// Repeated single-tilt evaluations that warm-start from the previous
/// Perron vector.
pub struct ScgfEvaluator<'a> {
    skel: &'a KernelSkeleton,
    family: TiltFamily,
    domain: TiltDomain,
    warm: Option<Vec<f64>>,
}

impl<'a> ScgfEvaluator<'a> {
    pub fn new(skel: &'a KernelSkeleton, family: TiltFamily, domain: TiltDomain) -> Self {
        Self {
            skel,
            family,
            domain,
            warm: None,
        }
    }

    pub fn eval(&mut self, p: f64) -> Result<f64> {
        let tilt = match &self.family {
            TiltFamily::Observable(h) => Tilt::Observable {
                theta: p,
                h: h.clone(),
            },
            TiltFamily::Lyapunov => Tilt::Lyapunov { s: p },
        };
        let k = self.skel.tilted(tilt, &self.domain)?;
        let (rho, v) = perron_root(&k, self.warm.as_deref(), IterationOptions::default())?;
        self.warm = Some(v);
        Ok(rho.ln())
    }
}

/// `max |f(a) - f(b)| / d(a,b)^α` over distinct node pairs.
pub fn holder_seminorm(mesh: &Mesh, values: &[f64], alpha: f64) -> Result<f64> {
    if values.len() != mesh.len() {
        return Err(Error::DimensionMismatch {
            expected: mesh.len(),
            found: values.len(),
        });
    }
    let pts = mesh.points();
    Ok((0..pts.len())
        .into_par_iter()
        .map(|a| {
            let xa = pts[a].coords();
            let mut m = 0.0f64;
            for b in (a + 1)..pts.len() {
                let d = metric_unchecked(xa, pts[b].coords());
                if d > 0.0 {
                    m = m.max((values[a] - values[b]).abs() / d.powf(alpha));
                }
            }
            m
        })
        .reduce(|| 0.0, f64::max))
}

#[derive(Clone, Debug, Serialize)]
pub struct GammaSeriesReport {
    /// `Γ_{z+w} f` at the nodes.
    pub direct: Vec<C64>,
    /// `Σ_{n ≤ N} (w^n / n!) Γ_n^z f` for the largest `N`.
    pub truncated: Vec<C64>,
    /// Sup error of the partial sums, indexed by `N = 0, 1, …`.
    pub errors: Vec<f64>,
}

/// Compares `Γ_{z+w} f` with the truncated series in `w` around `z`.
pub fn gamma_series_check(
    ins: &Instrument,
    mesh: Arc<Mesh>,
    z: C64,
    w: C64,
    n_terms: usize,
    f: &[f64],
    domain: &TiltDomain,
) -> Result<GammaSeriesReport> {
    domain.check(z.re)?;
    domain.check((z + w).re)?;
    if f.len() != mesh.len() {
        return Err(Error::DimensionMismatch {
            expected: mesh.len(),
            found: f.len(),
        });
    }
    let skel = KernelSkeleton::new(ins, mesh)?;
    let fc: Vec<C64> = f.iter().map(|&v| C64::new(v, 0.0)).collect();
    let direct = skel.series_term(0, z + w).apply(&fc);
    let mut partial = vec![C64::new(0.0, 0.0); f.len()];
    let mut errors = Vec::with_capacity(n_terms + 1);
    let mut coef = C64::new(1.0, 0.0);
    for n in 0..=n_terms {
        if n > 0 {
            coef *= w / n as f64;
        }
        let term = skel.series_term(n as u32, z).apply(&fc);
        for (p, t) in partial.iter_mut().zip(&term) {
            *p += coef * t;
        }
        errors.push(
            partial
                .iter()
                .zip(&direct)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max),
        );
    }
    Ok(GammaSeriesReport {
        direct,
        truncated: partial,
        errors,
    })
}
