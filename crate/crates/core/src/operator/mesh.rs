//! Point meshes on `P(C^k)` with nearest-node lookup.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::projective::{ProjectivePoint, C64};

pub const MIN_MESH_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshKind {
    FibonacciSphere,
    HaarSample,
}

impl std::str::FromStr for MeshKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fibonacci" | "fibonacci-sphere" => Ok(MeshKind::FibonacciSphere),
            "haar" | "haar-sample" => Ok(MeshKind::HaarSample),
            _ => Err(Error::Mesh(format!("unknown mesh kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    k: usize,
    kind: MeshKind,
    seed: u64,
    points: Vec<ProjectivePoint>,
    index: NearestIndex,
}

#[derive(Clone, Debug)]
enum NearestIndex {
    /// Uniform grid over the Bloch ball in compressed-row layout.
    Bloch {
        bloch: Vec<[f64; 3]>,
        cells: usize,
        cell: f64,
        start: Vec<u32>,
        members: Vec<u32>,
    },
    Brute,
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k
            && self.kind == other.kind
            && self.seed == other.seed
            && self.points == other.points
    }
}

/// Spherical Fibonacci lattice with poles at both ends, mapped to `P(C²)`
/// through `x = (cos(ϑ/2), e^{iφ} sin(ϑ/2))`.
fn fibonacci_points(n: usize) -> Vec<ProjectivePoint> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * i as f64 / (n - 1) as f64;
            let theta = z.clamp(-1.0, 1.0).acos();
            let phi = golden * i as f64;
            let (s, c) = (theta / 2.0).sin_cos();
            let coords = vec![C64::new(c, 0.0), C64::from_polar(s, phi)];
            ProjectivePoint::new(coords).expect("unit vector")
        })
        .collect()
}

pub fn build_mesh(k: usize, n: usize, kind: MeshKind, seed: u64) -> Result<Mesh> {
    if n < MIN_MESH_SIZE {
        return Err(Error::Mesh(format!(
            "mesh needs at least {MIN_MESH_SIZE} points, got {n}"
        )));
    }
    if k < 2 {
        return Err(Error::Mesh(format!("P(C^{k}) is a single point")));
    }
    let points = match kind {
        MeshKind::FibonacciSphere => {
            if k != 2 {
                return Err(Error::Mesh(format!(
                    "fibonacci-sphere meshes exist only for k = 2, got k = {k}"
                )));
            }
            fibonacci_points(n)
        }
        MeshKind::HaarSample => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| ProjectivePoint::haar(k, &mut rng)).collect()
        }
    };
    Ok(Mesh::from_points(k, kind, seed, points))
}

impl Mesh {
    fn from_points(k: usize, kind: MeshKind, seed: u64, points: Vec<ProjectivePoint>) -> Self {
        let index = if k == 2 {
            build_bloch_index(&points)
        } else {
            NearestIndex::Brute
        };
        Self {
            k,
            kind,
            seed,
            points,
            index,
        }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn kind(&self) -> MeshKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[ProjectivePoint] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &ProjectivePoint {
        &self.points[i]
    }

    pub fn nearest(&self, x: &ProjectivePoint) -> usize {
        self.nearest_coords(x.coords())
    }

    /// Index of the node closest in `d` to the class of the unit vector `x`.
    pub fn nearest_coords(&self, x: &[C64]) -> usize {
        match &self.index {
            NearestIndex::Bloch {
                bloch,
                cells,
                cell,
                start,
                members,
            } => {
                let q = bloch_of(x);
                nearest_bloch(&q, bloch, *cells, *cell, start, members)
            }
            NearestIndex::Brute => {
                let mut best = 0;
                let mut best_ov = -1.0;
                for (i, p) in self.points.iter().enumerate() {
                    let ov = crate::projective::inner(p.coords(), x).norm_sqr();
                    if ov > best_ov {
                        best_ov = ov;
                        best = i;
                    }
                }
                best
            }
        }
    }

    /// Minimal pairwise distance from each node to its nearest other node.
    pub fn nearest_neighbor_distances(&self) -> Vec<f64> {
        use rayon::prelude::*;
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let xi = self.points[i].coords();
                self.points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, p)| crate::projective::metric_unchecked(xi, p.coords()))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }
}

#[inline]
fn bloch_of(x: &[C64]) -> [f64; 3] {
    let c = x[0].conj() * x[1];
    [2.0 * c.re, 2.0 * c.im, x[0].norm_sqr() - x[1].norm_sqr()]
}

#[inline]
fn cell_coord(v: f64, cells: usize, cell: f64) -> usize {
    (((v + 1.0) / cell).floor().max(0.0) as usize).min(cells - 1)
}

fn build_bloch_index(points: &[ProjectivePoint]) -> NearestIndex {
    let n = points.len();
    let bloch: Vec<[f64; 3]> = points.iter().map(|p| bloch_of(p.coords())).collect();
    let spacing = (4.0 / n as f64).sqrt();
    let cells = ((2.0 / (2.0 * spacing)).ceil() as usize).clamp(1, 200);
    let cell = 2.0 / cells as f64;
    let flat = |b: &[f64; 3]| {
        let (i, j, l) = (
            cell_coord(b[0], cells, cell),
            cell_coord(b[1], cells, cell),
            cell_coord(b[2], cells, cell),
        );
        (i * cells + j) * cells + l
    };
    let mut count = vec![0u32; cells * cells * cells + 1];
    for b in &bloch {
        count[flat(b) + 1] += 1;
    }
    for c in 1..count.len() {
        count[c] += count[c - 1];
    }
    let start = count.clone();
    let mut fill = count;
    let mut members = vec![0u32; n];
    for (i, b) in bloch.iter().enumerate() {
        let f = flat(b);
        members[fill[f] as usize] = i as u32;
        fill[f] += 1;
    }
    NearestIndex::Bloch {
        bloch,
        cells,
        cell,
        start,
        members,
    }
}

fn nearest_bloch(
    q: &[f64; 3],
    bloch: &[[f64; 3]],
    cells: usize,
    cell: f64,
    start: &[u32],
    members: &[u32],
) -> usize {
    let c = [
        cell_coord(q[0], cells, cell) as i64,
        cell_coord(q[1], cells, cell) as i64,
        cell_coord(q[2], cells, cell) as i64,
    ];
    let mut best = usize::MAX;
    let mut best_d2 = f64::INFINITY;
    let mut r: i64 = 0;
    loop {
        for i in (c[0] - r).max(0)..=(c[0] + r).min(cells as i64 - 1) {
            for j in (c[1] - r).max(0)..=(c[1] + r).min(cells as i64 - 1) {
                for l in (c[2] - r).max(0)..=(c[2] + r).min(cells as i64 - 1) {
                    let shell = (i - c[0]).abs().max((j - c[1]).abs()).max((l - c[2]).abs());
                    if shell != r {
                        continue;
                    }
                    let f = ((i as usize * cells) + j as usize) * cells + l as usize;
                    for &m in &members[start[f] as usize..start[f + 1] as usize] {
                        let b = &bloch[m as usize];
                        let d2 = (b[0] - q[0]).powi(2) + (b[1] - q[1]).powi(2) + (b[2] - q[2]).powi(2);
                        if d2 < best_d2 || (d2 == best_d2 && (m as usize) < best) {
                            best_d2 = d2;
                            best = m as usize;
                        }
                    }
                }
            }
        }
        // Every node within distance r·cell of q lies in a cell of shell <= r.
        if best != usize::MAX && best_d2.sqrt() <= r as f64 * cell {
            return best;
        }
        if r as usize > cells {
            return best;
        }
        r += 1;
    }
}
