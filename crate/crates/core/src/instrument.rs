//! Finite weighted Kraus families `μ = Σ w_i δ_{v_i}` with `Σ w_i v_i* v_i = Id`,
//! their transition law on `P(C^k)`, JSON file IO and a few canonical
//! examples.

use std::f64::consts::FRAC_1_SQRT_2;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projective::{self, norm, op_norm, ComplexMatrix, ProjectivePoint, C64};

/// One weighted Kraus atom `(w, v)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub weight: f64,
    pub matrix: ComplexMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Instrument {
    label: String,
    dim: usize,
    atoms: Vec<Atom>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub stochasticity_defect: f64,
    pub passed: bool,
    pub tolerance: f64,
}

#[derive(Clone, Debug)]
pub struct LoadedInstrument {
    pub instrument: Instrument,
    pub report: ValidationReport,
    pub warning: Option<String>,
}

#[derive(Deserialize)]
struct RawInstrument {
    label: String,
    dim: usize,
    atoms: Vec<RawAtom>,
}

#[derive(Deserialize)]
struct RawAtom {
    weight: f64,
    matrix: Vec<Vec<[f64; 2]>>,
}

impl Instrument {
    pub fn new(label: impl Into<String>, atoms: Vec<Atom>) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| Error::InvalidInstrument("at least one atom is required".into()))?;
        let dim = first.matrix.dim();
        for (i, atom) in atoms.iter().enumerate() {
            if atom.matrix.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: atom.matrix.dim(),
                });
            }
            if !(atom.weight > 0.0 && atom.weight.is_finite()) {
                return Err(Error::InvalidInstrument(format!(
                    "atom {i} has non-positive weight {}",
                    atom.weight
                )));
            }
        }
        Ok(Self {
            label: label.into(),
            dim,
            atoms,
        })
    }

    /// Single unitary atom.
    pub fn unitary(label: impl Into<String>, u: ComplexMatrix) -> Result<Self> {
        Self::new(label, vec![Atom { weight: 1.0, matrix: u }])
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `Σ w_i v_i* v_i`.
    pub fn effect_sum(&self) -> ComplexMatrix {
        let mut acc = DMatrix::<C64>::zeros(self.dim, self.dim);
        for a in &self.atoms {
            let m = a.matrix.matrix();
            acc += m.adjoint() * m * C64::new(a.weight, 0.0);
        }
        ComplexMatrix::new(acc).expect("finite by construction")
    }

    pub fn validate(&self, tol: f64) -> ValidationReport {
        let defect = op_norm(&(&self.effect_sum() - &ComplexMatrix::identity(self.dim)));
        ValidationReport {
            stochasticity_defect: defect,
            passed: defect <= tol,
            tolerance: tol,
        }
    }

    /// `p_i = w_i ||v_i x||^2`.
    pub fn transition_weights(&self, x: &ProjectivePoint) -> Result<Vec<f64>> {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.dim(),
            });
        }
        Ok(self
            .atoms
            .iter()
            .map(|a| a.weight * norm(&a.matrix.apply(x.coords())).powi(2))
            .collect())
    }

    /// `(Π f)(x̂) = Σ_i w_i ||v_i x||^2 f(v_i · x̂)`, null images contributing 0.
    pub fn kernel_sum<F>(&self, x: &ProjectivePoint, mut f: F) -> Result<C64>
    where
        F: FnMut(&ProjectivePoint) -> C64,
    {
        if x.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.dim(),
            });
        }
        let mut acc = C64::new(0.0, 0.0);
        for a in &self.atoms {
            match projective::act(&a.matrix, x) {
                Ok((y, n)) => acc += f(&y) * (a.weight * n * n),
                Err(Error::NullImage { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(acc)
    }

    /// `Σ w_i ||v_i||^2`.
    pub fn second_moment(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * op_norm(&a.matrix).powi(2))
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instrument serializes")
    }

    /// Parses and structurally checks an instrument file, then validates
    /// stochasticity at `tol`; a failed validation is reported as a warning.
    pub fn from_json(text: &str, tol: f64) -> Result<LoadedInstrument> {
        let raw: RawInstrument = serde_json::from_str(text).map_err(|e| Error::Parse {
            location: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        if raw.dim == 0 {
            return Err(Error::Parse {
                location: "dim".into(),
                message: "dimension must be positive".into(),
            });
        }
        let mut atoms = Vec::with_capacity(raw.atoms.len());
        for (i, a) in raw.atoms.into_iter().enumerate() {
            if a.matrix.len() != raw.dim || a.matrix.iter().any(|r| r.len() != raw.dim) {
                return Err(Error::Parse {
                    location: format!("atoms[{i}].matrix"),
                    message: format!("expected a {0}x{0} matrix to match header dim", raw.dim),
                });
            }
            let rows: Vec<Vec<C64>> = a
                .matrix
                .iter()
                .map(|r| r.iter().map(|&[re, im]| C64::new(re, im)).collect())
                .collect();
            let matrix = ComplexMatrix::from_rows(&rows).map_err(|e| Error::Parse {
                location: format!("atoms[{i}].matrix"),
                message: e.to_string(),
            })?;
            atoms.push(Atom {
                weight: a.weight,
                matrix,
            });
        }
        let instrument = Instrument::new(raw.label, atoms)?;
        let report = instrument.validate(tol);
        let warning = (!report.passed).then(|| {
            format!(
                "stochasticity defect {:e} exceeds tolerance {:e}",
                report.stochasticity_defect, tol
            )
        });
        Ok(LoadedInstrument {
            instrument,
            report,
            warning,
        })
    }

    pub fn load(path: impl AsRef<Path>, tol: f64) -> Result<LoadedInstrument> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, tol)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// The built-in example families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Builtin {
    /// Single planar rotation by `phi`.
    Uni { phi: f64 },
    /// Amplitude damping.
    Ad { p: f64 },
    /// Non-demolition measurement.
    Ndm { q: f64 },
    /// Non-demolition measurement followed by a flip.
    Pndm { q: f64 },
    /// Non-demolition measurement followed by a rotation by `phi`.
    Dr { q: f64, phi: f64 },
}

fn open_unit(name: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(Error::ParamOutOfRange {
            name,
            value: v,
            range: "(0, 1)",
        })
    }
}

fn rotation(phi: f64) -> ComplexMatrix {
    let (s, c) = phi.sin_cos();
    ComplexMatrix::from_real(2, &[c, -s, s, c]).expect("finite")
}

fn flip() -> ComplexMatrix {
    ComplexMatrix::from_real(2, &[0.0, 1.0, 1.0, 0.0]).expect("finite")
}

fn ndm_atoms(q: f64) -> [ComplexMatrix; 2] {
    [
        ComplexMatrix::diag_real(&[q.sqrt(), (1.0 - q).sqrt()]),
        ComplexMatrix::diag_real(&[(1.0 - q).sqrt(), q.sqrt()]),
    ]
}

impl Builtin {
    /// Parses `NAME` or `NAME:p1,p2` (e.g. `AD:0.36`, `DR:0.3,1.0`).
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, params) = match spec.split_once(':') {
            Some((n, p)) => (n, p),
            None => (spec, ""),
        };
        let params: Vec<f64> = params
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    location: format!("builtin `{spec}`"),
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Self::from_name(name, &params)
    }

    pub fn from_name(name: &str, params: &[f64]) -> Result<Self> {
        let get = |i: usize, default: f64| params.get(i).copied().unwrap_or(default);
        let b = match name.to_ascii_uppercase().as_str() {
            "UNI" => Builtin::Uni { phi: get(0, 1.0) },
            "AD" => Builtin::Ad { p: get(0, 0.36) },
            "NDM" => Builtin::Ndm { q: get(0, 0.3) },
            "PNDM" => Builtin::Pndm { q: get(0, 0.3) },
            "DR" => Builtin::Dr {
                q: get(0, 0.3),
                phi: get(1, 1.0),
            },
            _ => return Err(Error::UnknownBuiltin(name.to_string())),
        };
        Ok(b)
    }

    pub fn build(&self) -> Result<Instrument> {
        match *self {
            Builtin::Uni { phi } => Instrument::unitary(format!("UNI({phi})"), rotation(phi)),
            Builtin::Ad { p } => {
                let p = open_unit("p", p)?;
                Instrument::new(
                    format!("AD({p})"),
                    vec![
                        Atom {
                            weight: 1.0,
                            matrix: ComplexMatrix::diag_real(&[1.0, (1.0 - p).sqrt()]),
                        },
                        Atom {
                            weight: 1.0,
                            matrix: ComplexMatrix::from_real(2, &[0.0, p.sqrt(), 0.0, 0.0])?,
                        },
                    ],
                )
            }
            Builtin::Ndm { q } => {
                let q = open_unit("q", q)?;
                let atoms = ndm_atoms(q)
                    .into_iter()
                    .map(|m| Atom {
                        weight: 1.0,
                        matrix: m,
                    })
                    .collect();
                Instrument::new(format!("NDM({q})"), atoms)
            }
            Builtin::Pndm { q } => {
                let q = open_unit("q", q)?;
                let f = flip();
                let atoms = ndm_atoms(q)
                    .iter()
                    .map(|m| Atom {
                        weight: 1.0,
                        matrix: &f * m,
                    })
                    .collect();
                Instrument::new(format!("PNDM({q})"), atoms)
            }
            Builtin::Dr { q, phi } => {
                let q = open_unit("q", q)?;
                let r = rotation(phi);
                let atoms = ndm_atoms(q)
                    .iter()
                    .map(|m| Atom {
                        weight: 1.0,
                        matrix: &r * m,
                    })
                    .collect();
                Instrument::new(format!("DR({q},{phi})"), atoms)
            }
        }
    }
}

/// `builtin(name, params)` in one call.
pub fn builtin(name: &str, params: &[f64]) -> Result<Instrument> {
    Builtin::from_name(name, params)?.build()
}

/// Two weighted rank-one projectors `{(1/2, √2 P₀), (1/2, √2 P₁)}` on `C^2`.
pub fn projective_measurement() -> Instrument {
    let s = 2.0 * FRAC_1_SQRT_2;
    Instrument::new(
        "PVM",
        vec![
            Atom {
                weight: 0.5,
                matrix: ComplexMatrix::diag_real(&[s, 0.0]),
            },
            Atom {
                weight: 0.5,
                matrix: ComplexMatrix::diag_real(&[0.0, s]),
            },
        ],
    )
    .expect("valid")
}

/// Every built-in at the parameters used throughout the test-suite.
pub fn standard_builtins() -> Vec<Instrument> {
    ["UNI", "AD", "NDM", "PNDM", "DR"]
        .iter()
        .map(|n| builtin(n, &[]).expect("default parameters are valid"))
        .collect()
}
