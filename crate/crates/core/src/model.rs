//! Physical parameters, species descriptions, boundary data and the evolving
//! simulation state.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ScalarField, StaggeredVectorField};
use crate::grid::Grid;

/// Fluid coupling selected for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FluidModel {
    /// Navier-Stokes momentum equation.
    #[serde(rename = "NPNS")]
    Npns,
    /// Stokes momentum equation.
    #[default]
    #[serde(rename = "NPS")]
    Nps,
    /// Velocity held fixed; transport only.
    #[serde(rename = "Frozen")]
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Rescaled permittivity.
    pub epsilon: f64,
    /// Coupling constant `K`.
    pub k: f64,
    /// Kinematic viscosity.
    pub nu: f64,
    /// Double-layer capacitance in the Robin closure.
    pub tau: f64,
    pub fluid_model: FluidModel,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("epsilon", self.epsilon, "permittivity must be positive"),
            ("K", self.k, "coupling constant must be positive"),
            ("nu", self.nu, "viscosity must be positive"),
            (
                "tau",
                self.tau,
                "Robin capacitance tau must be positive for a well-posed potential problem",
            ),
        ];
        for (key, v, why) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    key: key.into(),
                    reason: format!("{why} (got {v})"),
                });
            }
        }
        Ok(())
    }
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            k: 1.0,
            nu: 1.0,
            tau: 1.0,
            fluid_model: FluidModel::Nps,
        }
    }
}

/// Boundary condition family for one ionic species.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpeciesBc {
    /// Zero total normal flux.
    Blocking,
    /// Fixed wall concentration `gamma > 0`.
    Dirichlet { gamma: f64 },
}

/// Named generator for an initial concentration profile. All generators
/// produce strictly positive fields for valid parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialProfile {
    Uniform {
        value: f64,
    },
    /// `background + amplitude * exp(-|x - center|^2 / (2 width^2))`
    Gaussian {
        background: f64,
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
    /// `background * (1 + amplitude * (-1)^(i+j+k))`
    Checkerboard { background: f64, amplitude: f64 },
    /// `background + amplitude * prod_a cos(pi m_a x_a / L_a)`
    CosineMode {
        background: f64,
        amplitude: f64,
        modes: Vec<u32>,
    },
    /// `background * (1 + amplitude * U(-1, 1))`, seeded.
    Random { background: f64, amplitude: f64 },
}

impl InitialProfile {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |reason: String| {
            Err(Error::InvalidParameter {
                key: "initial".into(),
                reason,
            })
        };
        match self {
            InitialProfile::Uniform { value } => {
                if !(*value > 0.0) {
                    return bad(format!("uniform value must be positive, got {value}"));
                }
            }
            InitialProfile::Gaussian {
                background,
                amplitude,
                center,
                width,
            } => {
                if !(*background > 0.0) || *amplitude < 0.0 || !(*width > 0.0) {
                    return bad("gaussian needs background > 0, amplitude >= 0, width > 0".into());
                }
                if center.len() != dim {
                    return bad(format!("gaussian center needs {dim} coordinates"));
                }
            }
            InitialProfile::Checkerboard {
                background,
                amplitude,
            }
            | InitialProfile::Random {
                background,
                amplitude,
            } => {
                if !(*background > 0.0) || !(0.0..1.0).contains(amplitude) {
                    return bad("needs background > 0 and 0 <= amplitude < 1".into());
                }
            }
            InitialProfile::CosineMode {
                background,
                amplitude,
                modes,
            } => {
                if modes.len() != dim {
                    return bad(format!("cosine modes need {dim} entries"));
                }
                if !(*background > amplitude.abs()) {
                    return bad("cosine mode needs background > |amplitude|".into());
                }
            }
        }
        Ok(())
    }

    /// Sample the profile on `grid`. `seed` only affects the random generator.
    pub fn sample(&self, grid: &Grid, seed: u64) -> ScalarField {
        match self {
            InitialProfile::Uniform { value } => ScalarField::constant(grid, *value),
            InitialProfile::Gaussian {
                background,
                amplitude,
                center,
                width,
            } => ScalarField::from_fn(grid, |x| {
                let r2: f64 = center.iter().enumerate().map(|(a, c)| (x[a] - c).powi(2)).sum();
                background + amplitude * (-r2 / (2.0 * width * width)).exp()
            }),
            InitialProfile::Checkerboard {
                background,
                amplitude,
            } => {
                let vals = (0..grid.num_cells())
                    .map(|c| {
                        let [i, j, k] = grid.coords(c);
                        let sign = if (i + j + k) % 2 == 0 { 1.0 } else { -1.0 };
                        background * (1.0 + amplitude * sign)
                    })
                    .collect();
                ScalarField::from_values(grid, vals).expect("length matches grid")
            }
            InitialProfile::CosineMode {
                background,
                amplitude,
                modes,
            } => {
                let lengths = grid.lengths().to_vec();
                ScalarField::from_fn(grid, |x| {
                    let prod: f64 = modes
                        .iter()
                        .enumerate()
                        .map(|(a, &m)| (PI * m as f64 * x[a] / lengths[a]).cos())
                        .product();
                    background + amplitude * prod
                })
            }
            InitialProfile::Random {
                background,
                amplitude,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let vals = (0..grid.num_cells())
                    .map(|_| background * (1.0 + amplitude * rng.gen_range(-1.0..1.0)))
                    .collect();
                ScalarField::from_values(grid, vals).expect("length matches grid")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesSpec {
    pub valence: f64,
    pub diffusivity: f64,
    pub bc: SpeciesBc,
    pub initial: InitialProfile,
}

impl SpeciesSpec {
    pub fn blocking(valence: f64, diffusivity: f64, initial: InitialProfile) -> Self {
        Self {
            valence,
            diffusivity,
            bc: SpeciesBc::Blocking,
            initial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diffusivity > 0.0 && self.diffusivity.is_finite()) {
            return Err(Error::InvalidParameter {
                key: "diffusivity".into(),
                reason: format!("ionic diffusivity must be positive (got {})", self.diffusivity),
            });
        }
        if !self.valence.is_finite() {
            return Err(Error::InvalidParameter {
                key: "valence".into(),
                reason: "valence must be finite".into(),
            });
        }
        if let SpeciesBc::Dirichlet { gamma } = self.bc {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::InvalidParameter {
                    key: "gamma".into(),
                    reason: format!(
                        "selective wall concentration must satisfy gamma > 0 (got {gamma})"
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn is_blocking(&self) -> bool {
        matches!(self.bc, SpeciesBc::Blocking)
    }
}

/// Generator for the applied boundary potential `xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum XiSpec {
    Constant {
        value: f64,
    },
    /// `base + sum_a slope_a * x_a`
    Linear {
        base: f64,
        slope: Vec<f64>,
    },
    /// `mean + amplitude * prod_a cos(2 pi k_a x_a / L_a)`
    Sinusoidal {
        mean: f64,
        amplitude: f64,
        wavenumber: Vec<f64>,
    },
    /// One value per boundary face in canonical order, one per line.
    Table {
        path: String,
    },
}

impl Default for XiSpec {
    fn default() -> Self {
        XiSpec::Constant { value: 0.0 }
    }
}

/// Applied potential sampled at boundary-face centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub xi: Vec<f64>,
}

impl BoundaryData {
    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self {
            xi: vec![value; grid.num_boundary_faces()],
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        Self {
            xi: grid.boundary_faces().iter().map(|b| f(b.center)).collect(),
        }
    }

    pub fn from_spec(grid: &Grid, spec: &XiSpec) -> Result<Self> {
        let data = match spec {
            XiSpec::Constant { value } => Self::constant(grid, *value),
            XiSpec::Linear { base, slope } => {
                if slope.len() != grid.dim() {
                    return Err(Error::InvalidParameter {
                        key: "boundary.xi.slope".into(),
                        reason: format!("needs {} entries", grid.dim()),
                    });
                }
                Self::from_fn(grid, |x| {
                    base + slope.iter().enumerate().map(|(a, s)| s * x[a]).sum::<f64>()
                })
            }
            XiSpec::Sinusoidal {
                mean,
                amplitude,
                wavenumber,
            } => {
                if wavenumber.len() != grid.dim() {
                    return Err(Error::InvalidParameter {
                        key: "boundary.xi.wavenumber".into(),
                        reason: format!("needs {} entries", grid.dim()),
                    });
                }
                let lengths = grid.lengths().to_vec();
                Self::from_fn(grid, |x| {
                    let prod: f64 = wavenumber
                        .iter()
                        .enumerate()
                        .map(|(a, k)| (2.0 * PI * k * x[a] / lengths[a]).cos())
                        .product();
                    mean + amplitude * prod
                })
            }
            XiSpec::Table { path } => Self::from_table(grid, Path::new(path))?,
        };
        data.validate(grid)?;
        Ok(data)
    }

    fn from_table(grid: &Grid, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut xi = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| Error::ConfigParse {
                line: ln + 1,
                column: 1,
                message: format!("`{line}` is not a number in xi table {}", path.display()),
            })?;
            xi.push(v);
        }
        if xi.len() != grid.num_boundary_faces() {
            return Err(Error::ConfigValidation {
                key: "boundary.xi.path".into(),
                reason: format!(
                    "table has {} values, grid has {} boundary faces",
                    xi.len(),
                    grid.num_boundary_faces()
                ),
            });
        }
        Ok(Self { xi })
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.xi.len() != grid.num_boundary_faces() {
            return Err(Error::FieldMismatch(format!(
                "xi has {} values, grid has {} boundary faces",
                self.xi.len(),
                grid.num_boundary_faces()
            )));
        }
        if let Some(i) = self.xi.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                key: "xi".into(),
                reason: format!("non-finite value on boundary face {i}"),
            });
        }
        Ok(())
    }
}

/// All evolving fields plus the simulation clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub concentrations: Vec<ScalarField>,
    pub potential: ScalarField,
    pub velocity: StaggeredVectorField,
    pub pressure: ScalarField,
    pub time: f64,
    pub step: u64,
}

impl SimState {
    /// Zero velocity, zero potential, concentrations from each species' profile.
    /// Species `i` uses seed `seed + i` for random profiles.
    pub fn initial(grid: &Grid, species: &[SpeciesSpec], seed: u64) -> Self {
        Self {
            concentrations: species
                .iter()
                .enumerate()
                .map(|(i, s)| s.initial.sample(grid, seed.wrapping_add(i as u64)))
                .collect(),
            potential: ScalarField::zeros(grid),
            velocity: StaggeredVectorField::zeros(grid),
            pressure: ScalarField::zeros(grid),
            time: 0.0,
            step: 0,
        }
    }

    pub fn from_concentrations(grid: &Grid, concentrations: Vec<ScalarField>) -> Self {
        Self {
            concentrations,
            potential: ScalarField::zeros(grid),
            velocity: StaggeredVectorField::zeros(grid),
            pressure: ScalarField::zeros(grid),
            time: 0.0,
            step: 0,
        }
    }

    pub fn grid(&self) -> &Grid {
        self.potential.grid()
    }

    /// Smallest concentration over all species and cells, with its location.
    pub fn min_concentration(&self) -> (f64, usize, usize) {
        let mut best = (f64::INFINITY, 0, 0);
        for (s, c) in self.concentrations.iter().enumerate() {
            for (cell, &v) in c.values().iter().enumerate() {
                if v < best.0 {
                    best = (v, s, cell);
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn params_validation() {
        assert!(PhysicalParams::default().validate().is_ok());
        let p = PhysicalParams {
            tau: 0.0,
            ..Default::default()
        };
        let err = p.validate().unwrap_err().to_string();
        assert!(err.contains("tau") && err.contains("Robin"), "{err}");
    }

    #[test]
    fn species_validation() {
        let ok = SpeciesSpec::blocking(1.0, 1.0, InitialProfile::Uniform { value: 1.0 });
        assert!(ok.validate().is_ok());
        let mut s = ok.clone();
        s.diffusivity = 0.0;
        assert!(s.validate().is_err());
        let mut s = ok.clone();
        s.bc = SpeciesBc::Dirichlet { gamma: -1.0 };
        assert!(s.validate().unwrap_err().to_string().contains("gamma > 0"));
    }

    #[test]
    fn profiles_are_positive() {
        let g = make_grid(2, &[8, 6], &[1.0, 0.5]).unwrap();
        let profiles = [
            InitialProfile::Uniform { value: 0.3 },
            InitialProfile::Gaussian {
                background: 0.1,
                amplitude: 2.0,
                center: vec![0.3, 0.2],
                width: 0.1,
            },
            InitialProfile::Checkerboard {
                background: 1.0,
                amplitude: 0.5,
            },
            InitialProfile::CosineMode {
                background: 1.0,
                amplitude: 0.9,
                modes: vec![1, 2],
            },
            InitialProfile::Random {
                background: 1.0,
                amplitude: 0.9,
            },
        ];
        for p in profiles {
            p.validate(2).unwrap();
            let f = p.sample(&g, 7);
            assert!(f.min() > 0.0, "{p:?}");
        }
    }

    #[test]
    fn random_profile_is_seeded() {
        let g = make_grid(2, &[4, 4], &[1.0, 1.0]).unwrap();
        let p = InitialProfile::Random {
            background: 1.0,
            amplitude: 0.5,
        };
        assert_eq!(p.sample(&g, 3), p.sample(&g, 3));
        assert_ne!(p.sample(&g, 3), p.sample(&g, 4));
    }

    #[test]
    fn xi_generators() {
        let g = make_grid(2, &[4, 4], &[1.0, 1.0]).unwrap();
        let c = BoundaryData::from_spec(&g, &XiSpec::Constant { value: 2.0 }).unwrap();
        assert!(c.xi.iter().all(|&v| v == 2.0));
        let l = BoundaryData::from_spec(
            &g,
            &XiSpec::Linear {
                base: 1.0,
                slope: vec![2.0, 0.0],
            },
        )
        .unwrap();
        let faces = g.boundary_faces();
        for (f, v) in faces.iter().zip(&l.xi) {
            assert!((v - (1.0 + 2.0 * f.center[0])).abs() < 1e-15);
        }
        assert!(BoundaryData::from_spec(
            &g,
            &XiSpec::Linear {
                base: 0.0,
                slope: vec![1.0]
            }
        )
        .is_err());
    }

    #[test]
    fn xi_table_roundtrip() {
        let g = make_grid(2, &[2, 2], &[1.0, 1.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("xi.txt");
        std::fs::write(&path, "# xi\n1\n2\n3\n4\n5\n6\n7\n8\n").unwrap();
        let d = BoundaryData::from_spec(
            &g,
            &XiSpec::Table {
                path: path.to_string_lossy().into(),
            },
        )
        .unwrap();
        assert_eq!(d.xi, (1..=8).map(|v| v as f64).collect::<Vec<_>>());
        std::fs::write(&path, "1\n2\n").unwrap();
        assert!(BoundaryData::from_spec(
            &g,
            &XiSpec::Table {
                path: path.to_string_lossy().into()
            }
        )
        .is_err());
    }
}
