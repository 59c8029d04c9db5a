//! Empirical boundary-trace inequality ratios under grid refinement.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// A sample function returning its value and gradient.
pub type Sample = Box<dyn Fn([f64; 3]) -> (f64, [f64; 3]) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFamily {
    /// `exp(-d / l)` with `d` the distance to one wall or to a corner.
    BoundaryPeaked,
    /// Seeded truncated cosine series with coefficients in `[-1, 1]`.
    Fourier,
}

pub const FOURIER_SAMPLES: usize = 12;
pub const FOURIER_MODES: usize = 4;
pub const FOURIER_SEED: u64 = 2024;
pub const PEAK_WIDTHS: [f64; 4] = [0.4, 0.2, 0.1, 0.05];

/// Interpolation form: `|f|_{L^p(dO)} / (|grad f|^{1/p} |f|_{2(p-1)}^{(p-1)/p} + |f|_p)`.
pub const FORM_INTERPOLATION: &str = "interpolation";
/// `p = 4` only: `|f|_{L^4(dO)} / |f|_{H^1}`.
pub const FORM_H1: &str = "h1";

#[derive(Debug, Clone, Serialize)]
pub struct TraceCheckReport {
    pub family: TraceFamily,
    pub description: String,
    pub p: f64,
    pub levels: Vec<usize>,
    pub labels: Vec<String>,
    /// `ratios[form][level][sample]`.
    pub forms: Vec<String>,
    pub ratios: Vec<Vec<Vec<f64>>>,
    /// `max_ratio[form][level]`.
    pub max_ratio: Vec<Vec<f64>>,
    /// Relative change of the max ratio between the two finest levels, per form.
    pub variation: Vec<f64>,
}

impl TraceCheckReport {
    pub fn table(&self) -> String {
        let mut s = format!("trace {:?}, p = {}: {}\n", self.family, self.p, self.description);
        for (fi, form) in self.forms.iter().enumerate() {
            s.push_str(&format!("  form {form}:"));
            for (l, n) in self.levels.iter().enumerate() {
                s.push_str(&format!(" {n}->{:.6}", self.max_ratio[fi][l]));
            }
            s.push_str(&format!(" (variation {:.2}%)\n", 100.0 * self.variation[fi]));
        }
        s
    }
}

/// Samples of a family with human-readable labels.
pub fn family_samples(family: TraceFamily) -> Vec<(String, Sample)> {
    match family {
        TraceFamily::BoundaryPeaked => {
            let mut out: Vec<(String, Sample)> = Vec::new();
            for l in PEAK_WIDTHS {
                out.push((
                    format!("wall l={l}"),
                    Box::new(move |x| {
                        let v = (-x[0] / l).exp();
                        (v, [-v / l, 0.0, 0.0])
                    }),
                ));
                out.push((
                    format!("corner l={l}"),
                    Box::new(move |x| {
                        let v = (-(x[0] + x[1]) / l).exp();
                        (v, [-v / l, -v / l, 0.0])
                    }),
                ));
            }
            out
        }
        TraceFamily::Fourier => {
            let mut rng = ChaCha8Rng::seed_from_u64(FOURIER_SEED);
            (0..FOURIER_SAMPLES)
                .map(|s| {
                    let coef: Vec<(f64, f64, f64, f64)> = (0..FOURIER_MODES * FOURIER_MODES)
                        .map(|_| {
                            (
                                rng.gen_range(-1.0..1.0),
                                rng.gen_range(-1.0..1.0),
                                rng.gen_range(0.0..2.0 * PI),
                                rng.gen_range(0.0..2.0 * PI),
                            )
                        })
                        .collect();
                    let f: Sample = Box::new(move |x| {
                        let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
                        for (m, &(a, _, px, py)) in coef.iter().enumerate() {
                            let kx = PI * (m % FOURIER_MODES) as f64;
                            let ky = PI * (m / FOURIER_MODES) as f64;
                            let (sx, cx) = (kx * x[0] + px).sin_cos();
                            let (sy, cy) = (ky * x[1] + py).sin_cos();
                            v += a * cx * cy;
                            gx -= a * kx * sx * cy;
                            gy -= a * ky * cx * sy;
                        }
                        (v, [gx, gy, 0.0])
                    });
                    (format!("fourier #{s}"), f)
                })
                .collect()
        }
    }
}

/// Raw norms of one sample on one grid: boundary `L^p` from face midpoints,
/// interior norms by midpoint quadrature.
#[derive(Debug, Clone, Copy)]
pub struct TraceNorms {
    pub boundary_p: f64,
    pub grad_l2: f64,
    pub interior_2pm1: f64,
    pub interior_p: f64,
    pub interior_l2: f64,
}

pub fn trace_norms(grid: &Grid, f: &dyn Fn([f64; 3]) -> (f64, [f64; 3]), p: f64) -> TraceNorms {
    let bsum: f64 = grid
        .boundary_faces()
        .iter()
        .map(|face| face.area * f(face.center).0.abs().powf(p))
        .sum();
    let q = 2.0 * (p - 1.0);
    let (mut g2, mut sq, mut sp, mut s2) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..grid.num_cells() {
        let (v, gr) = f(grid.cell_center(i));
        g2 += gr.iter().map(|x| x * x).sum::<f64>();
        sq += v.abs().powf(q);
        sp += v.abs().powf(p);
        s2 += v * v;
    }
    let vol = grid.cell_volume();
    TraceNorms {
        boundary_p: bsum.powf(1.0 / p),
        grad_l2: (g2 * vol).sqrt(),
        interior_2pm1: (sq * vol).powf(1.0 / q),
        interior_p: (sp * vol).powf(1.0 / p),
        interior_l2: (s2 * vol).sqrt(),
    }
}

/// Ratio of the boundary norm to the interpolation bound with unit constants.
/// A vanishing function has ratio 0.
pub fn interpolation_ratio(n: &TraceNorms, p: f64) -> f64 {
    if n.boundary_p == 0.0 {
        return 0.0;
    }
    let rhs = n.grad_l2.powf(1.0 / p) * n.interior_2pm1.powf((p - 1.0) / p) + n.interior_p;
    n.boundary_p / rhs
}

pub fn h1_ratio(n: &TraceNorms) -> f64 {
    if n.boundary_p == 0.0 {
        return 0.0;
    }
    n.boundary_p / (n.grad_l2 * n.grad_l2 + n.interior_l2 * n.interior_l2).sqrt()
}

/// Ratios for every sample of `family` on the unit square at each level.
pub fn trace_inequality_check(levels: &[usize], family: TraceFamily, p: f64) -> Result<TraceCheckReport> {
    if !(2.0..=4.0).contains(&p) {
        return Err(Error::InvalidParameter {
            key: "p".into(),
            reason: format!("trace exponent must lie in [2, 4] (got {p})"),
        });
    }
    if levels.len() < 2 {
        return Err(Error::InvalidParameter {
            key: "levels".into(),
            reason: "need at least two refinement levels".into(),
        });
    }
    let samples = family_samples(family);
    let mut forms = vec![FORM_INTERPOLATION.to_string()];
    if p == 4.0 {
        forms.push(FORM_H1.to_string());
    }
    let mut ratios = vec![Vec::new(); forms.len()];
    for &n in levels {
        let g = Grid::new(2, &[n, n], &[1.0, 1.0])?;
        let norms: Vec<TraceNorms> = samples.iter().map(|(_, f)| trace_norms(&g, f.as_ref(), p)).collect();
        ratios[0].push(norms.iter().map(|x| interpolation_ratio(x, p)).collect());
        if forms.len() == 2 {
            ratios[1].push(norms.iter().map(h1_ratio).collect());
        }
    }
    let max_ratio: Vec<Vec<f64>> = ratios
        .iter()
        .map(|per_level| per_level.iter().map(|r: &Vec<f64>| r.iter().copied().fold(0.0, f64::max)).collect())
        .collect();
    let variation = max_ratio
        .iter()
        .map(|m: &Vec<f64>| {
            let (a, b) = (m[m.len() - 2], m[m.len() - 1]);
            (b - a).abs() / a.abs().max(b.abs())
        })
        .collect();
    let description = match family {
        TraceFamily::BoundaryPeaked => format!("exp(-d/l) at a wall and a corner, l in {PEAK_WIDTHS:?}"),
        TraceFamily::Fourier => format!(
            "{FOURIER_SAMPLES} cosine series with {FOURIER_MODES}x{FOURIER_MODES} modes, seed {FOURIER_SEED}"
        ),
    };
    Ok(TraceCheckReport {
        family,
        description,
        p,
        levels: levels.to_vec(),
        labels: samples.into_iter().map(|(l, _)| l).collect(),
        forms,
        ratios,
        max_ratio,
        variation,
    })
}
