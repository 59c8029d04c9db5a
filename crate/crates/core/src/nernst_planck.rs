//! Conservative finite-volume transport of the ionic concentrations.
//!
//! Every face carries a single flux value oriented along the positive axis,
//! so whatever leaves one cell enters its neighbour. Electro-diffusion uses the
//! Scharfetter-Gummel exponential fit, which vanishes identically on discrete
//! Boltzmann states; advection is first-order upwind in the face velocity.

use crate::error::{Error, Result};
use crate::field::{ScalarField, StaggeredVectorField};
use crate::grid::{Grid, Side};
use crate::model::{SimState, SpeciesBc, SpeciesSpec};

/// Safety factor applied to every explicit stability bound.
pub const STABILITY_SAFETY: f64 = 0.9;

/// `B(x) = x / (e^x - 1)`, with a series for small `|x|`.
#[inline]
pub fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - 0.5 * x + x2 / 12.0 - x2 * x2 / 720.0
    } else {
        x / x.exp_m1()
    }
}

/// `(B(d), B(-d))` evaluated without cancellation, using `B(-x) = B(x) + x`
/// from the non-negative side.
#[inline]
pub fn bernoulli_pair(d: f64) -> (f64, f64) {
    if d >= 0.0 {
        let b = bernoulli(d);
        (b, b + d)
    } else {
        let b = bernoulli(-d);
        (b - d, b)
    }
}

/// Scharfetter-Gummel flux from cell P to cell E:
/// `(D/h) [B(z dphi) cP - B(-z dphi) cE]` with `dphi = phi_E - phi_P`.
#[inline]
pub fn electro_diffusive_face_flux(cp: f64, ce: f64, dphi: f64, z: f64, d: f64, h: f64) -> f64 {
    let (bp, bn) = bernoulli_pair(z * dphi);
    d / h * (bp * cp - bn * ce)
}

/// First-order upwind advective flux through a face with normal velocity `u`.
#[inline]
pub fn advective_face_flux(cp: f64, ce: f64, u: f64) -> f64 {
    if u >= 0.0 {
        u * cp
    } else {
        u * ce
    }
}

/// One flux per face, positive along the axis, in the staggered face layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    grid: Grid,
    comps: Vec<Vec<f64>>,
}

impl FluxField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: *grid,
            comps: (0..grid.dim())
                .map(|a| vec![0.0; StaggeredVectorField::face_count(grid, a)])
                .collect(),
        }
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.comps[axis]
    }

    /// Face index in the staggered layout of `axis`.
    #[inline]
    fn face(grid: &Grid, axis: usize, c: [usize; 3]) -> usize {
        let mut s = grid.shape();
        s[axis] += 1;
        c[0] + s[0] * (c[1] + s[1] * c[2])
    }

    /// Flux value on the boundary face on `side` of `axis` next to `cell`.
    pub fn boundary_value(&self, axis: usize, side: Side, cell: usize) -> f64 {
        let mut c = self.grid.coords(cell);
        if side == Side::High {
            c[axis] += 1;
        }
        self.comps[axis][Self::face(&self.grid, axis, c)]
    }

    /// `sum_a (F_hi - F_lo) / h_a` per cell.
    pub fn divergence(&self) -> Vec<f64> {
        let g = self.grid;
        let mut div = vec![0.0; g.num_cells()];
        for axis in 0..g.dim() {
            let h = g.h(axis);
            let comp = &self.comps[axis];
            for (cell, d) in div.iter_mut().enumerate() {
                let c = g.coords(cell);
                let lo = Self::face(&g, axis, c);
                let mut c2 = c;
                c2[axis] += 1;
                let hi = Self::face(&g, axis, c2);
                *d += (comp[hi] - comp[lo]) / h;
            }
        }
        div
    }
}

/// Per-face Bernoulli weights for one valence against a fixed potential.
///
/// Interior faces hold `(B(d), B(-d))` with `d = z (phi_E - phi_P)`. Boundary
/// faces hold the half-cell weights with `d = z (phi_face - phi_interior)`,
/// used only by selective (Dirichlet) walls.
#[derive(Debug, Clone)]
pub struct DriftTable {
    grid: Grid,
    weights: Vec<Vec<(f64, f64)>>,
}

impl DriftTable {
    pub fn new(phi: &ScalarField, z: f64) -> Result<Self> {
        if !phi.ghosts_valid() {
            return Err(Error::GhostsNotPopulated("potential"));
        }
        let g = *phi.grid();
        let v = phi.values();
        let mut weights = Vec::with_capacity(g.dim());
        for axis in 0..g.dim() {
            let mut w = vec![(1.0, 1.0); StaggeredVectorField::face_count(&g, axis)];
            let stride = g.stride(axis);
            for p in 0..g.num_cells() {
                let c = g.coords(p);
                if c[axis] + 1 < g.n(axis) {
                    let mut cf = c;
                    cf[axis] += 1;
                    w[FluxField::face(&g, axis, cf)] = bernoulli_pair(z * (v[p + stride] - v[p]));
                }
            }
            for side in [Side::Low, Side::High] {
                let off = g.boundary_block_offset(axis, side);
                for t in 0..g.faces_per_side(axis) {
                    let p = g.boundary_cell(axis, side, t);
                    let face_phi = 0.5 * (phi.ghosts()[off + t] + v[p]);
                    let mut cf = g.coords(p);
                    if side == Side::High {
                        cf[axis] += 1;
                    }
                    w[FluxField::face(&g, axis, cf)] = bernoulli_pair(z * (face_phi - v[p]));
                }
            }
            weights.push(w);
        }
        Ok(Self { grid: g, weights })
    }
}

/// Ghost concentrations and outward boundary fluxes for one species.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesClosure {
    /// Ghost concentration per boundary face; `None` for blocking walls,
    /// where no ghost is needed.
    pub ghosts: Option<Vec<f64>>,
    /// Outward electro-diffusive flux per boundary face.
    pub boundary_flux: Vec<f64>,
}

fn dirichlet_outward_flux(cp: f64, gamma: f64, w: (f64, f64), d: f64, h: f64) -> f64 {
    // Half-cell Scharfetter-Gummel between the cell center and the wall value.
    2.0 * d / h * (w.0 * cp - w.1 * gamma)
}

/// Boundary closure for one species against the current potential.
///
/// Blocking walls carry exactly zero flux. Selective walls use the ghost
/// `2 gamma - c_P`, so the face value is `gamma`, and a half-cell
/// Scharfetter-Gummel flux driven by the Robin-consistent face potential.
pub fn assemble_boundary_closure(
    spec: &SpeciesSpec,
    conc: &ScalarField,
    phi: &ScalarField,
) -> Result<SpeciesClosure> {
    let g = conc.grid();
    let nb = g.num_boundary_faces();
    match spec.bc {
        SpeciesBc::Blocking => Ok(SpeciesClosure {
            ghosts: None,
            boundary_flux: vec![0.0; nb],
        }),
        SpeciesBc::Dirichlet { gamma } => {
            let table = DriftTable::new(phi, spec.valence)?;
            let mut ghosts = vec![0.0; nb];
            let mut flux = vec![0.0; nb];
            for (fi, f) in g.boundary_faces().iter().enumerate() {
                let cp = conc.values()[f.cell];
                ghosts[fi] = 2.0 * gamma - cp;
                let mut cf = g.coords(f.cell);
                if f.side == Side::High {
                    cf[f.axis] += 1;
                }
                let w = table.weights[f.axis][FluxField::face(g, f.axis, cf)];
                flux[fi] = dirichlet_outward_flux(cp, gamma, w, spec.diffusivity, g.h(f.axis));
            }
            Ok(SpeciesClosure {
                ghosts: Some(ghosts),
                boundary_flux: flux,
            })
        }
    }
}

/// Total (electro-diffusive plus advective) face fluxes of one species.
pub fn species_fluxes(
    spec: &SpeciesSpec,
    conc: &ScalarField,
    table: &DriftTable,
    u: &StaggeredVectorField,
) -> FluxField {
    let g = *conc.grid();
    let c = conc.values();
    let mut out = FluxField::zeros(&g);
    for axis in 0..g.dim() {
        let h = g.h(axis);
        let k = spec.diffusivity / h;
        let stride = g.stride(axis);
        let w = &table.weights[axis];
        let uc = u.component(axis);
        let fc = &mut out.comps[axis];
        for p in 0..g.num_cells() {
            let cc = g.coords(p);
            if cc[axis] + 1 < g.n(axis) {
                let mut cf = cc;
                cf[axis] += 1;
                let fi = FluxField::face(&g, axis, cf);
                let (bp, bn) = w[fi];
                let (cp, ce) = (c[p], c[p + stride]);
                fc[fi] = k * (bp * cp - bn * ce) + advective_face_flux(cp, ce, uc[fi]);
            }
        }
        if let SpeciesBc::Dirichlet { gamma } = spec.bc {
            for side in [Side::Low, Side::High] {
                for t in 0..g.faces_per_side(axis) {
                    let p = g.boundary_cell(axis, side, t);
                    let mut cf = g.coords(p);
                    if side == Side::High {
                        cf[axis] += 1;
                    }
                    let fi = FluxField::face(&g, axis, cf);
                    let out_flux =
                        dirichlet_outward_flux(c[p], gamma, w[fi], spec.diffusivity, h);
                    fc[fi] = side.normal_sign() * out_flux;
                }
            }
        }
    }
    out
}

/// Largest outflow rate `sum_faces (outflow coefficient)` over all cells of
/// one species; forward Euler keeps `c >= 0` when `dt * rate <= 1`.
pub fn outflow_rate(
    spec: &SpeciesSpec,
    table: &DriftTable,
    u: &StaggeredVectorField,
) -> f64 {
    let g = table.grid;
    let mut rate = vec![0.0; g.num_cells()];
    for axis in 0..g.dim() {
        let h = g.h(axis);
        let k = spec.diffusivity / (h * h);
        let stride = g.stride(axis);
        let w = &table.weights[axis];
        let uc = u.component(axis);
        for p in 0..g.num_cells() {
            let cc = g.coords(p);
            if cc[axis] + 1 < g.n(axis) {
                let mut cf = cc;
                cf[axis] += 1;
                let fi = FluxField::face(&g, axis, cf);
                let (bp, bn) = w[fi];
                let uf = uc[fi];
                rate[p] += k * bp + uf.max(0.0) / h;
                rate[p + stride] += k * bn + (-uf).max(0.0) / h;
            }
        }
        if matches!(spec.bc, SpeciesBc::Dirichlet { .. }) {
            for side in [Side::Low, Side::High] {
                for t in 0..g.faces_per_side(axis) {
                    let p = g.boundary_cell(axis, side, t);
                    let mut cf = g.coords(p);
                    if side == Side::High {
                        cf[axis] += 1;
                    }
                    rate[p] += 2.0 * k * w[FluxField::face(&g, axis, cf)].0;
                }
            }
        }
    }
    rate.into_iter().fold(0.0, f64::max)
}

/// Explicit time-step bound for the concentration update: positivity of the
/// drift-weighted diffusion plus upwind advection, intersected with the
/// dielectric relaxation limit of the lagged potential.
pub fn stability_dt(state: &SimState, species: &[SpeciesSpec], epsilon: f64) -> Result<f64> {
    let mut dt = f64::INFINITY;
    let mut relax = 0.0;
    for (s, c) in species.iter().zip(&state.concentrations) {
        let table = DriftTable::new(&state.potential, s.valence)?;
        let rate = outflow_rate(s, &table, &state.velocity);
        if rate > 0.0 {
            dt = dt.min(STABILITY_SAFETY / rate);
        }
        relax += s.diffusivity * s.valence * s.valence * c.max().max(0.0);
    }
    if relax > 0.0 {
        dt = dt.min(STABILITY_SAFETY * epsilon / relax);
    }
    Ok(dt)
}

/// Apply `c - dt * div F` to one species.
fn apply_update(conc: &ScalarField, flux: &FluxField, dt: f64) -> Result<ScalarField> {
    let div = flux.divergence();
    let vals: Vec<f64> = conc
        .values()
        .iter()
        .zip(&div)
        .map(|(c, d)| c - dt * d)
        .collect();
    ScalarField::from_values(conc.grid(), vals)
}

/// One forward-Euler step of every species against the potential and velocity
/// stored in `state`. Returns the new concentrations without touching `state`.
pub fn advance_concentrations(
    state: &SimState,
    species: &[SpeciesSpec],
    dt: f64,
) -> Result<Vec<ScalarField>> {
    if species.len() != state.concentrations.len() {
        return Err(Error::FieldMismatch(format!(
            "{} species for {} concentration fields",
            species.len(),
            state.concentrations.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter {
            key: "dt".into(),
            reason: format!("time step must be positive (got {dt})"),
        });
    }
    let mut out = Vec::with_capacity(species.len());
    for (i, (s, c)) in species.iter().zip(&state.concentrations).enumerate() {
        let table = DriftTable::new(&state.potential, s.valence)?;
        let flux = species_fluxes(s, c, &table, &state.velocity);
        let next = apply_update(c, &flux, dt)?;
        if let Some((cell, &value)) = next
            .values()
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0))
        {
            let rate = outflow_rate(s, &table, &state.velocity);
            return Err(Error::NegativeConcentration {
                species: i,
                cell,
                value,
                suggested_dt: STABILITY_SAFETY / rate.max(f64::MIN_POSITIVE),
            });
        }
        out.push(next);
    }
    Ok(out)
}

/// Slotboom variables `c_i exp(z_i phi)` per species.
pub fn slotboom(
    concentrations: &[ScalarField],
    species: &[SpeciesSpec],
    phi: &ScalarField,
) -> Result<Vec<ScalarField>> {
    scale_by_boltzmann(concentrations, species, phi, 1.0)
}

/// Inverse of [`slotboom`]: `c_tilde exp(-z_i phi)`.
pub fn inverse_slotboom(
    tilde: &[ScalarField],
    species: &[SpeciesSpec],
    phi: &ScalarField,
) -> Result<Vec<ScalarField>> {
    scale_by_boltzmann(tilde, species, phi, -1.0)
}

fn scale_by_boltzmann(
    fields: &[ScalarField],
    species: &[SpeciesSpec],
    phi: &ScalarField,
    sign: f64,
) -> Result<Vec<ScalarField>> {
    if fields.len() != species.len() {
        return Err(Error::FieldMismatch("species/field count mismatch".into()));
    }
    const EXP_MAX: f64 = 709.0;
    let mut out = Vec::with_capacity(fields.len());
    for (f, s) in fields.iter().zip(species) {
        let mut vals = Vec::with_capacity(f.values().len());
        for (cell, (c, p)) in f.values().iter().zip(phi.values()).enumerate() {
            let e = sign * s.valence * p;
            if !p.is_finite() || e > EXP_MAX {
                return Err(Error::Overflow { cell, exponent: e });
            }
            vals.push(c * e.exp());
        }
        out.push(ScalarField::from_values(f.grid(), vals)?);
    }
    Ok(out)
}

/// Check the equal-diffusivity, equal-|valence| blocking hypothesis and return
/// the common `(D, |z|)`.
pub fn common_transport(species: &[SpeciesSpec]) -> Result<(f64, f64)> {
    let first = species
        .first()
        .ok_or_else(|| Error::Hypothesis("no species".into()))?;
    let (d, z) = (first.diffusivity, first.valence.abs());
    for (i, s) in species.iter().enumerate() {
        if s.diffusivity != d {
            return Err(Error::Hypothesis(format!(
                "species {i} has diffusivity {} != {d}",
                s.diffusivity
            )));
        }
        if s.valence.abs() != z {
            return Err(Error::Hypothesis(format!(
                "species {i} has |valence| {} != {z}",
                s.valence.abs()
            )));
        }
        if !s.is_blocking() {
            return Err(Error::Hypothesis(format!(
                "species {i} is not blocking; the charge/total reduction needs blocking walls"
            )));
        }
    }
    Ok((d, z))
}

/// One step of the coupled charge/total system
/// `d_t rho + u.grad rho = D div(grad rho + z sigma grad phi)` and the same
/// with `rho` and `sigma` exchanged, with blocking walls.
///
/// The face flux is the exact image of the per-species Scharfetter-Gummel flux
/// under `rho = z (c_+ - c_-)`, `sigma = z (c_+ + c_-)`: diffusion weighted by
/// `(B(d) + B(-d))/2` and central drift `-d (s_P + s_E)/2`, `d = z dphi`.
pub fn rho_sigma_step(
    rho: &ScalarField,
    sigma: &ScalarField,
    phi: &ScalarField,
    u: &StaggeredVectorField,
    z: f64,
    d: f64,
    dt: f64,
) -> Result<(ScalarField, ScalarField)> {
    if !phi.ghosts_valid() {
        return Err(Error::GhostsNotPopulated("potential"));
    }
    let g = *rho.grid();
    let (r, s, p) = (rho.values(), sigma.values(), phi.values());
    let mut fr = FluxField::zeros(&g);
    let mut fs = FluxField::zeros(&g);
    for axis in 0..g.dim() {
        let k = d / g.h(axis);
        let stride = g.stride(axis);
        let uc = u.component(axis);
        for cell in 0..g.num_cells() {
            let cc = g.coords(cell);
            if cc[axis] + 1 < g.n(axis) {
                let mut cf = cc;
                cf[axis] += 1;
                let fi = FluxField::face(&g, axis, cf);
                let e = cell + stride;
                let delta = z * (p[e] - p[cell]);
                let (bp, bn) = bernoulli_pair(delta);
                let bs = 0.5 * (bp + bn);
                let uf = uc[fi];
                fr.comps[axis][fi] = k * (bs * (r[cell] - r[e]) - 0.5 * delta * (s[cell] + s[e]))
                    + advective_face_flux(r[cell], r[e], uf);
                fs.comps[axis][fi] = k * (bs * (s[cell] - s[e]) - 0.5 * delta * (r[cell] + r[e]))
                    + advective_face_flux(s[cell], s[e], uf);
            }
        }
    }
    Ok((apply_update(rho, &fr, dt)?, apply_update(sigma, &fs, dt)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::BoundaryClosure;
    use crate::field::integrate_cells;
    use crate::grid::make_grid;
    use crate::model::InitialProfile;

    #[test]
    fn bernoulli_values() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1e-8) - 0.999999995).abs() < 1e-12);
        for x in [0.5, 2.0, 10.0] {
            let lhs = bernoulli(-x);
            let rhs = bernoulli(x) * x.exp();
            assert!((lhs - rhs).abs() <= 1e-13 * rhs.abs(), "{x}: {lhs} vs {rhs}");
        }
        // Continuity across the series switch.
        for x in [9.99e-5, 1.001e-4, -9.99e-5, -1.001e-4] {
            let exact = x / f64::exp_m1(x);
            assert!((bernoulli(x) - exact).abs() < 1e-15);
        }
        assert_eq!(bernoulli(800.0), 0.0);
        assert!((bernoulli(-800.0) - 800.0).abs() < 1e-10);
    }

    #[test]
    fn bernoulli_pair_matches_direct() {
        for d in [-40.0, -3.0, -1e-6, 0.0, 1e-6, 0.3, 7.0, 40.0] {
            let (a, b) = bernoulli_pair(d);
            assert!((a - bernoulli(d)).abs() <= 1e-14 * a.max(1e-300));
            assert!((b - bernoulli(-d)).abs() <= 1e-14 * b.max(1e-300));
        }
    }

    #[test]
    fn face_flux_examples() {
        assert_eq!(electro_diffusive_face_flux(1.3, 1.3, 0.0, 1.0, 2.0, 0.1), 0.0);
        assert_eq!(electro_diffusive_face_flux(2.0, 1.0, 0.7, 0.0, 1.0, 0.5), 2.0);
        for z in [-2.0f64, 1.0, 3.0] {
            for (pp, pe) in [(0.1f64, 0.4f64), (-1.0, 2.0), (3.0, 3.0)] {
                let f = electro_diffusive_face_flux(
                    (-z * pp).exp(),
                    (-z * pe).exp(),
                    pe - pp,
                    z,
                    1.0,
                    1.0,
                );
                let scale = (-z * pp).exp().max((-z * pe).exp());
                assert!(f.abs() <= 1e-14 * scale, "z={z}: {f}");
            }
        }
        assert_eq!(advective_face_flux(3.0, 7.0, 0.0), 0.0);
        assert_eq!(advective_face_flux(3.0, 7.0, 1.0), 3.0);
        assert_eq!(advective_face_flux(3.0, 7.0, -1.0), -7.0);
    }

    fn robin_phi(g: &Grid, f: impl Fn([f64; 3]) -> f64) -> ScalarField {
        let mut phi = ScalarField::from_fn(g, f);
        let xi = vec![0.1; g.num_boundary_faces()];
        phi.fill_ghosts(BoundaryClosure::Robin { tau: 1.0, xi: &xi });
        phi
    }

    #[test]
    fn closure_examples() {
        let g = make_grid(2, &[4, 4], &[1.0, 1.0]).unwrap();
        let phi = robin_phi(&g, |x| x[0] - x[1]);
        let blocking = SpeciesSpec::blocking(1.0, 1.0, InitialProfile::Uniform { value: 1.0 });
        let conc = ScalarField::from_fn(&g, |x| 1.0 + x[0]);
        let cl = assemble_boundary_closure(&blocking, &conc, &phi).unwrap();
        assert!(cl.ghosts.is_none());
        assert!(cl.boundary_flux.iter().all(|&f| f == 0.0));

        let mut dir = blocking.clone();
        dir.bc = SpeciesBc::Dirichlet { gamma: 2.0 };
        let cl = assemble_boundary_closure(&dir, &ScalarField::constant(&g, 2.0), &phi).unwrap();
        assert!(cl.ghosts.unwrap().iter().all(|&gh| gh == 2.0));

        dir.bc = SpeciesBc::Dirichlet { gamma: 1.0 };
        let c3 = ScalarField::constant(&g, 3.0);
        let cl = assemble_boundary_closure(&dir, &c3, &phi).unwrap();
        for gh in cl.ghosts.unwrap() {
            assert_eq!(gh, -1.0);
            assert_eq!((gh + 3.0) / 2.0, 1.0);
        }
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let g = make_grid(2, &[12, 10], &[1.0, 0.8]).unwrap();
        let phi = robin_phi(&g, |x| 2.0 * (3.0 * x[0]).sin() + x[1] * x[1]);
        let species = vec![
            SpeciesSpec::blocking(1.0, 1.0, InitialProfile::Uniform { value: 1.0 }),
            SpeciesSpec::blocking(-2.0, 0.5, InitialProfile::Uniform { value: 1.0 }),
        ];
        let conc: Vec<ScalarField> = species
            .iter()
            .zip([0.7, 1.9])
            .map(|(s, a)| {
                let vals = phi.values().iter().map(|p| a * (-s.valence * p).exp()).collect();
                ScalarField::from_values(&g, vals).unwrap()
            })
            .collect();
        let mut state = SimState::from_concentrations(&g, conc.clone());
        state.potential = phi;
        let next = advance_concentrations(&state, &species, 1e-4).unwrap();
        for (a, b) in conc.iter().zip(&next) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!((x - y).abs() <= 1e-13 * x.abs());
            }
        }
    }

    #[test]
    fn uniform_state_is_unchanged() {
        let g = make_grid(2, &[6, 6], &[1.0, 1.0]).unwrap();
        let species = vec![SpeciesSpec::blocking(1.0, 1.0, InitialProfile::Uniform { value: 2.0 })];
        let mut state = SimState::initial(&g, &species, 0);
        state.potential = robin_phi(&g, |_| 0.5);
        let next = advance_concentrations(&state, &species, 1e-3).unwrap();
        assert_eq!(next[0].values(), state.concentrations[0].values());
    }

    #[test]
    fn heat_step_conserves_mass_and_max() {
        let g = make_grid(2, &[16, 16], &[1.0, 1.0]).unwrap();
        let species = vec![SpeciesSpec::blocking(
            0.0,
            1.0,
            InitialProfile::Gaussian {
                background: 0.1,
                amplitude: 1.0,
                center: vec![0.3, 0.6],
                width: 0.1,
            },
        )];
        let mut state = SimState::initial(&g, &species, 0);
        state.potential = robin_phi(&g, |_| 0.0);
        let m0 = integrate_cells(&state.concentrations[0]);
        let dt = stability_dt(&state, &species, 1.0).unwrap();
        let mut max = state.concentrations[0].max();
        for _ in 0..1000 {
            state.concentrations = advance_concentrations(&state, &species, dt).unwrap();
            let m = state.concentrations[0].max();
            assert!(m <= max);
            max = m;
        }
        let m1 = integrate_cells(&state.concentrations[0]);
        assert!((m1 - m0).abs() <= 1e-12 * m0);
    }

    #[test]
    fn oversized_step_reports_negative_concentration() {
        let g = make_grid(2, &[8, 8], &[1.0, 1.0]).unwrap();
        let species = vec![SpeciesSpec::blocking(
            0.0,
            1.0,
            InitialProfile::Checkerboard {
                background: 1.0,
                amplitude: 0.9,
            },
        )];
        let mut state = SimState::initial(&g, &species, 0);
        state.potential = robin_phi(&g, |_| 0.0);
        let safe = stability_dt(&state, &species, 1.0).unwrap();
        match advance_concentrations(&state, &species, 20.0 * safe) {
            Err(Error::NegativeConcentration {
                species: 0,
                suggested_dt,
                ..
            }) => assert!((suggested_dt - safe).abs() < 1e-12 * safe),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn slotboom_examples() {
        let g = make_grid(2, &[5, 5], &[1.0, 1.0]).unwrap();
        let species = vec![
            SpeciesSpec::blocking(1.0, 1.0, InitialProfile::Uniform { value: 1.0 }),
            SpeciesSpec::blocking(-2.0, 1.0, InitialProfile::Uniform { value: 1.0 }),
        ];
        let conc = vec![
            ScalarField::from_fn(&g, |x| 1.0 + x[0]),
            ScalarField::from_fn(&g, |x| 2.0 - x[1]),
        ];
        let zero = ScalarField::zeros(&g);
        assert_eq!(slotboom(&conc, &species, &zero).unwrap(), conc);

        let phi = ScalarField::from_fn(&g, |x| x[0] * 3.0 - x[1]);
        let eq: Vec<ScalarField> = species
            .iter()
            .map(|s| {
                let v = phi.values().iter().map(|p| (-s.valence * p).exp()).collect();
                ScalarField::from_values(&g, v).unwrap()
            })
            .collect();
        for t in slotboom(&eq, &species, &phi).unwrap() {
            for v in t.values() {
                assert!((v - 1.0).abs() < 1e-14);
            }
        }
        let big = ScalarField::constant(&g, 800.0);
        assert!(matches!(
            slotboom(&conc, &species, &big),
            Err(Error::Overflow { .. })
        ));
    }

    #[test]
    fn rho_sigma_reduces_to_heat_for_zero_valence() {
        let g = make_grid(2, &[8, 8], &[1.0, 1.0]).unwrap();
        let phi = robin_phi(&g, |x| x[0]);
        let u = StaggeredVectorField::zeros(&g);
        let rho = ScalarField::from_fn(&g, |x| (3.0 * x[0]).cos());
        let sigma = ScalarField::from_fn(&g, |x| 2.0 + x[1]);
        let dt = 1e-4;
        let (r1, s1) = rho_sigma_step(&rho, &sigma, &phi, &u, 0.0, 1.0, dt).unwrap();
        let heat = SpeciesSpec::blocking(0.0, 1.0, InitialProfile::Uniform { value: 1.0 });
        let table = DriftTable::new(&phi, 0.0).unwrap();
        for (orig, new) in [(&rho, &r1), (&sigma, &s1)] {
            let flux = species_fluxes(&heat, orig, &table, &u);
            let expect = apply_update(orig, &flux, dt).unwrap();
            for (a, b) in expect.values().iter().zip(new.values()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn common_transport_checks_hypothesis() {
        let mk = |z: f64, d: f64| SpeciesSpec::blocking(z, d, InitialProfile::Uniform { value: 1.0 });
        assert_eq!(
            common_transport(&[mk(1.0, 2.0), mk(-1.0, 2.0), mk(1.0, 2.0)]).unwrap(),
            (2.0, 1.0)
        );
        assert!(common_transport(&[mk(1.0, 2.0), mk(-1.0, 1.0)]).is_err());
        assert!(common_transport(&[mk(1.0, 2.0), mk(-2.0, 2.0)]).is_err());
    }
}
