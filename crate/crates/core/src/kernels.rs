//! Explicit finite-difference kernels for the coupled velocity, map and
//! density updates: entropy flux for the Burgers self-advection, first-order
//! upwinding for transport, donor-cell fluxes for the continuity equation,
//! and the step-size rules.

use crate::field::{jacobian_central, Axis, GridSpec, ScalarField, VectorField};

/// Smallest speed used when forming `1 / vmax`.
pub const VMAX_FLOOR: f64 = 1e-6;
/// Time step used in place of `1/(4α)` when `α = 0`.
pub const DT_CAP: f64 = 0.25;
/// Densities below this are treated as a CFL breach rather than roundoff.
pub const NEGATIVE_DENSITY_TOL: f64 = 1e-12;

/// Face-centred velocity: `vx_half` lives on the east face of each cell,
/// `vy_half` on the north face.
#[derive(Debug, Clone, PartialEq)]
pub struct StaggeredVelocity {
    grid: GridSpec,
    vx_half: Vec<f64>,
    vy_half: Vec<f64>,
}

impl StaggeredVelocity {
    /// Average neighbouring cell-centred values onto the faces between them.
    pub fn from_centered(v: &VectorField) -> Self {
        let g = *v.grid();
        let mut vx_half = vec![0.0; g.len()];
        let mut vy_half = vec![0.0; g.len()];
        for j in 0..g.height {
            let n = g.north(j);
            for i in 0..g.width {
                let k = g.index(i, j);
                vx_half[k] = 0.5 * (v.vx()[k] + v.vx()[g.index(g.east(i), j)]);
                vy_half[k] = 0.5 * (v.vy()[k] + v.vy()[g.index(i, n)]);
            }
        }
        Self { grid: g, vx_half, vy_half }
    }

    /// Uniform face velocity.
    pub fn constant(grid: GridSpec, cx: f64, cy: f64) -> Self {
        Self {
            grid,
            vx_half: vec![cx; grid.len()],
            vy_half: vec![cy; grid.len()],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn vx_half(&self) -> &[f64] {
        &self.vx_half
    }

    pub fn vy_half(&self) -> &[f64] {
        &self.vy_half
    }
}

/// Step sizes allowed by the stability rules at the current velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CflReport {
    /// Bound for plain gradient descent, `safety / (4α)`.
    pub dt_gd: f64,
    /// Transport bound for the accelerated velocity evolution.
    pub dt_agd: f64,
    /// `max_x max(|v(x)|, |Dv(x)|)`, floored at [`VMAX_FLOOR`].
    pub vmax: f64,
}

impl CflReport {
    /// Step actually taken by the accelerated schemes: the transport bound,
    /// never larger than the diffusion bound.
    pub fn dt_accelerated(&self) -> f64 {
        self.dt_agd.min(self.dt_gd)
    }
}

/// Entropy-satisfying discrete `∂(vc²)` along `axis`.
///
/// Uses the Engquist–Osher split flux `F(a, b) = max(a,0)² + min(b,0)²` so
/// that the result is `F(vc(x), vc(x+Δ)) - F(vc(x-Δ), vc(x))`, divided by
/// `dx`. The caller applies the factor ½.
pub fn burgers_flux_diff(vc: &ScalarField, axis: Axis) -> ScalarField {
    let g = *vc.grid();
    let v = vc.data();
    let inv = 1.0 / g.dx;
    let pos2 = |a: f64| {
        let m = a.max(0.0);
        m * m
    };
    let neg2 = |a: f64| {
        let m = a.min(0.0);
        m * m
    };
    let mut out = vec![0.0; g.len()];
    for j in 0..g.height {
        for i in 0..g.width {
            let k = g.index(i, j);
            let fwd = v[g.step(i, j, axis, true)];
            let bwd = v[g.step(i, j, axis, false)];
            out[k] = (pos2(v[k]) - neg2(v[k]) + neg2(fwd) - pos2(bwd)) * inv;
        }
    }
    ScalarField::new(g, out).expect("finite input gives finite flux")
}

/// `speed · ∂_axis q` with the one-sided difference taken from upwind.
pub(crate) fn upwind_derivative(g: &GridSpec, q: &[f64], speed: &[f64], axis: Axis) -> Vec<f64> {
    let inv = 1.0 / g.dx;
    let mut out = vec![0.0; g.len()];
    for j in 0..g.height {
        for i in 0..g.width {
            let k = g.index(i, j);
            let s = speed[k];
            out[k] = if s > 0.0 {
                s * (q[k] - q[g.step(i, j, axis, false)]) * inv
            } else if s < 0.0 {
                s * (q[g.step(i, j, axis, true)] - q[k]) * inv
            } else {
                0.0
            };
        }
    }
    out
}

/// Upwinded `v · ∇q`.
pub fn upwind_advect_scalar(q: &ScalarField, v: &VectorField) -> ScalarField {
    let g = *q.grid();
    let a = upwind_derivative(&g, q.data(), v.vx(), Axis::X);
    let b = upwind_derivative(&g, q.data(), v.vy(), Axis::Y);
    ScalarField::new(g, a.iter().zip(&b).map(|(x, y)| x + y).collect())
        .expect("finite input gives finite transport")
}

/// Result of one continuity update.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityUpdate {
    pub rho: ScalarField,
    /// Smallest density after the update.
    pub min_density: f64,
}

impl ContinuityUpdate {
    /// True when the update produced a density below `-1e-12`, which signals
    /// that the step exceeded the stability bound.
    pub fn is_flagged(&self) -> bool {
        self.min_density < -NEGATIVE_DENSITY_TOL
    }
}

/// Donor-cell flux through a face with normal velocity `u` between an
/// upstream-if-positive cell `left` and downstream cell `right`.
#[inline]
fn donor_flux(u: f64, left: f64, right: f64) -> f64 {
    if u > 0.0 {
        u * left
    } else if u < 0.0 {
        u * right
    } else {
        0.0
    }
}

/// Forward-Euler, flux-form update of `∂ρ/∂t + div(ρv) = 0`.
///
/// Each face flux is computed once and enters its two cells with opposite
/// signs, so total mass changes only by floating-point reassociation.
pub fn continuity_step(rho: &ScalarField, vs: &StaggeredVelocity, dt: f64) -> ContinuityUpdate {
    let g = *rho.grid();
    let r = rho.data();
    let scale = dt / g.dx;
    // Flux through the east and north face of every cell.
    let mut fe = vec![0.0; g.len()];
    let mut fn_ = vec![0.0; g.len()];
    for j in 0..g.height {
        let n = g.north(j);
        for i in 0..g.width {
            let k = g.index(i, j);
            fe[k] = donor_flux(vs.vx_half[k], r[k], r[g.index(g.east(i), j)]);
            fn_[k] = donor_flux(vs.vy_half[k], r[k], r[g.index(i, n)]);
        }
    }
    let mut out = vec![0.0; g.len()];
    let mut min_density = f64::INFINITY;
    for j in 0..g.height {
        let s = g.south(j);
        for i in 0..g.width {
            let k = g.index(i, j);
            let west = fe[g.index(g.west(i), j)];
            let south = fn_[g.index(i, s)];
            let net = (west - fe[k]) + (south - fn_[k]);
            let v = r[k] + scale * net;
            min_density = min_density.min(v);
            out[k] = v;
        }
    }
    ContinuityUpdate {
        rho: ScalarField::from_fn(g, |i, j| out[g.index(i, j)]),
        min_density,
    }
}

/// Largest of `|v(x)|₂` and the max-abs entry of `Dv(x)` over the grid.
pub fn velocity_bound(v: &VectorField) -> f64 {
    let jac = jacobian_central(v);
    let mut m: f64 = 0.0;
    for k in 0..v.grid().len() {
        let speed = v.vx()[k].hypot(v.vy()[k]);
        m = m.max(speed).max(jac.max_abs_entry(k));
    }
    m.max(VMAX_FLOOR)
}

/// Step-size bounds for gradient descent and the accelerated evolution.
pub fn cfl_timestep(v: &VectorField, alpha: f64, safety: f64) -> CflReport {
    let vmax = velocity_bound(v);
    let dt_gd = if alpha > 0.0 {
        safety / (4.0 * alpha)
    } else {
        safety * DT_CAP
    };
    let dt_agd = if alpha > 0.0 {
        safety * (1.0 / vmax).min(1.0 / (4.0 * alpha * vmax))
    } else {
        safety / vmax
    };
    CflReport { dt_gd, dt_agd, vmax }
}

/// Stable step for the leapfrog wave scheme, `safety · min(1, √(ρ₀/(4α)))`.
pub fn wave_timestep(rho0: f64, alpha: f64, safety: f64) -> f64 {
    if alpha > 0.0 {
        safety * (rho0 / (4.0 * alpha)).sqrt().min(1.0)
    } else {
        safety
    }
}
