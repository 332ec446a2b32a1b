//! Optimizer schemes over maps: the dissipative accelerated flow and its
//! non-dissipative and constant-density variants, plain gradient descent,
//! and the second-order damped wave form, together with the run loop.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::field::{
    self, compose_raw, laplacian_raw, Axis, GridSpec, MapField, ScalarField, VectorField,
};
use crate::kernels::{
    burgers_flux_diff, cfl_timestep, continuity_step, upwind_derivative, wave_timestep,
    StaggeredVelocity,
};
use crate::potential::{HsPotential, Potential};

/// Number of consecutive sub-tolerance map increments that ends a run.
pub const CONVERGENCE_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Accelerated descent with `(p+1)/t` friction.
    Agd,
    /// Accelerated flow without friction.
    AgdNoDissip,
    /// Constant-density geodesic flow with forcing.
    Epdiff,
    /// Riemannian L² gradient descent.
    Gd,
    /// Leapfrog integration of the damped wave equation in `φ`.
    Wave,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Agd,
        Scheme::AgdNoDissip,
        Scheme::Epdiff,
        Scheme::Gd,
        Scheme::Wave,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Agd => "agd",
            Scheme::AgdNoDissip => "agd_nodissip",
            Scheme::Epdiff => "epdiff",
            Scheme::Gd => "gd",
            Scheme::Wave => "wave",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scheme '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub scheme: Scheme,
    pub alpha: f64,
    /// Schedule exponent `p` of the friction `(p+1)/t` and forcing `C p² t^(p-2)`.
    pub p: u32,
    /// Schedule constant `C`.
    pub c: f64,
    pub safety: f64,
    /// Convergence threshold on the max map increment, in pixels.
    pub tol: f64,
    pub max_iters: usize,
    /// Floor for `ρ` in `1/ρ`; `None` means `1e-8 / (W·H)`.
    pub rho_floor: Option<f64>,
    /// Optional velocity diffusion coefficient.
    pub eps_visc: f64,
    /// Offset added to the evolution time when evaluating `t` in the schedule.
    pub t0: f64,
}

impl SolverConfig {
    pub fn new(scheme: Scheme, alpha: f64) -> Self {
        Self {
            scheme,
            alpha,
            p: 2,
            c: 0.25,
            safety: 0.9,
            tol: 1e-4,
            max_iters: 20_000,
            rho_floor: None,
            eps_visc: 0.0,
            t0: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.p < 1 {
            return bad("p must be >= 1".into());
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return bad(format!("C must be > 0, got {}", self.c));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return bad(format!("safety must lie in (0, 1), got {}", self.safety));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return bad(format!("tol must be > 0, got {}", self.tol));
        }
        if !(self.eps_visc.is_finite() && self.eps_visc >= 0.0) {
            return bad(format!("eps_visc must be >= 0, got {}", self.eps_visc));
        }
        if !(self.t0.is_finite() && self.t0 >= 0.0) {
            return bad(format!("t0 must be >= 0, got {}", self.t0));
        }
        if let Some(f) = self.rho_floor {
            if !(f.is_finite() && f > 0.0) {
                return bad(format!("rho_floor must be > 0, got {f}"));
            }
        }
        Ok(())
    }

    pub fn rho_floor_for(&self, grid: &GridSpec) -> f64 {
        self.rho_floor.unwrap_or(1e-8 / grid.len() as f64)
    }

    /// Friction coefficient `(p+1)/t` at schedule time `t`.
    fn friction(&self, t: f64) -> f64 {
        (self.p as f64 + 1.0) / t
    }

    /// Forcing weight `C p² t^(p-2)` at schedule time `t`.
    fn forcing(&self, t: f64) -> f64 {
        let p = self.p as f64;
        self.c * p * p * t.powi(self.p as i32 - 2)
    }
}

/// `(t, v, φ, ψ, ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t: f64,
    pub v: VectorField,
    pub phi: MapField,
    pub psi: MapField,
    pub rho: ScalarField,
}

impl SolverState {
    /// `φ = ψ = id`, `v = 0`, `ρ = 1/|Ω|`.
    pub fn initial(grid: GridSpec) -> Self {
        Self {
            t: 0.0,
            v: VectorField::zeros(grid),
            phi: MapField::identity(grid),
            psi: MapField::identity(grid),
            rho: ScalarField::constant(grid, 1.0 / grid.area()),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.phi.grid()
    }

    /// `Σ ρ dx²`.
    pub fn mass(&self) -> f64 {
        self.rho.integral()
    }
}

/// One row of a run's trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub t: f64,
    pub potential: f64,
    pub kinetic: f64,
    pub total: f64,
    pub dt: f64,
    /// Largest pointwise change of `φ` during the step, in pixels.
    pub map_increment: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StepError {
    #[error("density went negative ({min:e}); step exceeds the stability bound")]
    NegativeDensity { min: f64 },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
}

/// `Σ ½ ρ |v|² dx²`.
pub fn kinetic_energy(rho: &ScalarField, v: &VectorField) -> f64 {
    let s: f64 = rho
        .data()
        .iter()
        .zip(v.vx().iter().zip(v.vy()))
        .map(|(r, (a, b))| 0.5 * r * (a * a + b * b))
        .sum();
    s * rho.grid().cell_area()
}

/// `φ ← φ + dt · v∘φ`.
fn advance_forward_map(phi: &MapField, v: &VectorField, dt: f64) -> MapField {
    let g = *phi.grid();
    let vx = compose_raw(&g, v.vx(), phi);
    let vy = compose_raw(&g, v.vy(), phi);
    let ux = phi.ux().iter().zip(&vx).map(|(u, a)| u + dt * a).collect();
    let uy = phi.uy().iter().zip(&vy).map(|(u, a)| u + dt * a).collect();
    MapField::from_raw(g, ux, uy)
}

/// `ψ ← ψ - dt (Dψ) v` with `Dψ = I + Dw` and the `(Dw) v` part upwinded.
fn advance_inverse_map(psi: &MapField, v: &VectorField, dt: f64) -> MapField {
    let g = *psi.grid();
    let step = |w: &[f64], own: &[f64]| -> Vec<f64> {
        let ax = upwind_derivative(&g, w, v.vx(), Axis::X);
        let ay = upwind_derivative(&g, w, v.vy(), Axis::Y);
        (0..g.len())
            .map(|k| w[k] - dt * (own[k] + ax[k] + ay[k]))
            .collect()
    };
    MapField::from_raw(g, step(psi.ux(), v.vx()), step(psi.uy(), v.vy()))
}

fn check_finite(s: &SolverState) -> std::result::Result<(), StepError> {
    if !s.v.is_finite() {
        return Err(StepError::NonFinite("velocity"));
    }
    if !s.phi.is_finite() {
        return Err(StepError::NonFinite("forward map"));
    }
    if !s.psi.is_finite() {
        return Err(StepError::NonFinite("inverse map"));
    }
    if !s.rho.is_finite() {
        return Err(StepError::NonFinite("density"));
    }
    Ok(())
}

/// `(Dv)v` with the Burgers part `½∂ᵢ(vᵢ²)` from the entropy flux and the
/// cross terms upwinded.
fn material_advection(v: &VectorField) -> (Vec<f64>, Vec<f64>) {
    let g = *v.grid();
    let bx = burgers_flux_diff(&v.x_component(), Axis::X);
    let by = burgers_flux_diff(&v.y_component(), Axis::Y);
    let cx = upwind_derivative(&g, v.vx(), v.vy(), Axis::Y);
    let cy = upwind_derivative(&g, v.vy(), v.vx(), Axis::X);
    let ax = (0..g.len()).map(|k| 0.5 * bx.data()[k] + cx[k]).collect();
    let ay = (0..g.len()).map(|k| 0.5 * by.data()[k] + cy[k]).collect();
    (ax, ay)
}

/// Right-hand side of the constant-density geodesic equation with forcing:
/// `-(Dv)v - (∇v)v - v div v - g/ρ`.
///
/// `(Dv)v` uses the entropy and upwind kernels; the two remaining terms use
/// central differences.
pub fn epdiff_rhs(v: &VectorField, grad: &VectorField, rho: f64) -> VectorField {
    let g = *v.grid();
    let (ax, ay) = material_advection(v);
    let jac = field::jacobian_central(v);
    let div = field::divergence_central(v);
    let inv_rho = 1.0 / rho;
    let mut rx = Vec::with_capacity(g.len());
    let mut ry = Vec::with_capacity(g.len());
    for k in 0..g.len() {
        let (vx, vy) = (v.vx()[k], v.vy()[k]);
        // (∇v)v: transpose of the Jacobian applied to v.
        let tx = jac.j11[k] * vx + jac.j21[k] * vy;
        let ty = jac.j12[k] * vx + jac.j22[k] * vy;
        let d = div.data()[k];
        rx.push(-ax[k] - tx - vx * d - grad.vx()[k] * inv_rho);
        ry.push(-ay[k] - ty - vy * d - grad.vy()[k] * inv_rho);
    }
    VectorField::from_raw(g, rx, ry)
}

fn euler(v: &VectorField, rhs: (Vec<f64>, Vec<f64>), dt: f64) -> VectorField {
    let g = *v.grid();
    let (rx, ry) = rhs;
    VectorField::from_raw(
        g,
        v.vx().iter().zip(&rx).map(|(a, r)| a + dt * r).collect(),
        v.vy().iter().zip(&ry).map(|(a, r)| a + dt * r).collect(),
    )
}

/// Which momentum equation a step integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flow {
    /// Friction `(p+1)/t` and forcing `C p² t^(p-2)`.
    Dissipative,
    /// No friction, unit forcing.
    Conservative,
    /// Uniform density, extra geodesic terms.
    ConstantDensity,
}

impl Flow {
    fn of(scheme: Scheme) -> Option<Flow> {
        match scheme {
            Scheme::Agd => Some(Flow::Dissipative),
            Scheme::AgdNoDissip => Some(Flow::Conservative),
            Scheme::Epdiff => Some(Flow::ConstantDensity),
            Scheme::Gd | Scheme::Wave => None,
        }
    }

    fn evolves_density(self) -> bool {
        self != Flow::ConstantDensity
    }
}

/// Momentum right-hand side split into the part that does not depend on the
/// schedule time and the force it scales, so that trying several step sizes
/// costs one pass each instead of a full stencil evaluation.
struct MomentumRhs {
    flow: Flow,
    /// `-(Dv)v + ε Δv`, plus the geodesic and forcing terms for
    /// [`Flow::ConstantDensity`].
    drift: (Vec<f64>, Vec<f64>),
    /// `g / max(ρ, floor)`; empty for [`Flow::ConstantDensity`].
    push: (Vec<f64>, Vec<f64>),
}

impl MomentumRhs {
    fn new(s: &SolverState, grad: &VectorField, cfg: &SolverConfig, flow: Flow) -> Self {
        let g = *s.grid();
        let n = g.len();
        let (mut dx, mut dy, push) = if flow == Flow::ConstantDensity {
            let r = epdiff_rhs(&s.v, grad, 1.0 / g.area());
            (r.vx, r.vy, (Vec::new(), Vec::new()))
        } else {
            let (ax, ay) = material_advection(&s.v);
            let floor = cfg.rho_floor_for(&g);
            let rho = s.rho.data();
            let inv = |k: usize| 1.0 / rho[k].max(floor);
            let px = (0..n).map(|k| grad.vx()[k] * inv(k)).collect();
            let py = (0..n).map(|k| grad.vy()[k] * inv(k)).collect();
            (
                ax.into_iter().map(|a| -a).collect::<Vec<_>>(),
                ay.into_iter().map(|a| -a).collect::<Vec<_>>(),
                (px, py),
            )
        };
        if cfg.eps_visc > 0.0 {
            let lx = laplacian_raw(&g, s.v.vx());
            let ly = laplacian_raw(&g, s.v.vy());
            for k in 0..n {
                dx[k] += cfg.eps_visc * lx[k];
                dy[k] += cfg.eps_visc * ly[k];
            }
        }
        Self {
            flow,
            drift: (dx, dy),
            push,
        }
    }

    /// `∂ₜv` with the schedule evaluated for a step of size `dt`.
    fn at(&self, s: &SolverState, cfg: &SolverConfig, dt: f64) -> (Vec<f64>, Vec<f64>) {
        let (friction, forcing) = match self.flow {
            Flow::Dissipative => {
                let t_eval = cfg.t0 + s.t + dt;
                (cfg.friction(t_eval), cfg.forcing(t_eval))
            }
            Flow::Conservative => (0.0, 1.0),
            Flow::ConstantDensity => return self.drift.clone(),
        };
        let comb = |d: &[f64], v: &[f64], p: &[f64]| -> Vec<f64> {
            (0..d.len())
                .map(|k| d[k] - friction * v[k] - forcing * p[k])
                .collect()
        };
        (
            comb(&self.drift.0, s.v.vx(), &self.push.0),
            comb(&self.drift.1, s.v.vy(), &self.push.1),
        )
    }
}

/// Smallest density the forcing divides by.
fn effective_min_density(s: &SolverState, cfg: &SolverConfig, flow: Flow) -> f64 {
    if flow.evolves_density() {
        s.rho.min().max(cfg.rho_floor_for(s.grid()))
    } else {
        1.0 / s.grid().area()
    }
}

/// Step size of an accelerated scheme.
///
/// Three bounds apply. The transport bound on the current velocity comes from
/// [`cfl_timestep`]. The regularizer turns the momentum equation into a wave
/// system with speed `√(α/ρ)`, so the wave bound is taken at the smallest
/// density. Finally the velocity that moves the maps is the updated one, so
/// `dt² · max|∂ₜv|` must stay inside the transport budget as well.
fn accelerated_dt(s: &SolverState, rhs: &MomentumRhs, cfg: &SolverConfig) -> f64 {
    let dt0 = cfl_timestep(&s.v, cfg.alpha, cfg.safety)
        .dt_accelerated()
        .min(wave_timestep(effective_min_density(s, cfg, rhs.flow), cfg.alpha, cfg.safety));
    let (rx, ry) = rhs.at(s, cfg, dt0);
    let amax = rx
        .iter()
        .zip(&ry)
        .map(|(a, b)| a.hypot(*b))
        .fold(0.0, f64::max);
    let budget = if cfg.alpha > 0.0 {
        cfg.safety * (1.0f64).min(1.0 / (4.0 * cfg.alpha))
    } else {
        cfg.safety
    };
    if amax > 0.0 {
        dt0.min((budget / amax).sqrt())
    } else {
        dt0
    }
}

/// One step of an accelerated scheme with a given gradient and `dt`.
///
/// The velocity is advanced first; `ψ`, `φ` and `ρ` are then transported by
/// the new velocity. Reading the old velocity instead makes every
/// regularizer-driven oscillation grow, whatever the step size.
fn momentum_step(
    s: &SolverState,
    rhs: &MomentumRhs,
    cfg: &SolverConfig,
    dt: f64,
) -> std::result::Result<SolverState, StepError> {
    let flow = rhs.flow;
    let v_new = euler(&s.v, rhs.at(s, cfg, dt), dt);
    let psi = advance_inverse_map(&s.psi, &v_new, dt);
    let phi = advance_forward_map(&s.phi, &v_new, dt);
    let rho = if flow.evolves_density() {
        let up = continuity_step(&s.rho, &StaggeredVelocity::from_centered(&v_new), dt);
        if up.is_flagged() {
            return Err(StepError::NegativeDensity {
                min: up.min_density,
            });
        }
        up.rho
    } else {
        s.rho.clone()
    };
    let next = SolverState {
        t: s.t + dt,
        v: v_new,
        phi,
        psi,
        rho,
    };
    check_finite(&next)?;
    Ok(next)
}

fn momentum_step_auto<P: Potential + ?Sized>(
    s: &SolverState,
    pot: &P,
    cfg: &SolverConfig,
    flow: Flow,
) -> std::result::Result<SolverState, StepError> {
    let rhs = MomentumRhs::new(s, &pot.grad_pushforward(&s.phi), cfg, flow);
    let dt = accelerated_dt(s, &rhs, cfg);
    momentum_step(s, &rhs, cfg, dt)
}

/// Time step the given scheme would take from `s`.
pub fn step_size<P: Potential + ?Sized>(s: &SolverState, pot: &P, cfg: &SolverConfig) -> f64 {
    match Flow::of(cfg.scheme) {
        Some(flow) => accelerated_dt(s, &MomentumRhs::new(s, &pot.grad_pushforward(&s.phi), cfg, flow), cfg),
        None if cfg.scheme == Scheme::Gd => cfl_timestep(&s.v, cfg.alpha, cfg.safety).dt_gd,
        None => wave_timestep(1.0 / s.grid().area(), cfg.alpha, cfg.safety),
    }
}

/// One step of the dissipative accelerated flow with an explicit `dt`.
pub fn agd_step_dt<P: Potential + ?Sized>(
    s: &SolverState,
    pot: &P,
    cfg: &SolverConfig,
    dt: f64,
) -> std::result::Result<SolverState, StepError> {
    let rhs = MomentumRhs::new(s, &pot.grad_pushforward(&s.phi), cfg, Flow::Dissipative);
    momentum_step(s, &rhs, cfg, dt)
}

/// One step of the dissipative accelerated flow.
pub fn agd_step<P: Potential + ?Sized>(
    s: &SolverState,
    pot: &P,
    cfg: &SolverConfig,
) -> std::result::Result<SolverState, StepError> {
    momentum_step_auto(s, pot, cfg, Flow::Dissipative)
}

pub fn nondissip_step_dt<P: Potential + ?Sized>(
    s: &SolverState,
    pot: &P,
    cfg: &SolverConfig,
    dt: f64,
) -> std::result::Result<SolverState, StepError> {
    let rhs = MomentumRhs::new(s, &pot.grad_pushforward(&s.phi), cfg, Flow::Conservative);
    momentum_step(s, &rhs, cfg, dt)
}

/// One step of the accelerated flow without friction or schedule factors.
pub fn nondissip_step<P: Potential + ?Sized>(
    s: &SolverState,
    pot: &P,
    cfg: &SolverConfig,
) -> std::result::Result<SolverState, StepError> {
    momentum_step_auto(s, pot, cfg, Flow::Conservative)
}

pub fn epdiff_step_dt<P: Potential + ?Sized>(
    s: &SolverState,
    pot: &P,
    cfg: &SolverConfig,
    dt: f64,
) -> std::result::Result<SolverState, StepError> {
    let rhs = MomentumRhs::new(s, &pot.grad_pushforward(&s.phi), cfg, Flow::ConstantDensity);
    momentum_step(s, &rhs, cfg, dt)
}

/// One step of the constant-density geodesic flow with forcing. The density
/// stays uniform.
pub fn epdiff_step<P: Potential + ?Sized>(
    s: &SolverState,
    pot: &P,
    cfg: &SolverConfig,
) -> std::result::Result<SolverState, StepError> {
    momentum_step_auto(s, pot, cfg, Flow::ConstantDensity)
}

pub fn gd_step_dt<P: Potential + ?Sized>(
    s: &SolverState,
    pot: &P,
    dt: f64,
) -> std::result::Result<SolverState, StepError> {
    let v = pot.grad_pushforward(&s.phi).scaled(-1.0);
    let next = SolverState {
        t: s.t + dt,
        phi: advance_forward_map(&s.phi, &v, dt),
        psi: advance_inverse_map(&s.psi, &v, dt),
        rho: s.rho.clone(),
        v,
    };
    check_finite(&next)?;
    Ok(next)
}

/// One step of gradient descent: `v = -∇U`, maps transported by `v`, no
/// momentum and no density evolution.
pub fn gd_step<P: Potential + ?Sized>(
    s: &SolverState,
    pot: &P,
    cfg: &SolverConfig,
) -> std::result::Result<SolverState, StepError> {
    let dt = cfl_timestep(&s.v, cfg.alpha, cfg.safety).dt_gd;
    gd_step_dt(s, pot, dt)
}

/// Leapfrog step of `φ_tt + (p+1)/t φ_t + C p² t^(p-2) ∇̃U(φ)/ρ₀ = 0`.
///
/// `t` is the schedule time at which the friction is evaluated; it must be
/// positive.
pub fn wave_step_dt<P: Potential + ?Sized>(
    phi_prev: &MapField,
    phi_curr: &MapField,
    t: f64,
    pot: &P,
    cfg: &SolverConfig,
    dt: f64,
) -> std::result::Result<MapField, StepError> {
    let g = *phi_curr.grid();
    let rho0 = 1.0 / g.area();
    let h = 0.5 * cfg.friction(t) * dt;
    let keep = (1.0 - h) / (1.0 + h);
    let force = dt * dt * cfg.forcing(t) / (rho0 * (1.0 + h));
    let grad = pot.grad_unwarped(phi_curr);
    let step = |cur: &[f64], prev: &[f64], gr: &[f64]| -> Vec<f64> {
        (0..g.len())
            .map(|k| cur[k] + (cur[k] - prev[k]) * keep - force * gr[k])
            .collect()
    };
    let next = MapField::from_raw(
        g,
        step(phi_curr.ux(), phi_prev.ux(), grad.vx()),
        step(phi_curr.uy(), phi_prev.uy(), grad.vy()),
    );
    if next.is_finite() {
        Ok(next)
    } else {
        Err(StepError::NonFinite("forward map"))
    }
}

/// Leapfrog step with the wave stability step size.
pub fn wave_step<P: Potential + ?Sized>(
    phi_prev: &MapField,
    phi_curr: &MapField,
    t: f64,
    pot: &P,
    cfg: &SolverConfig,
) -> std::result::Result<MapField, StepError> {
    let dt = wave_timestep(1.0 / phi_curr.grid().area(), cfg.alpha, cfg.safety);
    wave_step_dt(phi_prev, phi_curr, t, pot, cfg, dt)
}

/// Invert a map by the fixed-point iteration `w(y) = -u(y + w(y))`.
pub fn invert_map(phi: &MapField, iterations: usize) -> MapField {
    let g = *phi.grid();
    let mut psi = MapField::from_raw(
        g,
        phi.ux().iter().map(|u| -u).collect(),
        phi.uy().iter().map(|u| -u).collect(),
    );
    for _ in 0..iterations {
        let ux = compose_raw(&g, phi.ux(), &psi);
        let uy = compose_raw(&g, phi.uy(), &psi);
        psi = MapField::from_raw(
            g,
            ux.into_iter().map(|u| -u).collect(),
            uy.into_iter().map(|u| -u).collect(),
        );
    }
    psi
}

/// Mean of `|ψ(φ(x)) - x|` over the grid.
pub fn inverse_consistency(phi: &MapField, psi: &MapField) -> Result<f64> {
    phi.grid().check_same(psi.grid())?;
    let g = *phi.grid();
    let wx = compose_raw(&g, psi.ux(), phi);
    let wy = compose_raw(&g, psi.uy(), phi);
    let total: f64 = (0..g.len())
        .map(|k| (phi.ux()[k] + wx[k]).hypot(phi.uy()[k] + wy[k]))
        .sum();
    Ok(total / g.len() as f64)
}

/// Final state of a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub phi: MapField,
    pub psi: MapField,
    pub state: SolverState,
    /// Row 0 describes the initial state; row `k` the state after step `k`.
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
}

impl RunOutcome {
    /// Steps taken.
    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }
}

/// A run that had to stop because a step failed twice.
#[derive(Debug, Clone, Error)]
#[error("run aborted at iteration {iteration}: {error}")]
pub struct RunError {
    pub error: StepError,
    pub iteration: usize,
    pub last_state: Box<SolverState>,
    pub trace: Vec<TraceRecord>,
}

/// Register `I₁` onto `I₀` with the Horn–Schunck potential.
pub fn run(
    i0: &ScalarField,
    i1: &ScalarField,
    cfg: &SolverConfig,
) -> Result<std::result::Result<RunOutcome, RunError>> {
    cfg.validate()?;
    let pot = HsPotential::new(i0.clone(), i1.clone(), cfg.alpha)?;
    Ok(run_with(&pot, cfg))
}

/// Iterate a scheme from the identity until the map settles or the
/// iteration cap is hit.
pub fn run_with<P: Potential + ?Sized>(
    pot: &P,
    cfg: &SolverConfig,
) -> std::result::Result<RunOutcome, RunError> {
    Runner::new(pot, cfg).run_to_end()
}

/// Iteration driver, also usable one step at a time.
pub struct Runner<'a, P: Potential + ?Sized> {
    pot: &'a P,
    cfg: SolverConfig,
    state: SolverState,
    /// Previous forward map, used by the wave scheme.
    phi_prev: MapField,
    trace: Vec<TraceRecord>,
    quiet_steps: usize,
}

impl<'a, P: Potential + ?Sized> Runner<'a, P> {
    pub fn new(pot: &'a P, cfg: &SolverConfig) -> Self {
        let state = SolverState::initial(*pot.grid());
        let potential = pot.value(&state.phi);
        let trace = vec![TraceRecord {
            iter: 0,
            t: 0.0,
            potential,
            kinetic: 0.0,
            total: potential,
            dt: 0.0,
            map_increment: 0.0,
        }];
        Self {
            pot,
            cfg: cfg.clone(),
            phi_prev: state.phi.clone(),
            state,
            trace,
            quiet_steps: 0,
        }
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn is_converged(&self) -> bool {
        self.quiet_steps >= CONVERGENCE_WINDOW
    }

    /// Attempt a step of size `dt`; `rhs` is present for the momentum schemes.
    fn try_step(
        &self,
        rhs: Option<&MomentumRhs>,
        dt: f64,
    ) -> std::result::Result<(SolverState, MapField), StepError> {
        let s = &self.state;
        let cfg = &self.cfg;
        let prev = s.phi.clone();
        if let Some(rhs) = rhs {
            return momentum_step(s, rhs, cfg, dt).map(|n| (n, prev));
        }
        if cfg.scheme == Scheme::Gd {
            return gd_step_dt(s, self.pot, dt).map(|n| (n, prev));
        }
        let t_eval = cfg.t0 + s.t + dt;
        let phi = wave_step_dt(&self.phi_prev, &s.phi, t_eval, self.pot, cfg, dt)?;
        let g = *phi.grid();
        // Lagrangian velocity of each particle over the step.
        let v = VectorField::from_raw(
            g,
            phi.ux().iter().zip(s.phi.ux()).map(|(a, b)| (a - b) / dt).collect(),
            phi.uy().iter().zip(s.phi.uy()).map(|(a, b)| (a - b) / dt).collect(),
        );
        let next = SolverState {
            t: s.t + dt,
            v,
            phi,
            psi: s.psi.clone(),
            rho: s.rho.clone(),
        };
        Ok((next, prev))
    }

    /// Take one step, halving `dt` once if the first attempt fails.
    pub fn step(&mut self) -> std::result::Result<&TraceRecord, StepError> {
        let rhs = Flow::of(self.cfg.scheme).map(|flow| {
            let grad = self.pot.grad_pushforward(&self.state.phi);
            MomentumRhs::new(&self.state, &grad, &self.cfg, flow)
        });
        let dt = match &rhs {
            Some(r) => accelerated_dt(&self.state, r, &self.cfg),
            None => step_size(&self.state, self.pot, &self.cfg),
        };
        let (next, prev, dt) = match self.try_step(rhs.as_ref(), dt) {
            Ok((n, p)) => (n, p, dt),
            Err(_) => {
                let half = 0.5 * dt;
                let (n, p) = self.try_step(rhs.as_ref(), half)?;
                (n, p, half)
            }
        };
        let increment = next.phi.max_distance(&self.state.phi);
        let potential = self.pot.value(&next.phi);
        let kinetic = kinetic_energy(&next.rho, &next.v);
        let iter = self.trace.len();
        self.trace.push(TraceRecord {
            iter,
            t: next.t,
            potential,
            kinetic,
            total: potential + kinetic,
            dt,
            map_increment: increment,
        });
        if increment < self.cfg.tol {
            self.quiet_steps += 1;
        } else {
            self.quiet_steps = 0;
        }
        self.phi_prev = prev;
        self.state = next;
        Ok(self.trace.last().expect("just pushed"))
    }

    /// Step until convergence or the iteration cap.
    pub fn run_to_end(mut self) -> std::result::Result<RunOutcome, RunError> {
        while self.trace.len() <= self.cfg.max_iters && !self.is_converged() {
            if let Err(error) = self.step() {
                return Err(RunError {
                    error,
                    iteration: self.trace.len(),
                    last_state: Box::new(self.state),
                    trace: self.trace,
                });
            }
        }
        Ok(self.finish())
    }

    /// Run exactly `n` more steps regardless of convergence.
    pub fn run_steps(mut self, n: usize) -> std::result::Result<RunOutcome, RunError> {
        for _ in 0..n {
            if let Err(error) = self.step() {
                return Err(RunError {
                    error,
                    iteration: self.trace.len(),
                    last_state: Box::new(self.state),
                    trace: self.trace,
                });
            }
        }
        Ok(self.finish())
    }

    fn finish(self) -> RunOutcome {
        let converged = self.is_converged();
        let mut state = self.state;
        if self.cfg.scheme == Scheme::Wave {
            state.psi = invert_map(&state.phi, 50);
        }
        RunOutcome {
            phi: state.phi.clone(),
            psi: state.psi.clone(),
            state,
            trace: self.trace,
            converged,
        }
    }
}
