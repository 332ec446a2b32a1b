//! Potential energies over maps and their functional gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{
    self, bilinear_gradient_raw, compose_raw, det_jacobian, forward_diff, laplacian_map, Axis,
    GridSpec, MapField, ScalarField, VectorField,
};

/// An objective `U(φ)` that any optimizer scheme can drive.
///
/// `grad_unwarped` is the L² gradient with respect to perturbations of `φ`
/// measured on the fixed domain; `grad_warped` is the same gradient pushed to
/// the warped domain, `∇U = [∇̃U ∘ ψ] det ∇ψ`.
pub trait Potential: Sync {
    fn grid(&self) -> &GridSpec;

    fn value(&self, phi: &MapField) -> f64;

    fn grad_unwarped(&self, phi: &MapField) -> VectorField;

    fn grad_warped(&self, phi: &MapField, psi: &MapField) -> VectorField;

    /// The gradient on the warped domain as the optimizer schemes see it: an
    /// unwarped gradient scattered through `φ` with the transpose of the
    /// bilinear sampling that moves `φ`. The default scatters
    /// `grad_unwarped`.
    ///
    /// Matches `grad_warped` as the grid is refined. Unlike it, the stiffness
    /// it induces on the map update is symmetric, so the discretization never
    /// feeds oscillations of the accelerated schemes.
    fn grad_pushforward(&self, phi: &MapField) -> VectorField {
        let g = self.grad_unwarped(phi);
        field::splat_vector(&g, phi).expect("potential and map share a grid")
    }
}

/// Horn–Schunck style registration energy: squared intensity residual of
/// `I₁ ∘ φ` against `I₀` plus `α/2 ‖∇(φ - id)‖²`.
#[derive(Debug, Clone)]
pub struct HsPotential {
    i0: ScalarField,
    i1: ScalarField,
    alpha: f64,
    grad_i1: VectorField,
}

impl HsPotential {
    pub fn new(i0: ScalarField, i1: ScalarField, alpha: f64) -> Result<Self> {
        i0.grid().check_same(i1.grid())?;
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be finite and non-negative, got {alpha}"
            )));
        }
        let grad_i1 = field::grad_central(&i1);
        Ok(Self {
            i0,
            i1,
            alpha,
            grad_i1,
        })
    }

    pub fn i0(&self) -> &ScalarField {
        &self.i0
    }

    pub fn i1(&self) -> &ScalarField {
        &self.i1
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `I₁ ∘ φ - I₀` per pixel.
    pub fn residual(&self, phi: &MapField) -> ScalarField {
        let g = *self.i0.grid();
        let warped = compose_raw(&g, self.i1.data(), phi);
        let data = warped
            .iter()
            .zip(self.i0.data())
            .map(|(a, b)| a - b)
            .collect();
        ScalarField::new(g, data).expect("finite inputs give finite residual")
    }

    /// Data-fidelity part `½ Σ (I₁∘φ - I₀)² dx²`.
    pub fn data_term(&self, phi: &MapField) -> f64 {
        let r = self.residual(phi);
        0.5 * r.data().iter().map(|v| v * v).sum::<f64>() * r.grid().cell_area()
    }

    /// Regularity part `½ α Σ |∇u|² dx²`.
    ///
    /// The displacement Jacobian uses forward differences so that the exact
    /// gradient of this sum is the five-point `-α Δu`.
    pub fn regularity_term(&self, phi: &MapField) -> f64 {
        if self.alpha == 0.0 {
            return 0.0;
        }
        let g = *phi.grid();
        let s: f64 = [phi.ux(), phi.uy()]
            .into_iter()
            .flat_map(|u| [forward_diff(&g, u, Axis::X), forward_diff(&g, u, Axis::Y)])
            .map(|d| d.iter().map(|v| v * v).sum::<f64>())
            .sum();
        0.5 * self.alpha * s * g.cell_area()
    }

    /// `(I₁∘φ - I₀)·(∇I₁)∘φ - αΔu` with `∇I₁` taken by central differences
    /// on the grid and then sampled at `φ(x)`.
    ///
    /// This is what the optimizer schemes push forward. Its data force reaches
    /// one pixel further than the derivative of the bilinear interpolant, so
    /// flat image regions next to an edge still feel the edge. It is not the
    /// exact derivative of [`Potential::value`]; use
    /// [`Potential::grad_unwarped`] for that.
    pub fn grad_unwarped_sampled(&self, phi: &MapField) -> VectorField {
        self.unwarped_with(phi, |px, py| field::sample_vector(&self.grad_i1, px, py))
    }

    fn unwarped_with(
        &self,
        phi: &MapField,
        image_gradient: impl Fn(f64, f64) -> (f64, f64),
    ) -> VectorField {
        let g = *self.i0.grid();
        let lap = laplacian_map(phi);
        let mut gx = Vec::with_capacity(g.len());
        let mut gy = Vec::with_capacity(g.len());
        for (i, j) in g.pixels() {
            let k = g.index(i, j);
            let (px, py) = phi.point(i, j);
            let r = field::sample_bilinear(&self.i1, px, py) - self.i0.data()[k];
            let (dx1, dy1) = image_gradient(px, py);
            gx.push(r * dx1 - self.alpha * lap.vx()[k]);
            gy.push(r * dy1 - self.alpha * lap.vy()[k]);
        }
        VectorField::from_raw(g, gx, gy)
    }
}

impl Potential for HsPotential {
    fn grid(&self) -> &GridSpec {
        self.i0.grid()
    }

    fn value(&self, phi: &MapField) -> f64 {
        self.data_term(phi) + self.regularity_term(phi)
    }

    fn grad_unwarped(&self, phi: &MapField) -> VectorField {
        self.unwarped_with(phi, |px, py| {
            bilinear_gradient_raw(self.i1.grid(), self.i1.data(), px, py)
        })
    }

    fn grad_pushforward(&self, phi: &MapField) -> VectorField {
        let g = self.grad_unwarped_sampled(phi);
        field::splat_vector(&g, phi).expect("potential and map share a grid")
    }

    fn grad_warped(&self, phi: &MapField, psi: &MapField) -> VectorField {
        let g = *self.i0.grid();
        let i0_psi = compose_raw(&g, self.i0.data(), psi);
        let det = det_jacobian(psi);
        let (lap_x, lap_y) = if self.alpha == 0.0 {
            (vec![0.0; g.len()], vec![0.0; g.len()])
        } else {
            let lap = laplacian_map(phi);
            (compose_raw(&g, lap.vx(), psi), compose_raw(&g, lap.vy(), psi))
        };
        let mut gx = Vec::with_capacity(g.len());
        let mut gy = Vec::with_capacity(g.len());
        for k in 0..g.len() {
            let r = self.i1.data()[k] - i0_psi[k];
            let d = det.data()[k];
            gx.push((r * self.grad_i1.vx()[k] - self.alpha * lap_x[k]) * d);
            gy.push((r * self.grad_i1.vy()[k] - self.alpha * lap_y[k]) * d);
        }
        VectorField::from_raw(g, gx, gy)
    }
}

/// Shift a map's displacement by `eps · dphi`.
pub fn perturb(phi: &MapField, dphi: &VectorField, eps: f64) -> MapField {
    let ux = phi.ux().iter().zip(dphi.vx()).map(|(u, d)| u + eps * d).collect();
    let uy = phi.uy().iter().zip(dphi.vy()).map(|(u, d)| u + eps * d).collect();
    MapField::from_raw(*phi.grid(), ux, uy)
}

/// Relative mismatch between a central finite difference of `U` along
/// `dphi` and the inner product `⟨∇̃U, δφ⟩`.
pub fn grad_check<P: Potential + ?Sized>(p: &P, phi: &MapField, dphi: &VectorField, eps: f64) -> f64 {
    let (fd, ip) = directional_derivatives(p, phi, dphi, eps);
    (fd - ip).abs() / fd.abs().max(ip.abs()).max(1e-12)
}

/// Largest [`grad_check`] error over `pairs` seeded random problems on a
/// `side × side` grid: smooth random images, a random map and a random
/// per-pixel direction.
///
/// Sample points of the map are kept at least `1e-3` px away from cell
/// edges, where the bilinear interpolant has a kink and a central difference
/// straddling it would not measure a derivative.
pub fn gradient_oracle(side: usize, alpha: f64, seed: u64, pairs: usize, eps: f64) -> Result<f64> {
    let grid = GridSpec::square(side)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let i0 = random_smooth_image(grid, &mut rng);
        let i1 = random_smooth_image(grid, &mut rng);
        let pot = HsPotential::new(i0, i1, alpha)?;
        let amp = rng.gen_range(0.5..3.0);
        let (ax, ay) = (random_smooth_image(grid, &mut rng), random_smooth_image(grid, &mut rng));
        let phi = MapField::from_fn(grid, |i, j| {
            let k = grid.index(i, j);
            let ux = away_from_edge(i as f64, amp * (ax.data()[k] - 0.5) + rng.gen_range(-0.3..0.3));
            let uy = away_from_edge(j as f64, amp * (ay.data()[k] - 0.5) + rng.gen_range(-0.3..0.3));
            (ux, uy)
        });
        let dphi = VectorField::from_fn(grid, |_, _| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        worst = worst.max(grad_check(&pot, &phi, &dphi, eps));
    }
    Ok(worst)
}

/// Nudge `u` so that `x + u` sits at least `1e-3` from an integer.
fn away_from_edge(x: f64, u: f64) -> f64 {
    let p = x + u;
    let frac = p - p.round();
    if frac.abs() < 1e-3 {
        u + if frac >= 0.0 { 2e-3 } else { -2e-3 }
    } else {
        u
    }
}

/// A few random low-frequency modes, scaled into `[0, 1]`.
fn random_smooth_image(grid: GridSpec, rng: &mut ChaCha8Rng) -> ScalarField {
    let tau = std::f64::consts::TAU;
    let modes: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(1..4) as f64,
                rng.gen_range(0..4) as f64,
                rng.gen_range(0.0..tau),
                rng.gen_range(0.2..1.0),
            )
        })
        .collect();
    let total: f64 = modes.iter().map(|m| m.3).sum();
    let (w, h) = (grid.width as f64, grid.height as f64);
    ScalarField::from_fn(grid, |i, j| {
        let s: f64 = modes
            .iter()
            .map(|&(kx, ky, ph, a)| a * (tau * (kx * i as f64 / w + ky * j as f64 / h) + ph).sin())
            .sum();
        0.5 + 0.5 * s / total
    })
}

/// `(finite difference, analytic inner product)` of `U` along `dphi`.
pub fn directional_derivatives<P: Potential + ?Sized>(
    p: &P,
    phi: &MapField,
    dphi: &VectorField,
    eps: f64,
) -> (f64, f64) {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let up = p.value(&perturb(phi, dphi, eps));
    let down = p.value(&perturb(phi, dphi, -eps));
    let fd = (up - down) / (2.0 * eps);
    let ip = p.grad_unwarped(phi).dot(dphi);
    (fd, ip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{grad_central, warp_vector};

    fn square_image(grid: GridSpec, x0: usize, y0: usize, side: usize) -> ScalarField {
        ScalarField::from_fn(grid, |i, j| {
            if (x0..x0 + side).contains(&i) && (y0..y0 + side).contains(&j) {
                1.0
            } else {
                0.0
            }
        })
    }

    fn smooth_image(grid: GridSpec, phase: f64) -> ScalarField {
        let (w, h) = (grid.width as f64, grid.height as f64);
        ScalarField::from_fn(grid, |i, j| {
            let x = 2.0 * std::f64::consts::PI * i as f64 / w;
            let y = 2.0 * std::f64::consts::PI * j as f64 / h;
            0.5 + 0.25 * (x + phase).sin() * (y - 0.3 * phase).cos() + 0.2 * (2.0 * y + x).sin() * 0.5
        })
    }

    #[test]
    fn value_zero_cases() {
        let grid = GridSpec::square(32).unwrap();
        let a = square_image(grid, 8, 8, 10);
        let p = HsPotential::new(a.clone(), a.clone(), 3.0).unwrap();
        assert_eq!(p.value(&MapField::identity(grid)), 0.0);

        let b = a.shifted(5, 2);
        let q = HsPotential::new(a, b, 3.0).unwrap();
        assert_eq!(q.value(&MapField::translation(grid, 5.0, 2.0)), 0.0);
    }

    #[test]
    fn value_of_constant_images() {
        let grid = GridSpec::square(16).unwrap();
        for alpha in [0.0, 1.0, 7.5] {
            let p = HsPotential::new(ScalarField::zeros(grid), ScalarField::constant(grid, 1.0), alpha)
                .unwrap();
            assert_eq!(p.value(&MapField::identity(grid)), 0.5 * 256.0);
        }
    }

    #[test]
    fn rejects_negative_alpha_and_mismatch() {
        let a = ScalarField::zeros(GridSpec::square(8).unwrap());
        let b = ScalarField::zeros(GridSpec::square(9).unwrap());
        assert!(HsPotential::new(a.clone(), a.clone(), -1.0).is_err());
        assert!(matches!(HsPotential::new(a, b, 1.0), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn gradients_at_identity() {
        let grid = GridSpec::square(24).unwrap();
        let i0 = square_image(grid, 5, 6, 9);
        let i1 = smooth_image(grid, 0.4);
        let id = MapField::identity(grid);

        let same = HsPotential::new(i0.clone(), i0.clone(), 2.0).unwrap();
        assert_eq!(same.grad_unwarped(&id).max_norm(), 0.0);
        assert_eq!(same.grad_warped(&id, &id).max_norm(), 0.0);

        let p = HsPotential::new(i0.clone(), i1.clone(), 0.0).unwrap();
        let gi = grad_central(&i1);
        let un = p.grad_unwarped(&id);
        for k in 0..grid.len() {
            let r = i1.data()[k] - i0.data()[k];
            assert!((un.vx()[k] - r * gi.vx()[k]).abs() < 1e-15);
            assert!((un.vy()[k] - r * gi.vy()[k]).abs() < 1e-15);
        }

        let p = HsPotential::new(i0, i1, 4.0).unwrap();
        let phi = MapField::identity(grid);
        let a = p.grad_unwarped(&phi);
        let b = p.grad_warped(&phi, &phi);
        for k in 0..grid.len() {
            assert!((a.vx()[k] - b.vx()[k]).abs() <= 1e-12);
            assert!((a.vy()[k] - b.vy()[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_direction_gives_zero_error() {
        let grid = GridSpec::square(16).unwrap();
        let p = HsPotential::new(smooth_image(grid, 0.0), smooth_image(grid, 1.0), 1.0).unwrap();
        let e = grad_check(&p, &MapField::identity(grid), &VectorField::zeros(grid), 1e-5);
        assert_eq!(e, 0.0);
    }

    #[test]
    fn aligned_direction_has_positive_inner_product() {
        let grid = GridSpec::square(16).unwrap();
        let p = HsPotential::new(smooth_image(grid, 0.0), smooth_image(grid, 1.0), 1.0).unwrap();
        let phi = MapField::identity(grid);
        let gr = p.grad_unwarped(&phi);
        let (_, ip) = directional_derivatives(&p, &phi, &gr, 1e-5);
        assert!(ip > 0.0);
        assert!((ip - gr.dot(&gr)).abs() <= 1e-12 * ip);
    }

    #[test]
    fn scaling_images_scales_data_term_only() {
        let grid = GridSpec::square(20).unwrap();
        let i0 = smooth_image(grid, 0.2);
        let i1 = smooth_image(grid, 0.9);
        let phi = MapField::from_fn(grid, |i, j| (0.3 * (i as f64 * 0.4).sin(), 0.2 * (j as f64 * 0.3).cos()));
        let p = HsPotential::new(i0.clone(), i1.clone(), 2.0).unwrap();
        let c = 0.5;
        let q = HsPotential::new(i0.map(|v| v * c), i1.map(|v| v * c), 2.0).unwrap();
        assert!((q.data_term(&phi) - c * c * p.data_term(&phi)).abs() < 1e-12 * p.data_term(&phi));
        assert_eq!(q.regularity_term(&phi), p.regularity_term(&phi));
    }

    #[test]
    fn warped_gradient_pushes_forward_to_unwarped() {
        // φ(x) = x + a sin(2πx/W) has the inverse computed by fixed-point
        // iteration on the exact formula.
        let n = 96;
        let grid = GridSpec::square(n).unwrap();
        let w = n as f64;
        let a = 1.5;
        let disp = |x: f64| a * (2.0 * std::f64::consts::PI * x / w).sin();
        let phi = MapField::from_fn(grid, |i, j| (disp(i as f64), 0.5 * disp(j as f64)));
        let inv = |y: f64, s: f64| {
            let mut x = y;
            for _ in 0..200 {
                x = y - s * disp(x);
            }
            x - y
        };
        let psi = MapField::from_fn(grid, |i, j| (inv(i as f64, 1.0), inv(j as f64, 0.5)));
        let p = HsPotential::new(smooth_image(grid, 0.1), smooth_image(grid, 0.7), 0.5).unwrap();

        let unwarped = p.grad_unwarped(&phi);
        let pulled = warp_vector(&p.grad_warped(&phi, &psi), &phi).unwrap();
        let det = det_jacobian(&phi);
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..grid.len() {
            let ex = pulled.vx()[k] * det.data()[k] - unwarped.vx()[k];
            let ey = pulled.vy()[k] * det.data()[k] - unwarped.vy()[k];
            num += ex * ex + ey * ey;
            den += unwarped.vx()[k].powi(2) + unwarped.vy()[k].powi(2);
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-2, "relative L2 mismatch {rel}");
    }
}
