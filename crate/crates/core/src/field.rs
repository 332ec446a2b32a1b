//! Periodic raster fields on a uniform 2D grid.
//!
//! Axis 1 runs along columns (`x`, index `i`), axis 2 along rows (`y`,
//! index `j`). Rasters are row-major: pixel `(i, j)` lives at `j * width + i`.
//! Every stencil wraps periodically in both directions.

use crate::error::{Error, Result};

/// Uniform periodic grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub dx: f64,
}

impl GridSpec {
    pub const MIN_SIDE: usize = 4;

    pub fn new(width: usize, height: usize) -> Result<Self> {
        Self::with_spacing(width, height, 1.0)
    }

    pub fn with_spacing(width: usize, height: usize, dx: f64) -> Result<Self> {
        if width < Self::MIN_SIDE || height < Self::MIN_SIDE {
            return Err(Error::GridTooSmall { width, height });
        }
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::InvalidSpacing(dx));
        }
        Ok(Self { width, height, dx })
    }

    /// Square grid with unit spacing.
    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell area `dx²`, the weight of one pixel in a discrete integral.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dx
    }

    /// Total area of the domain.
    #[inline]
    pub fn area(&self) -> f64 {
        self.len() as f64 * self.cell_area()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    /// Index of `(i + di, j + dj)` with periodic wrap.
    #[inline]
    pub fn wrapped_index(&self, i: isize, j: isize) -> usize {
        let w = self.width as isize;
        let h = self.height as isize;
        self.index(i.rem_euclid(w) as usize, j.rem_euclid(h) as usize)
    }

    #[inline]
    pub(crate) fn east(&self, i: usize) -> usize {
        if i + 1 == self.width {
            0
        } else {
            i + 1
        }
    }

    #[inline]
    pub(crate) fn west(&self, i: usize) -> usize {
        if i == 0 {
            self.width - 1
        } else {
            i - 1
        }
    }

    #[inline]
    pub(crate) fn north(&self, j: usize) -> usize {
        if j + 1 == self.height {
            0
        } else {
            j + 1
        }
    }

    #[inline]
    pub(crate) fn south(&self, j: usize) -> usize {
        if j == 0 {
            self.height - 1
        } else {
            j - 1
        }
    }

    /// Periodic neighbour one step along `axis`.
    #[inline]
    pub(crate) fn step(&self, i: usize, j: usize, axis: Axis, forward: bool) -> usize {
        match (axis, forward) {
            (Axis::X, true) => self.index(self.east(i), j),
            (Axis::X, false) => self.index(self.west(i), j),
            (Axis::Y, true) => self.index(i, self.north(j)),
            (Axis::Y, false) => self.index(i, self.south(j)),
        }
    }

    pub(crate) fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: (self.width, self.height),
                right: (other.width, other.height),
            })
        }
    }

    /// Iterate pixel coordinates in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height).flat_map(move |j| (0..self.width).map(move |i| (i, j)))
    }
}

/// Spatial axis of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Axis 1, along a row (column index grows).
    X,
    /// Axis 2, along a column (row index grows).
    Y,
}

fn check_raster(grid: &GridSpec, data: &[f64]) -> Result<()> {
    if data.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            got: data.len(),
        });
    }
    if let Some(k) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: k });
    }
    Ok(())
}

/// One real value per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, data: Vec<f64>) -> Result<Self> {
        check_raster(&grid, &data)?;
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self {
            grid,
            data: vec![value; grid.len()],
        }
    }

    /// Build from a function of pixel coordinates `(i, j)`.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let data = grid.pixels().map(|(i, j)| f(i, j)).collect();
        Self { grid, data }
    }

    pub(crate) fn from_raw(grid: GridSpec, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        Self { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.grid.index(i, j)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Discrete integral `Σ f · dx²`.
    pub fn integral(&self) -> f64 {
        self.sum() * self.grid.cell_area()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.grid, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Map values in raster order with a stateful closure.
    pub fn map_with(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self::from_raw(self.grid, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Circular shift: `out(i, j) = self(i - di, j - dj)`.
    pub fn shifted(&self, di: isize, dj: isize) -> Self {
        let g = self.grid;
        Self::from_fn(g, |i, j| {
            self.data[g.wrapped_index(i as isize - di, j as isize - dj)]
        })
    }
}

/// Two components per pixel (velocities, gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    pub(crate) vx: Vec<f64>,
    pub(crate) vy: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: GridSpec, vx: Vec<f64>, vy: Vec<f64>) -> Result<Self> {
        check_raster(&grid, &vx)?;
        check_raster(&grid, &vy)?;
        Ok(Self { grid, vx, vy })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0, 0.0)
    }

    pub fn constant(grid: GridSpec, cx: f64, cy: f64) -> Self {
        Self {
            grid,
            vx: vec![cx; grid.len()],
            vy: vec![cy; grid.len()],
        }
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let (vx, vy) = grid.pixels().map(|(i, j)| f(i, j)).unzip();
        Self { grid, vx, vy }
    }

    pub fn from_components(x: ScalarField, y: ScalarField) -> Result<Self> {
        x.grid.check_same(&y.grid)?;
        Ok(Self {
            grid: x.grid,
            vx: x.data,
            vy: y.data,
        })
    }

    pub(crate) fn from_raw(grid: GridSpec, vx: Vec<f64>, vy: Vec<f64>) -> Self {
        debug_assert!(vx.len() == grid.len() && vy.len() == grid.len());
        Self { grid, vx, vy }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn vx(&self) -> &[f64] {
        &self.vx
    }

    #[inline]
    pub fn vy(&self) -> &[f64] {
        &self.vy
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> (f64, f64) {
        let k = self.grid.index(i, j);
        (self.vx[k], self.vy[k])
    }

    pub fn x_component(&self) -> ScalarField {
        ScalarField::from_raw(self.grid, self.vx.clone())
    }

    pub fn y_component(&self) -> ScalarField {
        ScalarField::from_raw(self.grid, self.vy.clone())
    }

    pub fn component(&self, axis: Axis) -> ScalarField {
        match axis {
            Axis::X => self.x_component(),
            Axis::Y => self.y_component(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.vx.iter().chain(&self.vy).all(|v| v.is_finite())
    }

    /// Largest Euclidean length over the grid.
    pub fn max_norm(&self) -> f64 {
        self.vx
            .iter()
            .zip(&self.vy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    /// Discrete L² inner product `Σ a·b dx²`.
    pub fn dot(&self, other: &VectorField) -> f64 {
        let s: f64 = self
            .vx
            .iter()
            .zip(&other.vx)
            .chain(self.vy.iter().zip(&other.vy))
            .map(|(a, b)| a * b)
            .sum();
        s * self.grid.cell_area()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_raw(
            self.grid,
            self.vx.iter().map(|v| v * c).collect(),
            self.vy.iter().map(|v| v * c).collect(),
        )
    }

    pub fn shifted(&self, di: isize, dj: isize) -> Self {
        Self::from_components(self.x_component().shifted(di, dj), self.y_component().shifted(di, dj))
            .expect("components share a grid")
    }
}

/// A map `φ(x) = x + u(x)` stored as its periodic displacement `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapField {
    grid: GridSpec,
    pub(crate) ux: Vec<f64>,
    pub(crate) uy: Vec<f64>,
}

impl MapField {
    pub fn new(grid: GridSpec, ux: Vec<f64>, uy: Vec<f64>) -> Result<Self> {
        check_raster(&grid, &ux)?;
        check_raster(&grid, &uy)?;
        Ok(Self { grid, ux, uy })
    }

    pub fn identity(grid: GridSpec) -> Self {
        Self::translation(grid, 0.0, 0.0)
    }

    pub fn translation(grid: GridSpec, dx: f64, dy: f64) -> Self {
        Self {
            grid,
            ux: vec![dx; grid.len()],
            uy: vec![dy; grid.len()],
        }
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let (ux, uy) = grid.pixels().map(|(i, j)| f(i, j)).unzip();
        Self { grid, ux, uy }
    }

    pub(crate) fn from_raw(grid: GridSpec, ux: Vec<f64>, uy: Vec<f64>) -> Self {
        debug_assert!(ux.len() == grid.len() && uy.len() == grid.len());
        Self { grid, ux, uy }
    }

    pub fn from_displacement(u: VectorField) -> Self {
        Self {
            grid: u.grid,
            ux: u.vx,
            uy: u.vy,
        }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn ux(&self) -> &[f64] {
        &self.ux
    }

    #[inline]
    pub fn uy(&self) -> &[f64] {
        &self.uy
    }

    /// Displacement `u(i, j)`.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> (f64, f64) {
        let k = self.grid.index(i, j);
        (self.ux[k], self.uy[k])
    }

    /// The mapped point `φ(i, j)` in pixel coordinates.
    #[inline]
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        let (a, b) = self.at(i, j);
        (i as f64 + a, j as f64 + b)
    }

    pub fn displacement(&self) -> VectorField {
        VectorField::from_raw(self.grid, self.ux.clone(), self.uy.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.ux.iter().chain(&self.uy).all(|v| v.is_finite())
    }

    /// Largest pointwise distance between two maps.
    pub fn max_distance(&self, other: &MapField) -> f64 {
        self.ux
            .iter()
            .zip(&other.ux)
            .zip(self.uy.iter().zip(&other.uy))
            .map(|((a, b), (c, d))| (a - b).hypot(c - d))
            .fold(0.0, f64::max)
    }

    /// `det(I + ∇u) > 0` at every pixel.
    pub fn is_diffeomorphic(&self) -> bool {
        det_jacobian(self).data().iter().all(|&d| d > 0.0)
    }
}

/// Per-pixel 2×2 matrix; `jab` is the derivative of component `a` along axis `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField {
    grid: GridSpec,
    pub j11: Vec<f64>,
    pub j12: Vec<f64>,
    pub j21: Vec<f64>,
    pub j22: Vec<f64>,
}

impl JacobianField {
    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn at(&self, k: usize) -> [[f64; 2]; 2] {
        [[self.j11[k], self.j12[k]], [self.j21[k], self.j22[k]]]
    }

    /// `|Dv(x)|` as the largest absolute entry of the matrix at pixel `k`.
    #[inline]
    pub fn max_abs_entry(&self, k: usize) -> f64 {
        self.j11[k]
            .abs()
            .max(self.j12[k].abs())
            .max(self.j21[k].abs())
            .max(self.j22[k].abs())
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.grid.len())
            .map(|k| self.max_abs_entry(k))
            .fold(0.0, f64::max)
    }
}

/// Central difference of a raster along one axis.
pub(crate) fn central_diff(grid: &GridSpec, f: &[f64], axis: Axis) -> Vec<f64> {
    let inv = 1.0 / (2.0 * grid.dx);
    let mut out = vec![0.0; grid.len()];
    for j in 0..grid.height {
        for i in 0..grid.width {
            let fwd = f[grid.step(i, j, axis, true)];
            let bwd = f[grid.step(i, j, axis, false)];
            out[grid.index(i, j)] = (fwd - bwd) * inv;
        }
    }
    out
}

/// Forward difference `(f(x + Δ) - f(x)) / dx` along one axis.
pub(crate) fn forward_diff(grid: &GridSpec, f: &[f64], axis: Axis) -> Vec<f64> {
    let inv = 1.0 / grid.dx;
    let mut out = vec![0.0; grid.len()];
    for j in 0..grid.height {
        for i in 0..grid.width {
            let k = grid.index(i, j);
            out[k] = (f[grid.step(i, j, axis, true)] - f[k]) * inv;
        }
    }
    out
}

pub(crate) fn laplacian_raw(grid: &GridSpec, f: &[f64]) -> Vec<f64> {
    let inv = 1.0 / grid.cell_area();
    let mut out = vec![0.0; grid.len()];
    for j in 0..grid.height {
        let (n, s) = (grid.north(j), grid.south(j));
        for i in 0..grid.width {
            let (e, w) = (grid.east(i), grid.west(i));
            let c = f[grid.index(i, j)];
            let sum = f[grid.index(e, j)] + f[grid.index(w, j)] + f[grid.index(i, n)] + f[grid.index(i, s)];
            out[grid.index(i, j)] = (sum - 4.0 * c) * inv;
        }
    }
    out
}

/// Periodic central-difference gradient.
pub fn grad_central(f: &ScalarField) -> VectorField {
    let g = f.grid;
    VectorField::from_raw(g, central_diff(&g, &f.data, Axis::X), central_diff(&g, &f.data, Axis::Y))
}

/// Periodic central-difference Jacobian of a vector field.
pub fn jacobian_central(v: &VectorField) -> JacobianField {
    let g = v.grid;
    JacobianField {
        grid: g,
        j11: central_diff(&g, &v.vx, Axis::X),
        j12: central_diff(&g, &v.vx, Axis::Y),
        j21: central_diff(&g, &v.vy, Axis::X),
        j22: central_diff(&g, &v.vy, Axis::Y),
    }
}

/// Periodic central-difference divergence.
pub fn divergence_central(v: &VectorField) -> ScalarField {
    let g = v.grid;
    let inv = 1.0 / (2.0 * g.dx);
    let mut out = vec![0.0; g.len()];
    for j in 0..g.height {
        let (n, s) = (g.north(j), g.south(j));
        for i in 0..g.width {
            let (e, w) = (g.east(i), g.west(i));
            let d1 = (v.vx[g.index(e, j)] - v.vx[g.index(w, j)]) * inv;
            let d2 = (v.vy[g.index(i, n)] - v.vy[g.index(i, s)]) * inv;
            out[g.index(i, j)] = d1 + d2;
        }
    }
    ScalarField::from_raw(g, out)
}

/// Five-point periodic Laplacian.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    ScalarField::from_raw(f.grid, laplacian_raw(&f.grid, &f.data))
}

/// Componentwise Laplacian of a vector field.
pub fn laplacian_vector(v: &VectorField) -> VectorField {
    VectorField::from_raw(v.grid, laplacian_raw(&v.grid, &v.vx), laplacian_raw(&v.grid, &v.vy))
}

/// Componentwise Laplacian of a map's displacement. Equals `Δφ` since `Δ(id) = 0`.
pub fn laplacian_map(m: &MapField) -> VectorField {
    VectorField::from_raw(m.grid, laplacian_raw(&m.grid, &m.ux), laplacian_raw(&m.grid, &m.uy))
}

/// Wrapped lower and upper node index along one axis of length `n`, and the
/// fractional offset from the lower node.
#[inline]
fn axis_cell(p: f64, n: usize) -> (usize, usize, f64) {
    // Truncation plus a correction avoids a libm `floor` call per sample.
    let mut lo = p as i64;
    if (lo as f64) > p {
        lo -= 1;
    }
    let t = p - lo as f64;
    let n = n as i64;
    if lo >= 0 && lo + 1 < n {
        (lo as usize, lo as usize + 1, t)
    } else {
        let a = lo.rem_euclid(n);
        let b = if a + 1 == n { 0 } else { a + 1 };
        (a as usize, b as usize, t)
    }
}

/// Cell corner indices and fractional offsets of a point, both wrapped.
#[inline]
fn cell_of(grid: &GridSpec, px: f64, py: f64) -> (usize, usize, usize, usize, f64, f64) {
    let (i0, i1, tx) = axis_cell(px, grid.width);
    let (j0, j1, ty) = axis_cell(py, grid.height);
    (i0, j0, i1, j1, tx, ty)
}

/// Raster offsets and weights of the four nodes that bilinear sampling at a
/// point combines, in the order `00, 10, 01, 11`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Corners {
    pub(crate) k: [usize; 4],
    pub(crate) w: [f64; 4],
    t: (f64, f64),
}

impl Corners {
    #[inline]
    pub(crate) fn at(grid: &GridSpec, px: f64, py: f64) -> Self {
        let (i0, j0, i1, j1, tx, ty) = cell_of(grid, px, py);
        let (r0, r1) = (j0 * grid.width, j1 * grid.width);
        Self {
            k: [r0 + i0, r0 + i1, r1 + i0, r1 + i1],
            w: [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty],
            t: (tx, ty),
        }
    }

    #[inline]
    pub(crate) fn sample(&self, f: &[f64]) -> f64 {
        // Lerp form, so constant fields come back exactly.
        let (tx, ty) = self.t;
        let [a, b, c, d] = self.k.map(|k| f[k]);
        let lo = a + tx * (b - a);
        let hi = c + tx * (d - c);
        lo + ty * (hi - lo)
    }

    #[inline]
    pub(crate) fn scatter(&self, out: &mut [f64], v: f64) {
        for c in 0..4 {
            out[self.k[c]] += v * self.w[c];
        }
    }
}

#[inline]
fn bilinear_raw(grid: &GridSpec, f: &[f64], px: f64, py: f64) -> f64 {
    Corners::at(grid, px, py).sample(f)
}

/// Gradient of the bilinear interpolant at a point.
///
/// Inside a cell this is the exact derivative of the interpolant. On a cell
/// edge the interpolant has a kink and the mean of the one-sided slopes is
/// returned, which reduces to the central difference at grid nodes.
#[inline]
pub(crate) fn bilinear_gradient_raw(grid: &GridSpec, f: &[f64], px: f64, py: f64) -> (f64, f64) {
    let (i0, j0, i1, j1, tx, ty) = cell_of(grid, px, py);
    let at = |i: usize, j: usize| f[grid.index(i, j)];
    let inv = 1.0 / grid.dx;
    let slope_x = |ia: usize, ib: usize| (1.0 - ty) * (at(ib, j0) - at(ia, j0)) + ty * (at(ib, j1) - at(ia, j1));
    let slope_y = |ja: usize, jb: usize| (1.0 - tx) * (at(i0, jb) - at(i0, ja)) + tx * (at(i1, jb) - at(i1, ja));
    let gx = if tx == 0.0 {
        0.5 * (slope_x(i0, i1) + slope_x(grid.west(i0), i0))
    } else {
        slope_x(i0, i1)
    };
    let gy = if ty == 0.0 {
        0.5 * (slope_y(j0, j1) + slope_y(grid.south(j0), j0))
    } else {
        slope_y(j0, j1)
    };
    (gx * inv, gy * inv)
}

/// Bilinear interpolation with periodic wrap; exact at grid nodes.
pub fn sample_bilinear(f: &ScalarField, px: f64, py: f64) -> f64 {
    bilinear_raw(&f.grid, &f.data, px, py)
}

/// Sample both components of a vector field at a point.
pub fn sample_vector(v: &VectorField, px: f64, py: f64) -> (f64, f64) {
    (bilinear_raw(&v.grid, &v.vx, px, py), bilinear_raw(&v.grid, &v.vy, px, py))
}

/// Sample a raster at every mapped point `φ(x)`.
pub(crate) fn compose_raw(grid: &GridSpec, f: &[f64], m: &MapField) -> Vec<f64> {
    grid.pixels()
        .map(|(i, j)| {
            let (px, py) = m.point(i, j);
            bilinear_raw(grid, f, px, py)
        })
        .collect()
}

/// Transpose of [`compose_raw`]: every value `f(x)` is scattered onto the
/// four nodes around `φ(x)` with the bilinear weights that sampling at
/// `φ(x)` would use.
pub(crate) fn splat_raw(grid: &GridSpec, f: &[f64], m: &MapField) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for (i, j) in grid.pixels() {
        let v = f[grid.index(i, j)];
        if v != 0.0 {
            let (px, py) = m.point(i, j);
            Corners::at(grid, px, py).scatter(&mut out, v);
        }
    }
    out
}

/// Push a field living on the fixed domain forward through `φ` by bilinear
/// scattering. This is the exact adjoint of [`warp_vector`]:
/// `⟨splat(f, φ), v⟩ = ⟨f, v ∘ φ⟩`.
pub fn splat_vector(f: &VectorField, m: &MapField) -> Result<VectorField> {
    f.grid.check_same(&m.grid)?;
    Ok(VectorField::from_raw(
        f.grid,
        splat_raw(&f.grid, &f.vx, m),
        splat_raw(&f.grid, &f.vy, m),
    ))
}

/// `I ∘ φ`.
pub fn warp(image: &ScalarField, m: &MapField) -> Result<ScalarField> {
    image.grid.check_same(&m.grid)?;
    Ok(ScalarField::from_raw(image.grid, compose_raw(&image.grid, &image.data, m)))
}

/// `v ∘ φ`, componentwise.
pub fn warp_vector(v: &VectorField, m: &MapField) -> Result<VectorField> {
    v.grid.check_same(&m.grid)?;
    Ok(VectorField::from_raw(
        v.grid,
        compose_raw(&v.grid, &v.vx, m),
        compose_raw(&v.grid, &v.vy, m),
    ))
}

/// `det(I + ∇u)` per pixel with central differences.
pub fn det_jacobian(m: &MapField) -> ScalarField {
    let g = m.grid;
    let a = central_diff(&g, &m.ux, Axis::X);
    let b = central_diff(&g, &m.ux, Axis::Y);
    let c = central_diff(&g, &m.uy, Axis::X);
    let d = central_diff(&g, &m.uy, Axis::Y);
    let data = (0..g.len())
        .map(|k| (1.0 + a[k]) * (1.0 + d[k]) - b[k] * c[k])
        .collect();
    ScalarField::from_raw(g, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn g(n: usize) -> GridSpec {
        GridSpec::square(n).unwrap()
    }

    #[test]
    fn grid_rejects_small_and_bad_spacing() {
        assert!(matches!(GridSpec::new(3, 8), Err(Error::GridTooSmall { .. })));
        assert!(matches!(GridSpec::with_spacing(8, 8, 0.0), Err(Error::InvalidSpacing(_))));
        assert!(GridSpec::new(4, 4).is_ok());
    }

    #[test]
    fn field_rejects_non_finite_and_bad_length() {
        let grid = g(4);
        assert!(matches!(
            ScalarField::new(grid, vec![0.0; 15]),
            Err(Error::LengthMismatch { .. })
        ));
        let mut d = vec![0.0; 16];
        d[5] = f64::NAN;
        assert!(matches!(ScalarField::new(grid, d), Err(Error::NonFinite { index: 5 })));
    }

    #[test]
    fn grad_of_constant_is_zero() {
        let f = ScalarField::constant(g(8), 3.5);
        let gr = grad_central(&f);
        assert!(gr.vx().iter().chain(gr.vy()).all(|&v| v == 0.0));
    }

    #[test]
    fn grad_of_sine_matches_stencil() {
        let grid = g(16);
        let s = |x: f64| (2.0 * PI * x / 16.0).sin();
        let f = ScalarField::from_fn(grid, |i, _| s(i as f64));
        let gr = grad_central(&f);
        for (i, j) in grid.pixels() {
            let (gx, gy) = gr.at(i, j);
            let expect = (s(i as f64 + 1.0) - s(i as f64 - 1.0)) / 2.0;
            assert!((gx - expect).abs() < 1e-14);
            assert_eq!(gy, 0.0);
        }
    }

    #[test]
    fn grad_of_impulse_wraps() {
        let grid = g(8);
        let f = ScalarField::from_fn(grid, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 });
        let gr = grad_central(&f);
        for (i, j) in grid.pixels() {
            let (gx, _) = gr.at(i, j);
            let expect = match (i, j) {
                (1, 0) => -0.5,
                (7, 0) => 0.5,
                _ => 0.0,
            };
            assert_eq!(gx, expect, "at ({i},{j})");
        }
    }

    #[test]
    fn jacobian_of_shear_sine() {
        let grid = g(12);
        let a = 0.7;
        let s = |y: f64| a * (2.0 * PI * y / 12.0).sin();
        let v = VectorField::from_fn(grid, |_, j| (s(j as f64), 0.0));
        let jac = jacobian_central(&v);
        for (i, j) in grid.pixels() {
            let k = grid.index(i, j);
            let expect = (s(j as f64 + 1.0) - s(j as f64 - 1.0)) / 2.0;
            assert!((jac.j12[k] - expect).abs() < 1e-14);
            assert_eq!(jac.j11[k], 0.0);
            assert_eq!(jac.j21[k], 0.0);
            assert_eq!(jac.j22[k], 0.0);
        }
        let c = jacobian_central(&VectorField::constant(grid, 1.0, -2.0));
        assert_eq!(c.max_abs(), 0.0);
    }

    #[test]
    fn jacobian_of_impulse() {
        let grid = g(8);
        let v = VectorField::from_fn(grid, |i, j| (if i == 0 && j == 0 { 1.0 } else { 0.0 }, 0.0));
        let jac = jacobian_central(&v);
        assert_eq!(jac.j11[grid.index(1, 0)], -0.5);
        assert_eq!(jac.j11[grid.index(7, 0)], 0.5);
        assert_eq!(jac.max_abs_entry(grid.index(1, 0)), 0.5);
    }

    #[test]
    fn divergence_of_gradient_is_laplacian_for_sine() {
        let grid = g(16);
        let f = ScalarField::from_fn(grid, |i, _| (2.0 * PI * i as f64 / 16.0).sin());
        let div = divergence_central(&grad_central(&f));
        assert_eq!(divergence_central(&VectorField::constant(grid, 2.0, 1.0)).max(), 0.0);
        // Composition of two central differences is the wide (step-2) stencil.
        for (i, j) in grid.pixels() {
            let wide = (f.data[grid.wrapped_index(i as isize + 2, j as isize)]
                - 2.0 * f.at(i, j)
                + f.data[grid.wrapped_index(i as isize - 2, j as isize)])
                / 4.0;
            assert!((div.at(i, j) - wide).abs() < 1e-14);
        }
    }

    #[test]
    fn divergence_of_impulse_x_matches_gradient() {
        let grid = g(8);
        let q = ScalarField::from_fn(grid, |i, j| if i == 2 && j == 3 { 1.0 } else { 0.0 });
        let v = VectorField::from_components(q.clone(), ScalarField::zeros(grid)).unwrap();
        let div = divergence_central(&v);
        assert_eq!(div.data(), grad_central(&q).vx());
    }

    #[test]
    fn laplacian_stencils() {
        let grid = g(8);
        assert_eq!(laplacian(&ScalarField::constant(grid, 2.0)).max(), 0.0);
        let f = ScalarField::from_fn(grid, |i, j| if i == 0 && j == 0 { 1.0 } else { 0.0 });
        let l = laplacian(&f);
        for (i, j) in grid.pixels() {
            let expect = match (i, j) {
                (0, 0) => -4.0,
                (1, 0) | (7, 0) | (0, 1) | (0, 7) => 1.0,
                _ => 0.0,
            };
            assert_eq!(l.at(i, j), expect);
        }
        let w = 16.0;
        let s = ScalarField::from_fn(g(16), |i, _| (2.0 * PI * i as f64 / w).sin());
        let ls = laplacian(&s);
        let eig = -(2.0 - 2.0 * (2.0 * PI / w).cos());
        for (a, b) in ls.data().iter().zip(s.data()) {
            assert!((a - eig * b).abs() < 1e-13);
        }
    }

    #[test]
    fn bilinear_cases() {
        let grid = g(8);
        let f = ScalarField::from_fn(grid, |i, j| (i * 10 + j) as f64);
        assert_eq!(sample_bilinear(&f, 3.0, 5.0), f.at(3, 5));
        assert_eq!(sample_bilinear(&ScalarField::constant(grid, 0.3), 2.7, -9.1), 0.3);
        let h = ScalarField::from_fn(grid, |i, j| match (i, j) {
            (1, 0) | (0, 1) => 1.0,
            _ => 0.0,
        });
        assert_eq!(sample_bilinear(&h, 0.5, 0.5), 0.5);
        // wrap: sampling at -1 reaches the last column
        assert_eq!(sample_bilinear(&f, -1.0, 0.0), f.at(7, 0));
        assert_eq!(sample_bilinear(&f, 8.0, 9.0), f.at(0, 1));
    }

    #[test]
    fn warp_identity_shift_and_half() {
        let grid = g(8);
        let img = ScalarField::from_fn(grid, |i, j| ((i * 7 + j * 3) % 5) as f64 / 4.0);
        assert_eq!(warp(&img, &MapField::identity(grid)).unwrap(), img);
        let shifted = warp(&img, &MapField::translation(grid, 3.0, 0.0)).unwrap();
        assert_eq!(shifted, img.shifted(-3, 0));
        let col = ScalarField::from_fn(grid, |i, _| if i == 4 { 1.0 } else { 0.0 });
        let half = warp(&col, &MapField::translation(grid, 0.5, 0.0)).unwrap();
        for (i, j) in grid.pixels() {
            let expect = if i == 3 || i == 4 { 0.5 } else { 0.0 };
            assert_eq!(half.at(i, j), expect);
        }
    }

    #[test]
    fn det_jacobian_cases() {
        let grid = g(16);
        assert!(det_jacobian(&MapField::identity(grid)).data().iter().all(|&d| d == 1.0));
        assert!(det_jacobian(&MapField::translation(grid, 3.0, -2.0))
            .data()
            .iter()
            .all(|&d| d == 1.0));
        let a = 0.1;
        let s = |x: f64| a * (2.0 * PI * x / 16.0).sin();
        let m = MapField::from_fn(grid, |i, _| (s(i as f64), 0.0));
        let det = det_jacobian(&m);
        for (i, j) in grid.pixels() {
            let expect = 1.0 + (s(i as f64 + 1.0) - s(i as f64 - 1.0)) / 2.0;
            assert!((det.at(i, j) - expect).abs() < 1e-14);
        }
        assert!(m.is_diffeomorphic());
    }

    #[test]
    fn bilinear_gradient_at_nodes_is_central() {
        let grid = g(8);
        let f = ScalarField::from_fn(grid, |i, j| ((i * i + 3 * j) % 7) as f64);
        let gr = grad_central(&f);
        for (i, j) in grid.pixels() {
            let (gx, gy) = bilinear_gradient_raw(&grid, f.data(), i as f64, j as f64);
            let (ex, ey) = gr.at(i, j);
            assert!((gx - ex).abs() < 1e-14 && (gy - ey).abs() < 1e-14);
        }
    }
}
