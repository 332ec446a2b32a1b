//! Synthetic registration pairs and noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{GridSpec, MapField, ScalarField};

/// Two images and, when known, the displacement relating them.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub i0: ScalarField,
    pub i1: ScalarField,
    /// `u` with `I₁(x + u(x)) = I₀(x)` on the object.
    pub gt_flow: Option<MapField>,
    /// Pixels covered by the object in `I₀`.
    pub support: Vec<bool>,
}

/// Axis-aligned box `[x0, x0+w) × [y0, y0+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rect {
    x0: isize,
    y0: isize,
    w: usize,
    h: usize,
}

impl Rect {
    fn contains(&self, i: usize, j: usize) -> bool {
        let (i, j) = (i as isize, j as isize);
        i >= self.x0 && i < self.x0 + self.w as isize && j >= self.y0 && j < self.y0 + self.h as isize
    }

    /// Inside the grid with at least one background pixel on every side.
    fn check_fits(&self, grid: &GridSpec, what: &str) -> Result<()> {
        let fits = self.x0 >= 1
            && self.y0 >= 1
            && self.x0 + (self.w as isize) < grid.width as isize
            && self.y0 + (self.h as isize) < grid.height as isize
            && self.w > 0
            && self.h > 0;
        if fits {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                width: grid.width,
                height: grid.height,
                what: format!("{what} {}x{} at ({}, {})", self.w, self.h, self.x0, self.y0),
            })
        }
    }

    fn paint(&self, grid: GridSpec) -> ScalarField {
        ScalarField::from_fn(grid, |i, j| if self.contains(i, j) { 1.0 } else { 0.0 })
    }
}

/// Box of the given size centred on the grid (rounding toward the origin).
fn centered(grid: &GridSpec, w: usize, h: usize) -> Rect {
    Rect {
        x0: (grid.width as isize - w as isize) / 2,
        y0: (grid.height as isize - h as isize) / 2,
        w,
        h,
    }
}

/// White square centred in `I₀`, the same square translated by `shift` in `I₁`.
pub fn gen_square_pair(grid: GridSpec, square_size: usize, shift: (isize, isize)) -> Result<SyntheticPair> {
    let a = centered(&grid, square_size, square_size);
    let b = Rect {
        x0: a.x0 + shift.0,
        y0: a.y0 + shift.1,
        ..a
    };
    a.check_fits(&grid, "square")?;
    b.check_fits(&grid, "shifted square")?;
    let support = grid.pixels().map(|(i, j)| a.contains(i, j)).collect();
    Ok(SyntheticPair {
        i0: a.paint(grid),
        i1: b.paint(grid),
        gt_flow: Some(MapField::translation(grid, shift.0 as f64, shift.1 as f64)),
        support,
    })
}

/// Square centred in `I₀`; rectangle `rect_w × rect_h` in `I₁`, centred on the
/// square's centre moved by `shift`. No ground-truth flow.
pub fn gen_rect_pair(
    grid: GridSpec,
    square_size: usize,
    rect_w: usize,
    rect_h: usize,
    shift: (isize, isize),
) -> Result<SyntheticPair> {
    let a = centered(&grid, square_size, square_size);
    // Centre in doubled coordinates keeps odd/even sizes aligned.
    let cx2 = 2 * a.x0 + square_size as isize;
    let cy2 = 2 * a.y0 + square_size as isize;
    let b = Rect {
        x0: (cx2 - rect_w as isize).div_euclid(2) + shift.0,
        y0: (cy2 - rect_h as isize).div_euclid(2) + shift.1,
        w: rect_w,
        h: rect_h,
    };
    a.check_fits(&grid, "square")?;
    b.check_fits(&grid, "rectangle")?;
    let support = grid.pixels().map(|(i, j)| a.contains(i, j)).collect();
    Ok(SyntheticPair {
        i0: a.paint(grid),
        i1: b.paint(grid),
        gt_flow: None,
        support,
    })
}

/// Replace each pixel, with probability `level`, by 0 or 1 chosen with equal
/// probability.
pub fn add_salt_pepper(image: &ScalarField, level: f64, seed: u64) -> Result<ScalarField> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::InvalidParameter(format!(
            "noise level must lie in [0, 1], got {level}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(image.map_with(|v| {
        let hit = rng.gen::<f64>() < level;
        let salt = rng.gen::<bool>();
        if hit {
            if salt {
                1.0
            } else {
                0.0
            }
        } else {
            v
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::warp;

    fn grid(n: usize) -> GridSpec {
        GridSpec::square(n).unwrap()
    }

    #[test]
    fn convergence_pair_layout() {
        let p = gen_square_pair(grid(50), 20, (10, 0)).unwrap();
        assert_eq!(p.i0.sum(), 400.0);
        assert_eq!(p.i1.sum(), 400.0);
        assert_eq!(p.i0.at(15, 15), 1.0);
        assert_eq!(p.i0.at(34, 34), 1.0);
        assert_eq!(p.i0.at(14, 15), 0.0);
        assert_eq!(p.i1.at(25, 15), 1.0);
        assert_eq!(p.i1.at(44, 34), 1.0);
        assert_eq!(p.i1.at(45, 20), 0.0);
        let gt = p.gt_flow.unwrap();
        assert_eq!(gt.at(3, 4), (10.0, 0.0));
        // ground truth warps I1 back onto I0 exactly
        assert_eq!(warp(&p.i1, &gt).unwrap(), p.i0);
    }

    #[test]
    fn zero_shift_gives_identical_images() {
        let p = gen_square_pair(grid(50), 16, (0, 0)).unwrap();
        assert_eq!(p.i0, p.i1);
        assert_eq!(p.gt_flow.unwrap(), MapField::identity(grid(50)));
        let q = gen_rect_pair(grid(50), 16, 16, 16, (0, 0)).unwrap();
        assert_eq!(q.i0, q.i1);
    }

    #[test]
    fn sweep_pairs_fit() {
        let a = gen_square_pair(grid(50), 16, (7, 0)).unwrap();
        assert_eq!(warp(&a.i1, a.gt_flow.as_ref().unwrap()).unwrap(), a.i0);
        let s = gen_rect_pair(grid(50), 17, 20, 14, (8, 0)).unwrap();
        assert_eq!(s.i0.sum(), 289.0);
        assert_eq!(s.i1.sum(), 280.0);
        assert!(s.gt_flow.is_none());
        let n = gen_rect_pair(grid(50), 15, 20, 10, (5, 0)).unwrap();
        assert_eq!(n.i1.sum(), 200.0);
    }

    #[test]
    fn out_of_bounds_rejected() {
        assert!(matches!(
            gen_square_pair(grid(20), 16, (5, 0)),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(gen_rect_pair(grid(20), 8, 30, 4, (0, 0)).is_err());
    }

    #[test]
    fn noise_levels() {
        let img = gen_square_pair(grid(50), 20, (10, 0)).unwrap().i0.map(|v| 0.25 + 0.5 * v);
        assert_eq!(add_salt_pepper(&img, 0.0, 3).unwrap(), img);
        let full = add_salt_pepper(&img, 1.0, 3).unwrap();
        assert!(full.data().iter().all(|&v| v == 0.0 || v == 1.0));
        let noisy = add_salt_pepper(&img, 0.2, 11).unwrap();
        let changed = noisy.data().iter().filter(|&&v| v == 0.0 || v == 1.0).count();
        assert!((440..=560).contains(&changed), "corrupted {changed}");
        assert_eq!(noisy, add_salt_pepper(&img, 0.2, 11).unwrap());
        assert!(add_salt_pepper(&img, 1.5, 0).is_err());
    }
}
