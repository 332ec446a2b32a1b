//! Flow and reconstruction error measures.

use crate::error::{Error, Result};
use crate::field::{warp, MapField, ScalarField};

/// Mean `|u(x) - u_gt(x)|`, optionally restricted to a mask.
pub fn endpoint_error(m: &MapField, gt: &MapField, support: Option<&[bool]>) -> Result<f64> {
    m.grid().check_same(gt.grid())?;
    let n = m.grid().len();
    if let Some(mask) = support {
        if mask.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: mask.len(),
            });
        }
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for k in 0..n {
        if support.map_or(true, |s| s[k]) {
            total += (m.ux()[k] - gt.ux()[k]).hypot(m.uy()[k] - gt.uy()[k]);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(total / count as f64)
}

/// Reconstruction error of `I₁ ∘ φ` against `I₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconError {
    /// `½ Σ (I₁∘φ - I₀)² dx²`.
    pub data_term: f64,
    /// `‖I₁∘φ - I₀‖₂ = √(2 · data_term)`.
    pub l2: f64,
}

pub fn recon_error(i0: &ScalarField, i1: &ScalarField, m: &MapField) -> Result<ReconError> {
    i0.grid().check_same(i1.grid())?;
    let warped = warp(i1, m)?;
    let ss: f64 = warped
        .data()
        .iter()
        .zip(i0.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let data_term = 0.5 * ss * i0.grid().cell_area();
    Ok(ReconError {
        data_term,
        l2: (2.0 * data_term).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;

    #[test]
    fn endpoint_error_cases() {
        let g = GridSpec::square(10).unwrap();
        let gt = MapField::translation(g, 3.0, -1.0);
        assert_eq!(endpoint_error(&gt, &gt, None).unwrap(), 0.0);
        let off = MapField::translation(g, 4.0, -1.0);
        assert_eq!(endpoint_error(&off, &gt, None).unwrap(), 1.0);
        let mut mask = vec![false; 100];
        mask[17] = true;
        assert_eq!(endpoint_error(&off, &gt, Some(&mask)).unwrap(), 1.0);
        assert!(matches!(
            endpoint_error(&off, &gt, Some(&[false; 100])),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn recon_error_cases() {
        let g = GridSpec::square(50).unwrap();
        let id = MapField::identity(g);
        let img = ScalarField::from_fn(g, |i, j| ((i + j) % 3) as f64 / 2.0);
        assert_eq!(recon_error(&img, &img, &id).unwrap().data_term, 0.0);
        let r = recon_error(&ScalarField::zeros(g), &ScalarField::constant(g, 1.0), &id).unwrap();
        assert_eq!(r.data_term, 1250.0);
        assert!((r.l2 - 50.0).abs() < 1e-12);
    }
}
