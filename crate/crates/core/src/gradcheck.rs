//! Central finite-difference checks for analytic gradients.

use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Error of one coordinate relative to the larger of the two slopes, with
/// slopes below `floor` compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for each requested coordinate.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], coords: &[usize], h: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            if i >= x.len() {
                return Err(Error::Shape(format!("coordinate {i} of {}", x.len())));
            }
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst_coordinate: usize,
}

pub fn check(
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
    floor: f64,
) -> Result<GradCheck> {
    if analytic.len() != x.len() {
        return Err(Error::Shape(format!("{} gradient entries for {} inputs", analytic.len(), x.len())));
    }
    let numeric = central_difference(f, x, coords, h)?;
    let mut out = GradCheck {
        checked: coords.len(),
        max_relative_error: 0.0,
        worst_coordinate: 0,
    };
    for (&i, n) in coords.iter().zip(numeric) {
        let e = relative_error(analytic[i], n, floor);
        if !(e <= out.max_relative_error) {
            out.max_relative_error = e;
            out.worst_coordinate = i;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic() {
        let f = |x: &[f64]| x[0].powi(3) + 2.0 * x[1];
        let x = [1.5, -0.3];
        let g = [3.0 * 1.5f64.powi(2), 2.0];
        let c = check(f, &x, &g, &[0, 1], DEFAULT_STEP, 1e-2).unwrap();
        assert!(c.max_relative_error < 1e-8);
        let bad = check(f, &x, &[1.0, 2.0], &[0, 1], DEFAULT_STEP, 1e-2).unwrap();
        assert_eq!(bad.worst_coordinate, 0);
        assert!(bad.max_relative_error > 0.5);
    }
}
