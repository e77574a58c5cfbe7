//! Parameter-grid utilities: box extraction from interval-type domain
//! polynomials and deterministic grid enumeration.

use crate::poly::{Polynomial, VarKind};
use crate::system::UncertainSystem;

/// Per-axis bounding box [lo, hi] of the domain, when it can be read off the
/// domain polynomials. Each g that is a concave univariate quadratic in one
/// parameter contributes its root interval; intervals on the same axis
/// intersect. Returns `None` unless every axis ends up bounded.
pub fn domain_box(sys: &UncertainSystem) -> Option<Vec<(f64, f64)>> {
    let mut axes: Vec<Option<(f64, f64)>> = vec![None; sys.n_theta];
    for (_, g) in &sys.domain {
        let Some((axis, interval)) = univariate_interval(g) else {
            continue;
        };
        let slot = &mut axes[axis];
        *slot = Some(match *slot {
            None => interval,
            Some((lo, hi)) => (lo.max(interval.0), hi.min(interval.1)),
        });
    }
    axes.into_iter().collect()
}

/// If g is a univariate quadratic with negative leading coefficient, its
/// nonnegativity region is the interval between its roots.
fn univariate_interval(g: &Polynomial) -> Option<(usize, (f64, f64))> {
    let vars = g.vars();
    if vars.len() != 1 || vars[0].kind != VarKind::Theta {
        return None;
    }
    let axis = vars[0].index as usize - 1;
    let coeffs = g.univariate_coeffs(vars[0])?;
    if coeffs.len() != 3 {
        return None;
    }
    let (c, b, a) = (coeffs[0], coeffs[1], coeffs[2]);
    if a >= 0.0 {
        return None;
    }
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let r1 = (-b + sq) / (2.0 * a);
    let r2 = (-b - sq) / (2.0 * a);
    Some((axis, (r1.min(r2), r1.max(r2))))
}

/// True when every domain inequality holds at θ.
pub fn in_domain(sys: &UncertainSystem, theta: &[f64]) -> bool {
    sys.domain.iter().all(|(_, g)| g.eval_theta(theta).map(|v| v >= 0.0).unwrap_or(false))
}

/// Shrink a box about its center by the given fraction of each half-width.
pub fn shrink_box(bx: &[(f64, f64)], fraction: f64) -> Vec<(f64, f64)> {
    bx.iter()
        .map(|&(lo, hi)| {
            let c = 0.5 * (lo + hi);
            let h = 0.5 * (hi - lo) * (1.0 - fraction);
            (c - h, c + h)
        })
        .collect()
}

/// All grid points of the box at the given per-axis resolutions, in
/// lexicographic index order (last axis fastest).
pub fn grid_points(bx: &[(f64, f64)], res: &[usize]) -> Vec<Vec<f64>> {
    assert_eq!(bx.len(), res.len());
    assert!(res.iter().all(|&r| r >= 2), "grid resolution must be >= 2 per axis");
    let total: usize = res.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; bx.len()];
    loop {
        let point: Vec<f64> = idx
            .iter()
            .zip(bx.iter().zip(res))
            .map(|(&i, (&(lo, hi), &r))| lo + (hi - lo) * i as f64 / (r - 1) as f64)
            .collect();
        out.push(point);
        // odometer increment, last axis fastest
        let mut k = bx.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < res[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Default analysis grid: the domain box shrunk 1% inside its boundary.
pub fn default_grid(sys: &UncertainSystem, res: &[usize]) -> Option<Vec<Vec<f64>>> {
    let bx = domain_box(sys)?;
    Some(grid_points(&shrink_box(&bx, 0.01), res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{ANALYTIC_EXAMPLE, NUMERIC_EXAMPLE};
    use crate::system::load_system;

    #[test]
    fn numeric_example_box() {
        let sys = load_system(NUMERIC_EXAMPLE).unwrap();
        let bx = domain_box(&sys).unwrap();
        assert!((bx[0].0 + 1.5).abs() < 1e-12 && (bx[0].1 - 1.5).abs() < 1e-12);
        assert!((bx[1].0 + 1.0).abs() < 1e-12 && (bx[1].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_example_box_in_deviation_coords() {
        let sys = load_system(ANALYTIC_EXAMPLE).unwrap();
        let bx = domain_box(&sys).unwrap();
        assert!((bx[0].0 + 0.9).abs() < 1e-9 && (bx[0].1 - 3.0).abs() < 1e-9);
        assert!((bx[1].0 + 0.9).abs() < 1e-9 && (bx[1].1 - 3.0).abs() < 1e-9);
    }

    #[test]
    fn grid_enumeration_order() {
        let pts = grid_points(&[(0.0, 1.0), (0.0, 2.0)], &[2, 3]);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![0.0, 0.0]);
        assert_eq!(pts[1], vec![0.0, 1.0]);
        assert_eq!(pts[2], vec![0.0, 2.0]);
        assert_eq!(pts[3], vec![1.0, 0.0]);
        assert_eq!(pts[5], vec![1.0, 2.0]);
    }

    #[test]
    fn membership() {
        let sys = load_system(NUMERIC_EXAMPLE).unwrap();
        assert!(in_domain(&sys, &[0.0, 0.0]));
        assert!(in_domain(&sys, &[1.5, 1.0]));
        assert!(!in_domain(&sys, &[1.6, 0.0]));
    }
}
