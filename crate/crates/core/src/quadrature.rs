//! Gauss-Legendre rules on intervals.

use crate::{Error, Result};
use gauss_quad::legendre::GaussLegendre;

/// `(node, weight)` pairs of the `n`-point rule on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> Result<Vec<(f64, f64)>> {
    match n {
        0 => Err(Error::InvalidParameter("quadrature order must be positive".into())),
        1 => Ok(vec![(0.0, 2.0)]),
        _ => {
            let rule = GaussLegendre::new(n).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let mut pairs = rule.into_node_weight_pairs();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            Ok(pairs)
        }
    }
}

/// The `n`-point rule repeated on `pieces` equal subintervals of `[a, b]`.
pub fn composite(n: usize, pieces: usize, a: f64, b: f64) -> Result<Vec<(f64, f64)>> {
    if pieces == 0 {
        return Err(Error::InvalidParameter("composite rule needs at least one piece".into()));
    }
    let base = gauss_legendre(n)?;
    let step = (b - a) / pieces as f64;
    let mut out = Vec::with_capacity(n * pieces);
    for p in 0..pieces {
        let mid = a + (p as f64 + 0.5) * step;
        for &(x, w) in &base {
            out.push((mid + 0.5 * step * x, 0.5 * step * w));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_for_high_degree_polynomials() {
        for n in 1..12 {
            let rule = gauss_legendre(n).unwrap();
            for deg in 0..2 * n {
                let q: f64 = rule.iter().map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn composite_integrates_exponential() {
        let rule = composite(4, 5, 0.0, 2.0).unwrap();
        let q: f64 = rule.iter().map(|(x, w)| w * x.exp()).sum();
        assert_relative_eq!(q, 2f64.exp() - 1.0, max_relative = 1e-12);
    }
}
