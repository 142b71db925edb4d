//! Clamped B-spline bases for numeric covariates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

/// A clamped B-spline basis on `[boundary_knots.0, boundary_knots.1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub degree: usize,
    pub interior_knots: Vec<f64>,
    pub boundary_knots: (f64, f64),
}

impl SplineBasis {
    pub fn new(degree: usize, interior_knots: Vec<f64>, boundary_knots: (f64, f64)) -> Result<Self> {
        let (a, b) = boundary_knots;
        if degree == 0 {
            return Err(Error::InvalidInput("spline degree must be at least 1".into()));
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidInput(format!("invalid boundary knots ({a}, {b})")));
        }
        let mut prev = a;
        for &k in &interior_knots {
            if !(k > prev && k < b) {
                return Err(Error::InvalidInput(
                    "interior knots must be strictly increasing and strictly inside the boundary"
                        .into(),
                ));
            }
            prev = k;
        }
        Ok(SplineBasis {
            degree,
            interior_knots,
            boundary_knots,
        })
    }

    pub fn basis_dim(&self) -> usize {
        self.interior_knots.len() + self.degree + 1
    }

    /// Full knot vector with boundary knots repeated `degree + 1` times.
    pub fn knot_vector(&self) -> Vec<f64> {
        let (a, b) = self.boundary_knots;
        let mut t = vec![a; self.degree + 1];
        t.extend_from_slice(&self.interior_knots);
        t.extend(std::iter::repeat_n(b, self.degree + 1));
        t
    }

    /// Basis row at `x`, clamping to the boundary (with a warning) when outside.
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let (row, clamped) = self.evaluate_clamped(x);
        if clamped {
            log::warn!(
                "spline evaluation at {x} outside [{}, {}]; clamped to boundary",
                self.boundary_knots.0,
                self.boundary_knots.1
            );
        }
        row
    }

    /// Basis row at `x` and whether `x` had to be clamped.
    pub fn evaluate_clamped(&self, x: f64) -> (Vec<f64>, bool) {
        let mut out = vec![0.0; self.basis_dim()];
        let clamped = self.evaluate_into(x, &mut out);
        (out, clamped)
    }

    /// Writes the basis row into `out` (length `basis_dim`); returns true if clamped.
    pub fn evaluate_into(&self, x: f64, out: &mut [f64]) -> bool {
        let (a, b) = self.boundary_knots;
        let clamped = !(a..=b).contains(&x);
        let x = x.clamp(a, b);
        let p = self.degree;
        let t = self.knot_vector();
        let n = self.basis_dim();
        // span index mu with t[mu] <= x < t[mu+1]; the right boundary uses the last span
        let mu = if x >= b {
            n - 1
        } else {
            let mut mu = p;
            while mu < n - 1 && t[mu + 1] <= x {
                mu += 1;
            }
            mu
        };
        // Cox-de Boor triangle for the p+1 nonzero functions N_{mu-p..=mu}
        let mut vals = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        vals[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[mu + 1 - j];
            right[j] = t[mu + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { vals[r] / denom } else { 0.0 };
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, v) in vals.into_iter().enumerate() {
            out[mu - p + r] = v.max(0.0);
        }
        clamped
    }
}

/// Builds a basis with interior knots at equally spaced quantiles of `values`
/// and returns it with the evaluated design columns (`columns[j][i]`).
pub fn build_basis(
    values: &[f64],
    degree: usize,
    n_interior_knots: usize,
) -> Result<(SplineBasis, Vec<Vec<f64>>)> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spline input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Degenerate(
            "spline input needs at least two distinct values".into(),
        ));
    }
    if distinct.len() < n_interior_knots + 2 {
        return Err(Error::Degenerate(format!(
            "{} distinct values cannot support {n_interior_knots} interior knots",
            distinct.len()
        )));
    }
    let boundary = (sorted[0], sorted[sorted.len() - 1]);
    let knots: Vec<f64> = (1..=n_interior_knots)
        .map(|j| quantile_sorted(&sorted, j as f64 / (n_interior_knots + 1) as f64))
        .collect();
    let basis = SplineBasis::new(degree, knots, boundary).map_err(|_| {
        Error::Degenerate("quantile knots coincide; too few distinct values for the knot count".into())
    })?;
    let dim = basis.basis_dim();
    let mut columns = vec![vec![0.0; values.len()]; dim];
    let mut row = vec![0.0; dim];
    for (i, &x) in values.iter().enumerate() {
        basis.evaluate_into(x, &mut row);
        for j in 0..dim {
            columns[j][i] = row[j];
        }
    }
    Ok((basis, columns))
}
