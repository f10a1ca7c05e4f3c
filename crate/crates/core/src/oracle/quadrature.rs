use crate::error::{Error, Result};

/// Smallest coordinate ratio kept by [`simplex_quadrature`]. Integration
/// runs in log-ratio coordinates, where this margin costs nothing: the
/// integrand decays exponentially there, and the excluded tails carry
/// mass of order `margin^τ`.
pub const QUADRATURE_MARGIN: f64 = 1e-12;

fn simpson_weights(intervals: usize) -> Vec<f64> {
    (0..=intervals)
        .map(|i| {
            if i == 0 || i == intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        })
        .collect()
}

/// Integral of a density over the open simplex `Δ^{k-1}`, `k ∈ {2, 3}`,
/// with respect to Lebesgue measure on the first `k - 1` coordinates.
///
/// The simplex is mapped to `R^{k-1}` by additive log-ratios
/// `t_i = ln(y_i / y_k)`, `dy = y_1 ⋯ y_k dt`, and the transformed
/// integrand is integrated by composite Simpson on the square
/// `|t_i| ≤ ln((1 - m) / m)` with `resolution` intervals per axis.
pub fn simplex_quadrature<F>(density: F, k: usize, resolution: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if !(2..=3).contains(&k) {
        return Err(Error::InvalidArgument(format!("quadrature supports k = 2 or 3, got {k}")));
    }
    if resolution < 2 {
        return Err(Error::InvalidArgument("resolution must be >= 2".into()));
    }
    let r = resolution + resolution % 2;
    let bound = ((1.0 - QUADRATURE_MARGIN) / QUADRATURE_MARGIN).ln();
    let h = 2.0 * bound / r as f64;
    let w = simpson_weights(r);
    let t = |i: usize| -bound + i as f64 * h;

    let mut total = 0.0;
    if k == 2 {
        let mut y = [0.0; 2];
        for (i, wi) in w.iter().enumerate() {
            let ti = t(i);
            // y_1 = σ(t), y_2 = σ(-t), computed without cancellation
            y[0] = 1.0 / (1.0 + (-ti).exp());
            y[1] = 1.0 / (1.0 + ti.exp());
            let v = density(&y) * y[0] * y[1];
            total += wi * v;
        }
        total *= h / 3.0;
    } else {
        let mut y = [0.0; 3];
        for (i, wi) in w.iter().enumerate() {
            let t1 = t(i);
            let mut row = 0.0;
            for (j, wj) in w.iter().enumerate() {
                let t2 = t(j);
                let m = t1.max(t2).max(0.0);
                let (e1, e2, e3) = ((t1 - m).exp(), (t2 - m).exp(), (-m).exp());
                let s = e1 + e2 + e3;
                y[0] = e1 / s;
                y[1] = e2 / s;
                y[2] = e3 / s;
                row += wj * density(&y) * y[0] * y[1] * y[2];
            }
            total += wi * row;
        }
        total *= (h / 3.0) * (h / 3.0);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("quadrature".into()));
    }
    Ok(total)
}
