//! Central finite differences, used as an independent oracle for the
//! analytic derivatives and by the `check` experiment.

/// Central-difference gradient of a scalar function.
pub fn gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Central-difference directional derivative of a vector function.
pub fn directional(mut f: impl FnMut(&[f64]) -> Vec<f64>, x: &[f64], dir: &[f64], h: f64) -> Vec<f64> {
    let xp: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + h * d).collect();
    let xm: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a - h * d).collect();
    let fp = f(&xp);
    let fm = f(&xm);
    fp.iter().zip(&fm).map(|(p, m)| (p - m) / (2.0 * h)).collect()
}

/// Largest coordinate deviation relative to the larger of the two vectors'
/// max-norms.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a
        .iter()
        .chain(b)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_gradient() {
        let g = gradient(|x| x[0].powi(3) + 2.0 * x[1], &[2.0, 5.0], 1e-5);
        assert!((g[0] - 12.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn rel_err_is_scale_free() {
        assert_eq!(rel_err(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((rel_err(&[100.0, 1.0], &[100.0, 2.0]) - 0.01).abs() < 1e-15);
    }
}
