//! Small least-squares helpers shared by the benches and the phase fits.

/// Least squares `y ~ sum_j c_j cols[j]`; returns coefficients and residual RMS.
///
/// Solved through a Householder QR of the design matrix, which keeps the nearly collinear
/// `(1, log t, 1/t)` designs of the phase fits well conditioned.
pub fn least_squares(cols: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, f64) {
    let n = y.len();
    let p = cols.len();
    assert!(cols.iter().all(|c| c.len() == n), "column length mismatch");
    assert!(n >= p, "underdetermined fit");
    // column-major copy of the design and the right-hand side
    let mut a: Vec<Vec<f64>> = cols.to_vec();
    let mut b = y.to_vec();
    for j in 0..p {
        let norm = (j..n).map(|i| a[j][i] * a[j][i]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..n).map(|i| a[j][i]).collect();
        v[0] -= alpha;
        let vn = v.iter().map(|x| x * x).sum::<f64>();
        if vn == 0.0 {
            continue;
        }
        for col in a.iter_mut().skip(j) {
            let d: f64 = (j..n).map(|i| v[i - j] * col[i]).sum::<f64>() * 2.0 / vn;
            for i in j..n {
                col[i] -= d * v[i - j];
            }
        }
        let d: f64 = (j..n).map(|i| v[i - j] * b[i]).sum::<f64>() * 2.0 / vn;
        for i in j..n {
            b[i] -= d * v[i - j];
        }
    }
    let mut c = vec![0.0; p];
    for j in (0..p).rev() {
        let s: f64 = ((j + 1)..p).map(|l| a[l][j] * c[l]).sum();
        c[j] = if a[j][j] != 0.0 { (b[j] - s) / a[j][j] } else { 0.0 };
    }
    let rss: f64 = (0..n)
        .map(|i| {
            let model: f64 = (0..p).map(|j| c[j] * cols[j][i]).sum();
            (y[i] - model).powi(2)
        })
        .sum();
    (c, (rss / n as f64).sqrt())
}

/// Straight line `y ~ a + b x`; returns `(b, a, residual_rms)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let (c, r) = least_squares(&[vec![1.0; x.len()], x.to_vec()], y);
    (c[1], c[0], r)
}

/// Slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).0
}
