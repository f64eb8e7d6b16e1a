//! Gauss-Hermite quadrature for integrals against a normal density.

/// Nodes and weights for `∫ f(x) exp(-x²) dx ≈ Σ w_k f(x_k)`, nodes ascending.
///
/// Roots of the orthonormal Hermite polynomial are found by Newton iteration
/// from asymptotic starting guesses, then weights follow from the derivative.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "at least one quadrature node");
    const PI_M4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = PI_M4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    x.reverse();
    w.reverse();
    (x, w)
}

/// Nodes and log-weights for expectations under N(0, 1):
/// `E[f(Z)] ≈ Σ exp(lw_k) f(z_k)` with `z_k = √2 x_k`.
pub fn standard_normal_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_hermite(n);
    let ln_sqrt_pi = 0.5 * std::f64::consts::PI.ln();
    let z = x.iter().map(|v| std::f64::consts::SQRT_2 * v).collect();
    let lw = w.iter().map(|v| v.ln() - ln_sqrt_pi).collect();
    (z, lw)
}
