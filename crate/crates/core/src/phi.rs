//! Exponential-integrator φ-functions, φ_k(z) = Σ_n z^n / (n+k)!, evaluated
//! stably for real z ≤ 0 (and small positive z).

/// Returns (φ0, φ1, φ2, φ3) at z.
pub fn phi0123(z: f64) -> [f64; 4] {
    if z.abs() < 2.0 {
        // φ_k(z) = Σ_n z^n/(n+k)!, 30 terms is exact to roundoff for |z| < 2
        let mut out = [0.0; 4];
        for (k, o) in out.iter_mut().enumerate() {
            let mut term = 1.0 / factorial(k);
            let mut sum = term;
            for n in 1..30 {
                term *= z / (n + k) as f64;
                sum += term;
                if term.abs() < 1e-18 * sum.abs() {
                    break;
                }
            }
            *o = sum;
        }
        out
    } else {
        let e = z.exp();
        let p1 = (e - 1.0) / z;
        let p2 = (p1 - 1.0) / z;
        let p3 = (p2 - 0.5) / z;
        [e, p1, p2, p3]
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_closed_forms_across_the_switch() {
        for &z in &[-1e-8, -0.3, -1.9, -2.1, -7.0, -40.0] {
            let [p0, p1, p2, p3] = phi0123(z);
            let e = z.exp();
            assert!((p0 - e).abs() < 1e-15);
            if z.abs() > 0.5 {
                assert!((p1 - (e - 1.0) / z).abs() < 1e-13);
                assert!((p2 - (e - 1.0 - z) / (z * z)).abs() < 1e-12);
                assert!((p3 - (e - 1.0 - z - z * z / 2.0) / z.powi(3)).abs() < 1e-11);
            }
        }
        let [_, p1, p2, p3] = phi0123(0.0);
        assert_eq!((p1, p2), (1.0, 0.5));
        assert!((p3 - 1.0 / 6.0).abs() < 1e-16);
    }
}
