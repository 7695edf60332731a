//! Tabulated inverse-CDF sampling with monotone cubic (PCHIP) interpolation.

/// Knots per table.
pub const TABLE_KNOTS: usize = 1 << 14;

#[derive(Debug, Clone)]
pub struct InverseCdf {
    cdf: Vec<f64>,
    x: Vec<f64>,
    slope: Vec<f64>,
}

impl InverseCdf {
    /// Tabulates `cdf` on `TABLE_KNOTS` uniform knots of [lo, hi].
    pub fn new(lo: f64, hi: f64, cdf: impl Fn(f64) -> f64) -> Self {
        let h = (hi - lo) / (TABLE_KNOTS - 1) as f64;
        let mut fs = Vec::with_capacity(TABLE_KNOTS);
        let mut xs = Vec::with_capacity(TABLE_KNOTS);
        for i in 0..TABLE_KNOTS {
            let x = lo + i as f64 * h;
            let f = cdf(x);
            if fs.last().is_none_or(|&last| f > last) {
                fs.push(f);
                xs.push(x);
            }
        }
        let slope = pchip_slopes(&fs, &xs);
        Self { cdf: fs, x: xs, slope }
    }

    /// Quantile at probability `u`, clamped to the tabulated range.
    pub fn quantile(&self, u: f64) -> f64 {
        let n = self.cdf.len();
        if u <= self.cdf[0] {
            return self.x[0];
        }
        if u >= self.cdf[n - 1] {
            return self.x[n - 1];
        }
        let i = self.cdf.partition_point(|&f| f <= u) - 1;
        let (f0, f1) = (self.cdf[i], self.cdf[i + 1]);
        let h = f1 - f0;
        let t = (u - f0) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.x[i] + h10 * h * self.slope[i] + h01 * self.x[i + 1] + h11 * h * self.slope[i + 1]
    }
}

/// Fritsch–Carlson slopes for monotone data y(x).
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut d = vec![0.0; n];
    if n == 2 {
        d[0] = delta[0];
        d[1] = delta[0];
        return d;
    }
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] > 0.0 {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}
