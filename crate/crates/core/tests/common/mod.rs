//! Independent reference values shared by the integration tests.

/// P(a Bessel process of dimension `delta` started at `r0` enters [0, eps] by time `t`).
///
/// Solves u_t = ½u_rr + (δ−1)/(2r)·u_r on r > eps with u(·, eps) = 1 by implicit
/// Euler in y = ln r, on geometrically growing time steps.
#[allow(dead_code)]
pub fn first_passage_probability(delta: f64, eps: f64, r0: f64, t: f64) -> f64 {
    let (m, k) = (2000usize, 2000usize);
    let far = (10.0 * r0).max(r0 + 12.0 * t.sqrt());
    let (y0, y1) = (eps.ln(), far.ln());
    let h = (y1 - y0) / m as f64;
    let ys: Vec<f64> = (1..m).map(|i| y0 + i as f64 * h).collect();
    let n = ys.len();
    // u_t = ½e^{−2y}(u_yy + (δ−2)u_y)
    let coef = |y: f64| {
        let c = 0.5 * (-2.0 * y).exp();
        (
            c * (1.0 / (h * h) - (delta - 2.0) / (2.0 * h)),
            -2.0 * c / (h * h),
            c * (1.0 / (h * h) + (delta - 2.0) / (2.0 * h)),
        )
    };
    let bands: Vec<(f64, f64, f64)> = ys.iter().map(|y| coef(*y)).collect();
    let mut u = vec![0.0; n];
    let mut prev_t = 0.0;
    let ratio = (t / 1e-9).powf(1.0 / (k - 1) as f64);
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for step in 0..k {
        let tk = 1e-9 * ratio.powi(step as i32);
        let dt = tk - prev_t;
        prev_t = tk;
        // Thomas algorithm for (I − dt·L)u' = u + dt·boundary.
        for i in 0..n {
            let (lo, mid, up) = bands[i];
            let (a, b, c) = (-dt * lo, 1.0 - dt * mid, -dt * up);
            let rhs = u[i] + if i == 0 { dt * lo } else { 0.0 };
            let (a, rhs_prev, c_prev) = if i == 0 {
                (0.0, 0.0, 0.0)
            } else {
                (a, d_prime[i - 1], c_prime[i - 1])
            };
            let denom = b - a * c_prev;
            c_prime[i] = c / denom;
            d_prime[i] = (rhs - a * rhs_prev) / denom;
        }
        u[n - 1] = d_prime[n - 1];
        for i in (0..n - 1).rev() {
            u[i] = d_prime[i] - c_prime[i] * u[i + 1];
        }
    }
    let y = r0.ln();
    let j = ys.partition_point(|v| *v < y).clamp(1, n - 1);
    let s = (y - ys[j - 1]) / (ys[j] - ys[j - 1]);
    u[j - 1] + s * (u[j] - u[j - 1])
}
