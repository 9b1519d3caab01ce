//! Derivative-free reference minimizer for the kinked Hamiltonian objective,
//! independent of the active-set solver under test.

/// `P π'σσ'π + 2s[P((π⁺)'μ̲ − (π⁻)'μ̄) + π'σΛ]` with `s = +1` (first) or `−1` (second).
pub fn objective(sign: f64, p: f64, lambda: &[f64], sigma: &[Vec<f64>], mu_lo: &[f64], mu_hi: &[f64], pi: &[f64]) -> f64 {
    let d = pi.len();
    // u = σ'π
    let u: Vec<f64> = (0..d).map(|j| (0..d).map(|i| sigma[i][j] * pi[i]).sum()).collect();
    let quad: f64 = u.iter().map(|v| v * v).sum::<f64>() * p;
    let kink: f64 = (0..d).map(|i| if pi[i] >= 0.0 { pi[i] * mu_lo[i] } else { pi[i] * mu_hi[i] }).sum();
    let cross: f64 = u.iter().zip(lambda).map(|(a, b)| a * b).sum();
    quad + 2.0 * sign * (p * kink + cross)
}

fn box_radius(p: f64, lambda: &[f64], sigma: &[Vec<f64>], mu_lo: &[f64], mu_hi: &[f64]) -> f64 {
    // crude bound on any orthant minimizer: |π| ≤ (|μ|P + |σ||Λ|)/(P λ_min(σσ'))
    let d = sigma.len();
    let fro: f64 = sigma.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let mu: f64 = mu_lo.iter().chain(mu_hi).map(|v| v * v).sum::<f64>().sqrt();
    let lam: f64 = lambda.iter().map(|v| v * v).sum::<f64>().sqrt();
    let min_diag = (0..d).map(|i| sigma[i][i].abs()).fold(f64::INFINITY, f64::min);
    // lower-triangular σ: smallest singular value ≥ something; use diag² / (1 + fro²) as a safe proxy
    let lmin = (min_diag * min_diag / (1.0 + fro * fro)).max(1e-6);
    2.0 * (p * mu + fro * lam) / (p * lmin) + 1.0
}

/// Minimum over `R^d` (`d ≤ 2`) by a dense grid on each closed orthant followed by
/// compass search restricted to that orthant.
pub fn brute_force(sign: f64, p: f64, lambda: &[f64], sigma: &[Vec<f64>], mu_lo: &[f64], mu_hi: &[f64]) -> f64 {
    let d = lambda.len();
    assert!(d == 1 || d == 2);
    let r = box_radius(p, lambda, sigma, mu_lo, mu_hi);
    let f = |pi: &[f64]| objective(sign, p, lambda, sigma, mu_lo, mu_hi, pi);
    let grid = if d == 1 { 2001 } else { 121 };
    let mut best = f64::INFINITY;
    for bits in 0..(1u32 << d) {
        let signs: Vec<f64> = (0..d).map(|i| if bits >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
        let clip = |x: &mut Vec<f64>| {
            for i in 0..d {
                x[i] = if signs[i] > 0.0 { x[i].max(0.0) } else { x[i].min(0.0) };
            }
        };
        let h = r / (grid - 1) as f64;
        let mut x = vec![0.0; d];
        let mut fx = f(&x);
        let mut idx = vec![0usize; d];
        loop {
            let cand: Vec<f64> = (0..d).map(|i| signs[i] * h * idx[i] as f64).collect();
            let v = f(&cand);
            if v < fx {
                fx = v;
                x = cand;
            }
            let mut i = 0;
            while i < d {
                idx[i] += 1;
                if idx[i] < grid {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
            if i == d {
                break;
            }
        }
        let mut step = h;
        while step > 1e-13 * (1.0 + r) {
            let mut improved = false;
            for i in 0..d {
                for dir in [1.0, -1.0] {
                    let mut y = x.clone();
                    y[i] += dir * step;
                    clip(&mut y);
                    let v = f(&y);
                    if v < fx - 1e-16 * fx.abs() {
                        fx = v;
                        x = y;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        best = best.min(fx);
    }
    best
}
