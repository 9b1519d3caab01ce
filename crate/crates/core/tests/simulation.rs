use std::sync::Arc;

use nlmv_core::{
    optimal_cost, simulate_wealth, solve_riccati_ode, FeedbackPolicy, MarketModel, SimulationConfig, TimeGrid, Which,
};

fn model_a() -> MarketModel {
    MarketModel::constant_1d(0.03, 0.2, 0.2, 0.4).unwrap()
}

fn policy(m: &MarketModel, g: &TimeGrid, d: f64) -> FeedbackPolicy {
    let s1 = Arc::new(solve_riccati_ode(m, Which::H1, g).unwrap());
    let s2 = Arc::new(solve_riccati_ode(m, Which::H2, g).unwrap());
    FeedbackPolicy::new(m, g, d, s1, s2).unwrap()
}

fn terminal(m: &MarketModel, p: &FeedbackPolicy, g: &TimeGrid, x0: f64, paths: usize, seed: u64) -> Vec<f64> {
    let cfg = SimulationConfig { paths, seed, keep_terminal: true };
    simulate_wealth(m, p, x0, g, &cfg).unwrap().terminal_samples.unwrap()
}

#[test]
fn deviation_scales_path_by_path() {
    let m = model_a();
    let g = TimeGrid::new(1.0, 50).unwrap();
    let d = 2.5;
    let rho = (-0.03f64).exp();
    let p = policy(&m, &g, d);
    for y0 in [-0.4, 0.3] {
        let base = terminal(&m, &p, &g, d * rho + y0, 2000, 4);
        for alpha in [0.5, 3.0] {
            let scaled = terminal(&m, &p, &g, d * rho + alpha * y0, 2000, 4);
            for (a, b) in base.iter().zip(&scaled) {
                let (ya, yb) = (a - d, b - d);
                assert!((yb - alpha * ya).abs() <= 1e-9 * (1.0 + ya.abs()), "{ya} {yb}");
            }
        }
    }
}

#[test]
fn deviation_keeps_its_sign() {
    let m = model_a();
    let g = TimeGrid::new(1.0, 100).unwrap();
    let d = 2.0;
    let rho = (-0.03f64).exp();
    let p = policy(&m, &g, d);
    let below = simulate_wealth(&m, &p, d * rho - 0.5, &g, &SimulationConfig::new(5000, 1)).unwrap();
    assert_eq!(below.max_y_plus, Some(0.0));
    let above = simulate_wealth(&m, &p, d * rho + 0.5, &g, &SimulationConfig::new(5000, 1)).unwrap();
    assert_eq!(above.max_y_minus, Some(0.0));
}

#[test]
fn efficient_moments_close_to_prediction() {
    let m = model_a();
    let g = TimeGrid::new(1.0, 100).unwrap();
    let d = ((-0.01f64).exp() - 1.1) / ((-0.04f64).exp() - 1.0);
    let p = policy(&m, &g, d);
    let rep = simulate_wealth(&m, &p, 1.0, &g, &SimulationConfig::new(40_000, 21)).unwrap();
    assert!((rep.terminal.mean - 1.1).abs() < 4.0 * rep.terminal.se_mean);
    let var_tol = (4.0 * rep.terminal.se_variance).max(0.03 * 0.11851);
    assert!((rep.terminal.variance - 0.11851).abs() < var_tol, "{:?}", rep.terminal);
    let [sq, se] = rep.squared_deviation.unwrap();
    let cost = optimal_cost(p.sol1.p0(), p.sol2.p0(), 1.0, d, (-0.03f64).exp()).unwrap();
    assert!((sq - cost).abs() < (4.0 * se).max(0.03 * cost));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let m = model_a();
    let g = TimeGrid::new(1.0, 20).unwrap();
    let p = policy(&m, &g, 2.8);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| terminal(&m, &p, &g, 1.0, 5000, 8))
    };
    assert_eq!(run(1), run(3));
}

/// Exact two-period problem with amounts held constant over each period and
/// the second amount chosen optimally for each realized wealth.
fn two_period_cost(a0: f64, x0: f64, d: f64) -> f64 {
    let (r, s, mu_lo, mu_hi, h) = (0.03f64, 0.2, 0.04, 0.08, 0.5);
    let growth = (r * h).exp();
    let k = (growth - 1.0) / r;
    let var_unit = s * s * ((2.0 * r * h).exp() - 1.0) / (2.0 * r);
    let drift = |a: f64| if a >= 0.0 { a * mu_lo * k } else { a * mu_hi * k };
    let last = |x: f64| {
        let m = x * growth - d;
        let long = (-m * mu_lo * k / (mu_lo * mu_lo * k * k + var_unit)).max(0.0);
        let short = (-m * mu_hi * k / (mu_hi * mu_hi * k * k + var_unit)).min(0.0);
        [long, short].iter().map(|&a| (m + drift(a)).powi(2) + a * a * var_unit).fold(f64::INFINITY, f64::min)
    };
    let mean1 = x0 * growth + drift(a0);
    let sd1 = a0.abs() * var_unit.sqrt();
    if sd1 == 0.0 {
        return last(mean1);
    }
    let n = 4001;
    let dz = 16.0 / (n - 1) as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let z = -8.0 + dz * i as f64;
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        acc += w * last(mean1 + sd1 * z) * (-0.5 * z * z).exp();
    }
    acc * dz / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn two_period_policies_do_not_beat_the_optimal_cost() {
    let m = model_a();
    let g = TimeGrid::new(1.0, 1000).unwrap();
    let p1 = solve_riccati_ode(&m, Which::H1, &g).unwrap().p0();
    let p2 = solve_riccati_ode(&m, Which::H2, &g).unwrap().p0();
    let bound = optimal_cost(p1, p2, 1.0, 0.0, (-0.03f64).exp()).unwrap();
    assert!((bound - (-0.10f64).exp()).abs() < 1e-8);
    let best = (0..=400).map(|i| two_period_cost(-8.0 + 0.04 * i as f64, 1.0, 0.0)).fold(f64::INFINITY, f64::min);
    assert!(best >= bound - 1e-9, "{best} < {bound}");
    // the other branch would claim a cost the toy can beat
    assert!(best < p2 * 1.0);
}
