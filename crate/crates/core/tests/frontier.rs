use nlmv_core::{
    efficient_policy, feasible_strategy, frontier_curve, frontier_variance, lagrange_multiplier, optimal_cost,
    optimal_portfolio, simulate_wealth, FrontierSpec, LsmcConfig, MarketModel, RiccatiCache, SimulationConfig, Side,
    TimeGrid,
};

fn model_a() -> MarketModel {
    MarketModel::constant_1d(0.03, 0.2, 0.2, 0.4).unwrap()
}

#[test]
fn max_min_scan_peaks_at_multiplier() {
    let (p1, p2) = ((-0.10f64).exp(), 0.02f64.exp());
    let rho = (-0.03f64).exp();
    let (x0, k) = (1.0, 1.1);
    let d_star = lagrange_multiplier(p2, x0, k, rho).unwrap();
    let lo = x0 / rho;
    let hi = 2.0 * d_star;
    let n = 10_000;
    let h = (hi - lo) / (n - 1) as f64;
    let (arg, peak) = (0..n)
        .map(|i| {
            let d = lo + h * i as f64;
            (d, optimal_cost(p1, p2, x0, d, rho).unwrap() - (d - k).powi(2))
        })
        .fold((0.0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
    assert!((arg - d_star).abs() <= h);
    let var = frontier_variance(p2, rho, x0, k).unwrap();
    assert!((peak - var).abs() < 1e-6);
    // h(d) never falls below its value at the riskless level
    assert!(peak >= -(x0 / rho - k).powi(2));
}

#[test]
fn frontier_is_a_parabola() {
    let m = model_a();
    let g = TimeGrid::new(1.0, 500).unwrap();
    let cache = RiccatiCache::new();
    let riskless = 0.03f64.exp();
    let ks = [riskless, 1.05, 1.1, 1.2, riskless + 2.0 * (1.2 - riskless)];
    let pts = frontier_curve(&m, &g, 1.0, &ks, &LsmcConfig::default(), &cache).unwrap();
    assert_eq!(pts[0].variance, 0.0);
    assert!((pts[0].d_star - riskless).abs() < 1e-12);
    for w in pts.windows(2) {
        assert!(w[1].variance > w[0].variance);
    }
    for p in &pts[1..] {
        let ratio = p.variance / (p.target - riskless).powi(2);
        assert!((ratio - 24.5033).abs() < 1e-3, "{ratio}");
    }
    assert!((pts[4].variance / pts[3].variance - 4.0).abs() < 1e-9);
    assert!(frontier_curve(&m, &g, 1.0, &[1.0], &LsmcConfig::default(), &cache).is_err());
}

#[test]
fn equal_premia_match_the_classical_policy() {
    let (r, s, th) = (0.04, 0.25, 0.3);
    let m = MarketModel::constant_1d(r, s, th, th).unwrap();
    let g = TimeGrid::new(1.0, 400).unwrap();
    let spec = FrontierSpec { x0: 1.0, target: 1.15 };
    let pol = efficient_policy(&m, &g, spec, &LsmcConfig::default(), &RiccatiCache::new()).unwrap();
    // classical linear-wealth solution: ρ² P = e^{−θ²T}
    let a = (-th * th).exp();
    let d_classical = ((r - th * th).exp() - 1.15) / (a - 1.0);
    assert!((pol.d_value - d_classical).abs() < 1e-9);
    for (t, x) in [(0.0, 1.0), (0.5, 1.2), (0.9, 0.7)] {
        let got = optimal_portfolio(&pol, t, x, 0.0).unwrap().amounts[0];
        let want = -(th / s) * (x - d_classical * (-r * (1.0 - t)).exp());
        assert!((got - want).abs() < 1e-8, "t={t}: {got} vs {want}");
    }
}

#[test]
fn riskless_target_holds_nothing() {
    let m = model_a();
    let g = TimeGrid::new(1.0, 50).unwrap();
    let spec = FrontierSpec { x0: 1.0, target: 0.03f64.exp() };
    let pol = efficient_policy(&m, &g, spec, &LsmcConfig::default(), &RiccatiCache::new()).unwrap();
    assert!(optimal_portfolio(&pol, 0.0, 1.0, 0.0).unwrap().amounts[0].abs() < 1e-12);
}

#[test]
fn feasible_strategies_hit_the_target_mean() {
    let g = TimeGrid::new(1.0, 100).unwrap();
    for (lo, hi, side) in [(0.2, 0.4, Side::Long), (-0.4, -0.2, Side::Short)] {
        let m = MarketModel::constant_1d(0.03, 0.2, lo, hi).unwrap();
        let s = feasible_strategy(&m, &g, 1.0, 1.1, 0, 0).unwrap();
        assert_eq!(s.side, side);
        let rep = simulate_wealth(&m, &s, 1.0, &g, &SimulationConfig::new(20_000, 5)).unwrap();
        assert!((rep.terminal.mean - 1.1).abs() < 3.0 * rep.terminal.se_mean, "{:?}", rep.terminal);
    }
}

#[test]
fn model_a_beta_matches_quadrature() {
    let m = model_a();
    let g = TimeGrid::new(1.0, 1000).unwrap();
    let s = feasible_strategy(&m, &g, 1.0, 1.1, 0, 0).unwrap();
    // ∫₀¹ e^{0.03(1−t)} 0.0016 dt
    let integral = 0.0016 * (0.03f64.exp() - 1.0) / 0.03;
    let beta = (1.1 - 0.03f64.exp()) / integral;
    assert!((s.beta - beta).abs() / beta < 1e-4);
}
