use inertia_drem::model::*;
use proptest::prelude::*;

fn outage_events(p: &AggParams, time: f64) -> Vec<AggEvent> {
    vec![AggEvent { time, kind: AggEventKind::SetpointStep { delta: -p.mw_to_pu(NOMINAL_OUTAGE_MW) } }]
}

/// Dormand-Prince 5(4) with step-size control, integrating `y' = f(y)` from
/// `t0` to `t1` exactly (the last step is clipped).
fn dopri45(f: &dyn Fn(&[f64; 2]) -> [f64; 2], y: [f64; 2], t0: f64, t1: f64, tol: f64) -> [f64; 2] {
    const C: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const E: [f64; 7] = [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0];
    let mut y = y;
    let mut t = t0;
    let mut h = (t1 - t0).min(1e-3);
    while t < t1 {
        h = h.min(t1 - t);
        let mut k = [[0.0; 2]; 7];
        k[0] = f(&y);
        for s in 0..6 {
            let mut ys = y;
            for j in 0..=s {
                for i in 0..2 {
                    ys[i] += h * C[s][j] * k[j][i];
                }
            }
            k[s + 1] = f(&ys);
        }
        let mut y5 = y;
        let mut err = 0.0f64;
        for i in 0..2 {
            for j in 0..6 {
                y5[i] += h * C[5][j] * k[j][i];
            }
            let e: f64 = (0..7).map(|j| h * E[j] * k[j][i]).sum();
            err = err.max(e.abs() / (tol * (1.0 + y[i].abs())));
        }
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        h *= (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
    }
    y
}

#[test]
fn nadir_matches_adaptive_reference() {
    let p = AggParams::reference();
    let dt = 1e-3;
    let t_event = 10.0;
    let run = simulate_aggregated(&p, 60.0, dt, &outage_events(&p, t_event)).unwrap();

    let gov = p.governor();
    let b1 = p.b1();
    let theta_after = TrueTheta::from_physical(p.h_tot, p.p_m_pfc - p.mw_to_pu(NOMINAL_OUTAGE_MW));
    let u = p.p_m_pfc;
    let rhs = |y: &[f64; 2]| {
        let x = gov.output(y[0], y[1]);
        [theta_after.eta1 * b1 * (x - u) / y[0] + theta_after.eta2 * b1 / y[0], gov.lag_rate(y[0], y[1])]
    };
    // before the event the reference stays at equilibrium
    let mut y = [1.0, 0.0];
    let mut t = t_event;
    let mut max_dev = 0.0f64;
    for s in run.samples.iter().filter(|s| s.t >= t_event - 1e-9).step_by(100) {
        y = dopri45(&rhs, y, t, s.t, 1e-13);
        t = s.t;
        max_dev = max_dev.max((s.omega_av - y[0]).abs());
    }
    assert!(max_dev <= 1e-8, "max deviation {max_dev:e}");

    // dip, then partial recovery
    let (k_min, nadir) = run.samples.iter().enumerate().min_by(|a, b| a.1.omega_av.total_cmp(&b.1.omega_av)).unwrap();
    let last = run.samples.last().unwrap().omega_av;
    assert!(nadir.t > t_event && k_min < run.samples.len() - 1);
    assert!(last > nadir.omega_av && last < 1.0);
    // settles at the droop steady state
    let settled = 1.0 - p.mw_to_pu(NOMINAL_OUTAGE_MW) / p.k_p;
    assert!((last - settled).abs() < 5e-5, "{last} vs {settled}");
}

#[test]
fn integrator_is_fourth_order() {
    let p = AggParams::reference();
    let ev = outage_events(&p, 1.0);
    let at = |dt: f64| {
        let run = simulate_aggregated(&p, 10.0, dt, &ev).unwrap();
        run.samples.last().unwrap().omega_av
    };
    let reference = at(0.1 / 64.0);
    let e1 = (at(0.1) - reference).abs();
    let e2 = (at(0.05) - reference).abs();
    assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
}

#[test]
fn governor_step_response_matches_transfer_function() {
    // step of omega by -0.001 at t = 0; output of (1 + p Tz)/(1 + p Tp) on the
    // droop signal is K_P 0.001 (1 - (1 - Tz/Tp) e^{-t/Tp})
    let p = AggParams::reference();
    let gov = p.governor();
    let omega = p.omega0 - 0.001;
    let amp = p.k_p * 0.001;
    let h = 1e-3;
    let mut g = 0.0f64;
    assert!((gov.output(omega, g) - 0.001153).abs() < 5e-7);
    for k in 1..=20_000 {
        // fine RK4 on the lag alone
        let f = |g: f64| gov.lag_rate(omega, g);
        let (k1, k2) = (f(g), f(g + 0.5 * h * f(g)));
        let k3 = f(g + 0.5 * h * k2);
        let k4 = f(g + h * k3);
        g += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let t = k as f64 * h;
        let exact = amp * (1.0 - (1.0 - gov.lead_ratio()) * (-t / p.t_p).exp());
        assert!((gov.output(omega, g) - exact).abs() < 1e-14, "t = {t}");
    }
}

#[test]
fn governor_dc_gain_after_ten_lags() {
    // After 10 T_p the residual of the lag is (1 - Tz/Tp) e^{-10} |K_P dw|:
    // below 1e-9 pu only for |dw| up to about 1.6e-5 pu.
    let p = AggParams::reference();
    let gov = p.governor();
    for dw in [-1e-5, 1e-5, -1e-3, 2e-3] {
        let omega = p.omega0 + dw;
        let mut state = AggState { omega_av: omega, g_state: 0.0, b1: p.b1() };
        let n = (10.0 * p.t_p / 1e-3).round() as usize;
        let h = 10.0 * p.t_p / n as f64;
        for _ in 0..n {
            let f = |g: f64| gov.lag_rate(omega, g);
            let g = state.g_state;
            let (k1, k2) = (f(g), f(g + 0.5 * h * f(g)));
            let k3 = f(g + 0.5 * h * k2);
            let k4 = f(g + h * k3);
            state.g_state = g + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let target = -p.k_p * dw;
        let residual = (governor_output(&state, &p) - target).abs();
        let analytic = (1.0 - gov.lead_ratio()) * (-10.0f64).exp() * target.abs();
        assert!((residual - analytic).abs() < 1e-14, "dw {dw}: {residual:e} vs {analytic:e}");
        if dw.abs() <= 1.6e-5 {
            assert!(residual <= 1e-9);
        }
    }
}

#[test]
fn equilibrium_held_is_unchanged() {
    let p = AggParams::reference();
    let mut s = AggState::equilibrium(&p);
    for _ in 0..10_000 {
        s = step_aggregated(&s, p.p_m_pfc, &p.theta(), &p, 1e-3).unwrap();
    }
    assert_eq!(s, AggState::equilibrium(&p));
}

proptest! {
    #[test]
    fn power_balance_is_the_fixed_point(
        omega in 0.95f64..1.05,
        g in -0.01f64..0.01,
        h in 1.0f64..10.0,
        p_m in 0.1f64..0.9,
        imbalance in 1e-6f64..1e-2,
    ) {
        let p = AggParams::reference();
        let state = AggState { omega_av: omega, g_state: g, b1: p.b1() };
        let theta = TrueTheta::from_physical(h, p_m);
        let x = governor_output(&state, &p);
        let balanced = agg_derivative(&state, x + p_m, &theta, &p).unwrap();
        prop_assert!(balanced.abs() <= 1e-15, "{}", balanced);
        let off = agg_derivative(&state, x + p_m + imbalance, &theta, &p).unwrap();
        prop_assert!(off < 0.0);
        let expected = -0.5 * imbalance / (h * omega);
        prop_assert!((off - expected).abs() <= 1e-9 * expected.abs());
    }
}
