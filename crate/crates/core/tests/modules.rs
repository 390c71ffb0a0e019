use nonlocal_sir::classic_sir::{i_of_s, rk4_at_times, s_min, simulate_rk4, sis_closed_form, SirParams, SisParams};
use nonlocal_sir::nonlocal_time::{i_of_s_nonlocal, solve_volterra, CdfKernel, SKernel};
use nonlocal_sir::numerics::{detect_peaks_in, geomspace, linspace, DiffOrder, finite_difference};
use nonlocal_sir::peak_construction::{construct, verify_profile, GridSpec, PeakSpec};
use nonlocal_sir::s_domain::{forward_profile, inverse_profile, s_of_tau, tau_of_s, PROFILE_TOL};
use nonlocal_sir::tau_model::{i1_exponential, max_principle_check, AdmissibleKernel};
use nonlocal_sir::tau_scale::{closed_form, reconstruct_with_tau, tau_infinity};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = SirParams> {
    (0.2f64..3.0, 0.05f64..2.0, 0.3f64..0.98, 0.005f64..0.02)
        .prop_map(|(l, g, s0, i0)| SirParams::new(l, g, s0, i0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rk4_conserves_population(p in params()) {
        let traj = simulate_rk4(&p, 10.0, 0.01).unwrap();
        prop_assert!(traj.max_conservation_error() <= 1e-12);
        prop_assert!(traj.s.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn horizon_root_and_closed_form(p in params()) {
        let tau_inf = tau_infinity(&p).unwrap();
        let residual = p.s0() + p.i0() - p.s0() * (-p.lambda() * tau_inf).exp() - p.gamma() * tau_inf;
        prop_assert!(residual.abs() <= 1e-12);
        for tau in linspace(0.0, tau_inf, 50) {
            let (s1, i1) = closed_form(&p, tau).unwrap();
            prop_assert!(s1 + i1 <= p.s0() + p.i0() + 1e-15);
            prop_assert!(i1 >= -1e-12);
        }
    }

    #[test]
    fn rescaled_clock_matches_rk4(p in params()) {
        let (_, traj) = reconstruct_with_tau(&p, 300, 0.99, 1e-12).unwrap();
        let oracle = rk4_at_times(&p, &traj.t, 1e-3).unwrap();
        for (k, (s, i)) in oracle.iter().enumerate() {
            prop_assert!((traj.s[k] - s).abs() < 1e-6);
            prop_assert!((traj.i[k] - i).abs() < 1e-6);
        }
    }

    #[test]
    fn classic_matching_kernel_reproduces_phase_curve(p in params(), frac in 0.05f64..0.95) {
        let lo = s_min(&p).unwrap();
        let s = lo + frac * (p.s0() - lo);
        let kernel = SKernel::classic_matching(&p);
        let nonlocal = i_of_s_nonlocal(&kernel, &p, s).unwrap();
        prop_assert!((nonlocal - i_of_s(&p, s).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn exponential_tau_kernel_obeys_max_principle(p in params(), rate in 0.05f64..4.0) {
        let k = AdmissibleKernel::exp_tau(rate).unwrap();
        let grid = linspace(0.0, 20.0, 60);
        let report = max_principle_check(&p, &k, &grid, 1e-12).unwrap();
        prop_assert!(report.min_margin >= -1e-9);
        for &tau in &grid {
            prop_assert!(i1_exponential(&p, rate, tau) >= 0.0);
        }
    }

    #[test]
    fn s_and_tau_are_inverse(lambda in 0.1f64..5.0, tau in 0.0f64..10.0) {
        let s = s_of_tau(lambda, tau).unwrap();
        prop_assert!((tau_of_s(lambda, s).unwrap() - tau).abs() <= 1e-12 * (1.0 + tau));
    }

    #[test]
    fn sis_stays_in_unit_interval(l in 0.1f64..3.0, g in 0.0f64..1.0, mu in 0.0f64..1.0, s0 in 0.0f64..1.0, tau in 0.0f64..20.0) {
        let p = SisParams::new(l, g, mu, s0).unwrap();
        let (s, i) = sis_closed_form(&p, tau).unwrap();
        prop_assert!((s + i - 1.0).abs() < 1e-15);
        prop_assert!(s >= -1e-15);
    }
}

#[test]
fn volterra_with_exponential_cdf_tracks_rk4() {
    let p = SirParams::new(1.0, 0.5, 0.99, 0.01).unwrap();
    let traj = solve_volterra(&p, &CdfKernel::exponential(0.5).unwrap(), 5e-3, 25.0).unwrap();
    let oracle = rk4_at_times(&p, &traj.t, 5e-4).unwrap();
    let err = oracle
        .iter()
        .enumerate()
        .map(|(k, (s, i))| (traj.s[k] - s).abs().max((traj.i[k] - i).abs()))
        .fold(0.0, f64::max);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn constructed_profiles_round_trip_through_the_kernel() {
    for spec in [
        PeakSpec::rough(2.0, 2),
        PeakSpec::precise(2.0, (2.0, 10.0), vec![3.0, 5.0, 8.0]),
        PeakSpec::infinite(2.0, (2.0, 10.0), 5.0, 4),
    ] {
        let built = construct(&spec).unwrap();
        let g = inverse_profile(&built.profile, spec.beta, PROFILE_TOL).unwrap();
        let back = forward_profile(&g, spec.beta, PROFILE_TOL).unwrap();
        let nodes = geomspace(1.0, 1e3, 1000);
        let a = built.profile.sample(&nodes).unwrap();
        let b = back.sample(&nodes).unwrap();
        let err = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-8, "{:?}: {err}", spec.mode);
    }
}

#[test]
fn precise_peaks_are_strict_critical_points() {
    let spec = PeakSpec::precise(2.0, (2.0, 10.0), vec![3.0, 5.0, 8.0]);
    let built = construct(&spec).unwrap();
    let f = |s: f64| built.profile.value(s).unwrap();
    let delta = built.summary.delta0.unwrap();
    let h = 1e-3 * delta;
    for &s in &spec.locations {
        let first = finite_difference(f, s, h, DiffOrder::First);
        let second = finite_difference(f, s, h, DiffOrder::Second);
        assert!(first.abs() < 1e-9, "I'({s}) = {first}");
        assert!(second < 0.0, "I''({s}) = {second}");
    }
}

#[test]
fn construction_is_deterministic() {
    let spec = PeakSpec::precise(2.0, (2.0, 10.0), vec![4.0, 7.0]);
    let a = construct(&spec).unwrap();
    let b = construct(&spec).unwrap();
    let nodes = linspace(1.0, 20.0, 500);
    assert_eq!(a.profile.sample(&nodes).unwrap(), b.profile.sample(&nodes).unwrap());
    let ra = verify_profile(&a.profile, 2.0, &GridSpec::default()).unwrap();
    let rb = verify_profile(&b.profile, 2.0, &GridSpec::default()).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(ra.peaks_found.len(), 2);
}

#[test]
fn classic_profile_has_a_single_peak() {
    let p = SirParams::new(1.0, 0.5, 0.99, 0.01).unwrap();
    let traj = simulate_rk4(&p, 40.0, 1e-2).unwrap();
    assert_eq!(detect_peaks_in(&traj.t, &traj.i).len(), 1);
}
