use std::io::Write;

use approx::assert_abs_diff_eq;
use voltvar::branchflow::{power_loss, sweep_solve, DEFAULT_SWEEP_MAX_ITER, DEFAULT_SWEEP_TOL};
use voltvar::conic::InteriorPoint;
use voltvar::controller::ScheduleKind;
use voltvar::network::PriceSchedule;
use voltvar::sim::{
    convergence_interval, gen_gaussian, realization_seed, run_experiment, run_monte_carlo, steady_state_mean,
    true_cost, ControllerKind, InjectionSource, Scenario, StochasticConfig, TraceData, TraceKind,
};
use voltvar::{fixtures, Error};

fn solver() -> InteriorPoint {
    InteriorPoint::default()
}

#[test]
fn noise_free_observations_are_nominal() {
    let net = fixtures::feeder6();
    let sc = Scenario::from_network(&net, 0.0, 5, 0, 3).unwrap();
    for t in 0..5 {
        let inj = gen_gaussian(&sc, t).unwrap();
        assert_eq!(inj.true_p, sc.nominal_p);
        assert_eq!(inj.observed_p, sc.nominal_p);
        assert_eq!(inj.true_qc, sc.nominal_qc);
        assert_eq!(inj.observed_qc, sc.nominal_qc);
    }
    assert!(gen_gaussian(&sc, 5).is_err());
}

#[test]
fn relative_noise_std() {
    let net = fixtures::feeder15();
    let draws = 10_000;
    let sc = Scenario::from_network(&net, 0.3, draws, 0, 42).unwrap();
    let n = net.n();
    let mut sum = vec![0.0; 2 * n];
    let mut sq = vec![0.0; 2 * n];
    for t in 0..draws {
        let inj = gen_gaussian(&sc, t).unwrap();
        for (i, v) in inj.true_p.iter().chain(&inj.true_qc).enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    let nominal: Vec<f64> = sc.nominal_p.iter().chain(&sc.nominal_qc).copied().collect();
    for i in 0..2 * n {
        let mean = sum[i] / draws as f64;
        let var = (sq[i] / draws as f64 - mean * mean) * draws as f64 / (draws - 1) as f64;
        let want = 0.3 * nominal[i].abs();
        if want == 0.0 {
            assert_eq!(var, 0.0);
            continue;
        }
        let rel = (var.sqrt() - want).abs() / want;
        assert!(rel <= 0.02, "entry {i}: std {} vs {want}", var.sqrt());
    }
}

#[test]
fn delay_is_bit_exact() {
    let net = fixtures::feeder6();
    let sc = Scenario::from_network(&net, 0.3, 20, 2, 9).unwrap();
    let undelayed = Scenario {
        delay_intervals: 0,
        ..sc.clone()
    };
    for t in 0..20 {
        let inj = gen_gaussian(&sc, t).unwrap();
        if t < 2 {
            assert_eq!(inj.observed_p, sc.nominal_p);
            assert_eq!(inj.observed_qc, sc.nominal_qc);
        } else {
            let past = gen_gaussian(&undelayed, t - 2).unwrap();
            assert_eq!(inj.observed_p, past.true_p);
            assert_eq!(inj.observed_qc, past.true_qc);
        }
        assert_eq!(inj.true_p, gen_gaussian(&undelayed, t).unwrap().true_p);
    }
}

#[test]
fn reactive_price_is_one_eightieth_of_loss_price() {
    let net = fixtures::feeder6();
    // cents: loss price 6.6 per kWh, support price one eightieth of it
    let prices = PriceSchedule::uniform(&net, 6.6, 6.6 / 80.0).unwrap();
    assert_abs_diff_eq!(prices.c_tilde[1], 0.0825, epsilon = 1e-15);
    let (p, qc) = net.nominal_injections();
    let mut setpoint = vec![0.0; net.n()];
    setpoint[1] = 1.0 / net.base_kva();
    let c = true_cost(&net, &prices, &p, &qc, &setpoint).unwrap();
    assert_abs_diff_eq!(c.reactive_cost, 0.0825, epsilon = 1e-12);
    assert_abs_diff_eq!(c.cost, 6.6 * c.loss_pu * net.base_kva() + 0.0825, epsilon = 1e-12);
}

#[test]
fn zero_setpoint_zero_price_is_pure_loss() {
    let net = fixtures::feeder15();
    let prices = PriceSchedule::loss_only(&net, 0.066).unwrap();
    let (p, qc) = net.nominal_injections();
    let c = true_cost(&net, &prices, &p, &qc, &vec![0.0; net.n()]).unwrap();
    let q: Vec<f64> = qc.iter().map(|v| -v).collect();
    let pt = sweep_solve(&net, &p, &q, DEFAULT_SWEEP_TOL, DEFAULT_SWEEP_MAX_ITER).unwrap();
    assert_eq!(c.cost, 0.066 * power_loss(&net, &pt) * net.base_kva());
    assert_eq!(c.reactive_cost, 0.0);
}

#[test]
fn non_controllable_entries_are_clamped() {
    let net = fixtures::feeder6();
    let prices = PriceSchedule::uniform(&net, 0.066, 0.066 / 80.0).unwrap();
    let (p, qc) = net.nominal_injections();
    let a = vec![0.0, 0.05, 0.0, -0.02, 0.0];
    let mut b = a.clone();
    b[0] = 0.3;
    b[4] = -0.1;
    assert_eq!(
        true_cost(&net, &prices, &p, &qc, &a).unwrap(),
        true_cost(&net, &prices, &p, &qc, &b).unwrap()
    );
}

#[test]
fn reproducible_runs() {
    let net = fixtures::feeder6();
    let prices = PriceSchedule::uniform(&net, 0.066, 0.066 / 80.0).unwrap();
    let src = InjectionSource::Gaussian(Scenario::from_network(&net, 0.3, 15, 1, 5).unwrap());
    let cfg = StochasticConfig::default();
    let a = run_experiment(&net, &prices, &src, &ControllerKind::ALL, &cfg, &solver()).unwrap();
    let b = run_experiment(&net, &prices, &src, &ControllerKind::ALL, &cfg, &solver()).unwrap();
    assert_eq!(a, b);
    let mc1 = run_monte_carlo(&net, &prices, &src, &ControllerKind::ALL, &cfg, 4, &solver()).unwrap();
    let mc2 = run_monte_carlo(&net, &prices, &src, &ControllerKind::ALL, &cfg, 4, &solver()).unwrap();
    assert_eq!(mc1, mc2);
    assert_eq!(mc1.runs[0], a);
    assert_eq!(mc1.seeds[0], 5);
    assert_ne!(realization_seed(5, 1), realization_seed(5, 2));
}

#[test]
fn zero_price_cost_identity() {
    let net = fixtures::feeder6();
    let prices = PriceSchedule::loss_only(&net, 0.066).unwrap();
    let src = InjectionSource::Gaussian(Scenario::from_network(&net, 0.3, 10, 1, 8).unwrap());
    let recs = run_experiment(
        &net,
        &prices,
        &src,
        &[ControllerKind::Stochastic],
        &StochasticConfig::default(),
        &solver(),
    )
    .unwrap();
    for (t, r) in recs.iter().enumerate() {
        let st = r.stochastic.as_ref().unwrap();
        let inj = src.injections(&net, t).unwrap();
        let q: Vec<f64> = st.setpoint.iter().zip(&inj.true_qc).map(|(g, c)| g - c).collect();
        let pt = sweep_solve(&net, &inj.true_p, &q, DEFAULT_SWEEP_TOL, DEFAULT_SWEEP_MAX_ITER).unwrap();
        assert_eq!(st.cost.unwrap().cost, 0.066 * power_loss(&net, &pt) * net.base_kva());
    }
}

#[test]
fn one_interval_unrolled() {
    let net = fixtures::feeder6();
    let prices = PriceSchedule::uniform(&net, 0.066, 0.066 / 80.0).unwrap();
    let src = InjectionSource::Gaussian(Scenario::from_network(&net, 0.0, 1, 0, 0).unwrap());
    let recs = run_experiment(
        &net,
        &prices,
        &src,
        &ControllerKind::ALL,
        &StochasticConfig::default(),
        &solver(),
    )
    .unwrap();
    assert_eq!(recs.len(), 1);
    let d = recs[0].stochastic.as_ref().unwrap().diagnostics.as_ref().unwrap();
    assert_eq!((d.dual_solves, d.threshold_updates), (1, 1));
    assert_eq!(recs[0].warnings(), 0);
}

#[test]
fn deterministic_matches_ideal_without_noise_or_delay() {
    let net = fixtures::feeder15();
    let prices = PriceSchedule::uniform(&net, 0.066, 0.066 / 80.0).unwrap();
    let src = InjectionSource::Gaussian(Scenario::from_network(&net, 0.0, 12, 0, 1).unwrap());
    let recs = run_experiment(
        &net,
        &prices,
        &src,
        &[ControllerKind::Deterministic, ControllerKind::Ideal],
        &StochasticConfig::default(),
        &solver(),
    )
    .unwrap();
    for r in &recs {
        assert_eq!(r.cost(ControllerKind::Deterministic), r.cost(ControllerKind::Ideal));
    }
}

#[test]
fn noise_free_collapse() {
    let net = fixtures::feeder6();
    let prices = PriceSchedule::uniform(&net, 0.066, 0.066 / 80.0).unwrap();
    let src = InjectionSource::Gaussian(Scenario::from_network(&net, 0.0, 50, 0, 1).unwrap());
    let recs = run_experiment(
        &net,
        &prices,
        &src,
        &[ControllerKind::Stochastic, ControllerKind::Ideal],
        &StochasticConfig::default(),
        &solver(),
    )
    .unwrap();
    let last = recs.last().unwrap();
    let (s, i) = (
        last.cost(ControllerKind::Stochastic).unwrap(),
        last.cost(ControllerKind::Ideal).unwrap(),
    );
    assert!(s - i <= 0.01 * i, "stochastic {s} ideal {i}");
}

#[test]
fn step_size_trade_off() {
    // Larger steps settle faster without noise and sit higher with it.
    let net = fixtures::feeder6();
    let prices = PriceSchedule::uniform(&net, 0.066, 0.066 / 80.0).unwrap();
    let run = |eta: f64, sigma: f64| {
        let src = InjectionSource::Gaussian(Scenario::from_network(&net, sigma, 60, 1, 21).unwrap());
        let cfg = StochasticConfig {
            schedule: ScheduleKind::Fixed { eta },
            ..Default::default()
        };
        run_monte_carlo(&net, &prices, &src, &[ControllerKind::Stochastic], &cfg, 16, &solver()).unwrap()
    };
    let (slow, fast) = (run(1.0, 0.0), run(10.0, 0.0));
    let target = steady_state_mean(&fast.mean, ControllerKind::Stochastic, 41).unwrap();
    let t_slow = convergence_interval(&slow.mean, ControllerKind::Stochastic, target, 1e-3).unwrap();
    let t_fast = convergence_interval(&fast.mean, ControllerKind::Stochastic, target, 1e-3).unwrap();
    assert!(t_fast < t_slow, "{t_fast} vs {t_slow}");
    let noisy_small = steady_state_mean(&run(1.0, 0.3).mean, ControllerKind::Stochastic, 21).unwrap();
    let noisy_large = steady_state_mean(&run(10.0, 0.3).mean, ControllerKind::Stochastic, 21).unwrap();
    assert!(noisy_small < noisy_large, "{noisy_small} vs {noisy_large}");
}

fn write_trace(body: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(body.as_bytes()).unwrap();
    f
}

#[test]
fn trace_parsing_and_hold() {
    let body = "timestamp,bus,kind,value_pu\n\
                2024-06-01T12:00:00,2,pg,0.10\n\
                2024-06-01T12:00:00,3,qc,0.05\n\
                2024-06-01T12:01:00,2,pg,0.20\n\
                2024-06-01T12:01:00,3,qc,0.06\n";
    let f = write_trace(body);
    let tr = TraceData::load(f.path(), 5).unwrap();
    assert_eq!(tr.cadence_seconds, 60.0);
    assert_eq!(tr.len, 2);
    let rs = tr.resample(30.0).unwrap();
    assert_eq!(rs.len, 4);
    assert_eq!(rs.series[&(2, TraceKind::Pg)], vec![0.1, 0.1, 0.2, 0.2]);

    let net = fixtures::feeder6();
    let (p, qc) = rs.injections_at(&net, 2).unwrap();
    let b2 = net.bus(2);
    assert_abs_diff_eq!(p[1], 0.2 - b2.p_c, epsilon = 1e-15);
    assert_eq!(qc[2], 0.06);
    assert_eq!(qc[0], net.bus(1).q_c);

    let mut norm = tr.clone();
    norm.normalize_generation(&net);
    assert_abs_diff_eq!(norm.series[&(2, TraceKind::Pg)][1], b2.p_g, epsilon = 1e-15);
}

#[test]
fn trace_integer_seconds() {
    let f = write_trace("timestamp,bus,kind,value_pu\n0,1,pc,0.1\n30,1,pc,0.2\n60,1,pc,0.3\n");
    let tr = TraceData::load(f.path(), 5).unwrap();
    assert_eq!((tr.cadence_seconds, tr.len), (30.0, 3));
}

#[test]
fn trace_errors() {
    let uneven = write_trace("timestamp,bus,kind,value_pu\n0,1,pc,0.1\n30,1,pc,0.2\n90,1,pc,0.3\n");
    assert!(matches!(TraceData::load(uneven.path(), 5), Err(Error::Trace(_))));
    let header = write_trace("time,bus,kind,value\n0,1,pc,0.1\n");
    assert!(matches!(TraceData::load(header.path(), 5), Err(Error::Trace(_))));
    let bus = write_trace("timestamp,bus,kind,value_pu\n0,9,pc,0.1\n");
    assert!(matches!(TraceData::load(bus.path(), 5), Err(Error::Trace(_))));
    let gap = write_trace("timestamp,bus,kind,value_pu\n0,1,pc,0.1\n30,1,pc,0.2\n30,2,pc,0.2\n");
    assert!(matches!(TraceData::load(gap.path(), 5), Err(Error::Trace(_))));
    assert!(matches!(
        TraceData::load(std::path::Path::new("/nonexistent/trace.csv"), 5),
        Err(Error::Io { .. })
    ));

    let ok = write_trace("timestamp,bus,kind,value_pu\n0,1,pc,0.1\n30,1,pc,0.2\n");
    let src = InjectionSource::Trace {
        data: TraceData::load(ok.path(), 5).unwrap(),
        horizon: 3,
        delay_intervals: 0,
    };
    let net = fixtures::feeder6();
    let prices = PriceSchedule::loss_only(&net, 1.0).unwrap();
    let res = run_experiment(
        &net,
        &prices,
        &src,
        &[ControllerKind::Ideal],
        &StochasticConfig::default(),
        &solver(),
    );
    assert!(matches!(res, Err(Error::Trace(_))));
}

#[test]
fn trace_delay_repeats_first_sample() {
    let f = write_trace("timestamp,bus,kind,value_pu\n0,1,pc,0.1\n30,1,pc,0.2\n60,1,pc,0.3\n");
    let net = fixtures::feeder6();
    let src = InjectionSource::Trace {
        data: TraceData::load(f.path(), 5).unwrap(),
        horizon: 3,
        delay_intervals: 1,
    };
    let i0 = src.injections(&net, 0).unwrap();
    let i2 = src.injections(&net, 2).unwrap();
    assert_eq!(i0.observed_p, i0.true_p);
    assert_abs_diff_eq!(i2.observed_p[0], -0.2, epsilon = 1e-15);
    assert_abs_diff_eq!(i2.true_p[0], -0.3, epsilon = 1e-15);
}
