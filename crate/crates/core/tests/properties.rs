//! Cross-module invariants of the device model, dynamics and metrics.

mod common;

use common::{bisect_crossing, fast_cfg, outcome_at, Crossing};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use srampuf_core::dynamics::powerup_outcome;
use srampuf_core::metrics::{sid, stability_test, StabilityTestConfig, StabilityVerdict};
use srampuf_core::{
    derivative, drain_current, find_equilibria, inverter_vtc, sample_population, simulate_from_initial, CellSample,
    InverterSide, PowerUpConfig, StateVector, Suv, TechnologyProfile,
};

fn cell_strategy() -> impl Strategy<Value = CellSample> {
    prop::array::uniform4(-0.09f64..0.09).prop_map(|d| CellSample::new(0, d))
}

#[test]
fn drain_current_is_continuous() {
    // A relative bound is unreachable in subthreshold, where a 1 µV step moves
    // the current by about 3e-5 of itself. Continuity is checked instead as
    // first-order behaviour at the 1 µV scale: a jump would appear undiminished
    // in both the ±1 µV and ±0.5 µV differences.
    let p = TechnologyProfile::default();
    let vdd = p.vdd_nominal;
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strat = (any::<bool>(), -0.2f64..vdd, -vdd..vdd, 230.0f64..400.0);
    for _ in 0..10_000 {
        let (nmos, vgs, vds, temp) = strat.new_tree(&mut runner).unwrap().current();
        let params = if nmos { &p.nmos } else { &p.pmos };
        let i = |v: f64| drain_current(params, v, vds, temp, p.temp_nominal).unwrap();
        let d1 = i(vgs + 1e-6) - i(vgs - 1e-6);
        let d2 = i(vgs + 0.5e-6) - i(vgs - 0.5e-6);
        assert!(
            (d1 - 2.0 * d2).abs() <= 1e-3 * d1.abs() + 1e-24,
            "not first-order at vgs {vgs}, vds {vds}, T {temp}: {d1:e} vs 2 x {d2:e}"
        );
        // Square-law transconductance bound over the operating box.
        let beta_t = params.beta * (p.temp_nominal / temp).powf(params.mobility_temp_exponent);
        let gm_max = 2.0 * beta_t * vdd * (1.0 + params.lambda * vdd);
        assert!(d1.abs() <= 2e-6 * gm_max, "slope {:e} at vgs {vgs}, vds {vds}, T {temp}", d1 / 2e-6);
    }
}

#[test]
fn spec_default_timing_keeps_sid_oracle_and_mirror() {
    // The acceptance suite runs a 2 ns ramp at 5 ps; repeat the oracle and
    // mirror checks at 1 ps/10 ns and 10 ps/1 ns.
    let p = TechnologyProfile::default();
    let pop = sample_population(&p, 5, 31).unwrap();
    for (dt, ramp) in [(1e-12, 10e-9), (10e-12, 1e-9)] {
        let mut cfg = PowerUpConfig::new(&p);
        cfg.dt = dt;
        cfg.ramp_time = ramp;
        for c in &pop.cells {
            let s = sid(&p, c, 5e-3, &cfg).unwrap();
            if let Crossing::At(v) = bisect_crossing(&p, c, &cfg, 1e-5) {
                assert!((s.sid - v).abs() <= 5e-3, "dt {dt} ramp {ramp}: {} vs {v}", s.sid);
            }
            let m = sid(&p, &c.mirrored(), 5e-3, &cfg).unwrap();
            assert!((s.sid + m.sid).abs() <= 5e-3 + 1e-12);
        }
    }
}

#[test]
fn halving_dt_moves_flip_vdd_below_one_millivolt() {
    let p = TechnologyProfile::default();
    let pop = sample_population(&p, 20, 17).unwrap();
    let coarse = fast_cfg(&p);
    let mut fine = coarse.clone();
    fine.dt /= 2.0;
    for c in &pop.cells {
        let a = powerup_outcome(&p, c, &coarse).unwrap();
        let b = powerup_outcome(&p, c, &fine).unwrap();
        assert_eq!(a.suv, b.suv, "cell {}", c.id);
        let (Some(x), Some(y)) = (a.flip_vdd, b.flip_vdd) else {
            panic!("cell {} did not decide", c.id);
        };
        assert!((x - y).abs() < 1e-3, "cell {}: {x} vs {y}", c.id);
    }
}

#[test]
fn separatrix_crossing_is_sharp() {
    let p = TechnologyProfile::default();
    let cfg = fast_cfg(&p);
    let pop = sample_population(&p, 20, 23).unwrap();
    for c in &pop.cells {
        let reference = outcome_at(&p, c, &cfg, 0.0, 0.0);
        let Crossing::At(v) = bisect_crossing(&p, c, &cfg, 1e-5) else {
            continue;
        };
        let at = |x: f64| {
            if v > 0.0 {
                outcome_at(&p, c, &cfg, x, 0.0)
            } else {
                outcome_at(&p, c, &cfg, 0.0, x)
            }
        };
        let d = v.abs();
        if d > 5e-3 {
            assert_eq!(at(d - 5e-3), reference, "cell {}", c.id);
        }
        assert_eq!(at(d + 5e-3), reference.flipped(), "cell {}", c.id);
    }
}

#[test]
fn sid_sign_follows_discharged_start() {
    let p = TechnologyProfile::default();
    let cfg = fast_cfg(&p);
    let pop = sample_population(&p, 200, 29).unwrap();
    for c in &pop.cells {
        let s = sid(&p, c, 5e-3, &cfg).unwrap();
        let coherent = match outcome_at(&p, c, &cfg, 0.0, 0.0) {
            Suv::Zero => s.sid > 0.0,
            Suv::One => s.sid < 0.0,
            Suv::Undecided => s.sid == 0.0,
        };
        assert!(coherent, "cell {}: sid {}", c.id, s.sid);
        assert!(s.sid.abs() <= cfg.vdd_final / 2.0);
    }
}

#[test]
fn stability_test_is_monotone_in_skew() {
    let p = TechnologyProfile::default();
    let cfg = fast_cfg(&p);
    let pop = sample_population(&p, 30, 37).unwrap();
    let skews: Vec<f64> = (1..=12).map(|i| 0.05 * i as f64).collect();
    for c in &pop.cells {
        let verdicts: Vec<StabilityVerdict> = skews
            .iter()
            .map(|&v| stability_test(&p, c, StabilityTestConfig { v_skew: v }, &cfg).unwrap().verdict)
            .collect();
        if let Some(last) = verdicts.iter().rposition(|&v| v == StabilityVerdict::Mismatched) {
            assert!(
                verdicts[..last].iter().all(|&v| v == StabilityVerdict::Mismatched),
                "cell {}: {verdicts:?}",
                c.id
            );
        }
    }
}

#[test]
fn population_independent_of_thread_count() {
    let p = TechnologyProfile::default();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample_population(&p, 3000, 41).unwrap())
    };
    assert_eq!(run(1), run(4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn vtc_mirror_is_exact(cell in cell_strategy(), vdd in 0.3f64..1.3) {
        let p = TechnologyProfile::default();
        let l = inverter_vtc(&p, &cell, InverterSide::L, vdd, 300.0, 33).unwrap();
        let r = inverter_vtc(&p, &cell.mirrored(), InverterSide::R, vdd, 300.0, 33).unwrap();
        prop_assert_eq!(l, r);
    }

    #[test]
    fn equilibria_mirror_and_residual(cell in cell_strategy(), vdd in 0.2f64..1.3) {
        let p = TechnologyProfile::default();
        let eq = find_equilibria(&p, &cell, vdd, 300.0).unwrap();
        let mirror = find_equilibria(&p, &cell.mirrored(), vdd, 300.0).unwrap();
        prop_assert_eq!(eq.bistable, mirror.bistable);
        prop_assert_eq!(eq.metastable.is_some(), eq.bistable);
        let close = |a: StateVector, b: StateVector| (a.vq - b.vq).abs() < 1e-5 && (a.vqb - b.vqb).abs() < 1e-5;
        prop_assert!(close(eq.s0, mirror.s1.swapped()));
        prop_assert!(close(eq.s1, mirror.s0.swapped()));
        if let (Some(a), Some(b)) = (eq.metastable, mirror.metastable) {
            prop_assert!(close(a, b.swapped()));
        }
        if eq.bistable {
            prop_assert!(eq.s0.vq < eq.s0.vqb && eq.s1.vq > eq.s1.vqb);
        }
        let tol = p.current_tolerance(vdd);
        for s in [Some(eq.s0), Some(eq.s1), eq.metastable].into_iter().flatten() {
            let (dq, dqb) = derivative(&p, &cell, s, vdd, 300.0).unwrap();
            prop_assert!((dq * p.node_capacitance).abs() < tol, "residual {} at {:?}", dq * p.node_capacitance, s);
            prop_assert!((dqb * p.node_capacitance).abs() < tol, "residual {} at {:?}", dqb * p.node_capacitance, s);
        }
    }

    #[test]
    fn bistability_lost_at_some_low_supply(cell in cell_strategy()) {
        let p = TechnologyProfile::default();
        let lost = (1..=40).map(|i| 0.01 * i as f64).any(|v| !find_equilibria(&p, &cell, v, 300.0).unwrap().bistable);
        prop_assert!(lost);
    }

    #[test]
    fn free_evolution_is_mirror_antisymmetric(cell in cell_strategy(), a in 0.0f64..1.2, b in 0.0f64..1.2) {
        let p = TechnologyProfile::default();
        let cfg = fast_cfg(&p);
        let x = simulate_from_initial(&p, &cell, StateVector::new(a, b), &cfg).unwrap().suv;
        let y = simulate_from_initial(&p, &cell.mirrored(), StateVector::new(b, a), &cfg).unwrap().suv;
        if x.is_decided() && y.is_decided() {
            prop_assert_eq!(x, y.flipped());
        }
    }
}
