//! Population-level properties of the reliability study on 1000 cells.

use srampuf_core::dynamics::powerup_outcome;
use srampuf_core::experiments::{
    classify_reliable, median, noise_repeatability, temperature_sweep, DEFAULT_SWEEP_CELSIUS, REFERENCE_CELSIUS,
};
use srampuf_core::metrics::{fit_wf, mf_records, sid_records};
use srampuf_core::pipeline::RunConfig;
use srampuf_core::{sample_population, Suv, TechnologyProfile};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn reliable_cells_sit_at_large_metric_values() {
    let run = RunConfig {
        population_size: 1000,
        master_seed: 77,
        ..RunConfig::default()
    };
    let p = TechnologyProfile::default();
    let pop = sample_population(&p, run.population_size, run.master_seed).unwrap();
    let cfg = run.powerup_config(&p);
    let labels: Vec<Suv> = pop.cells.iter().map(|c| powerup_outcome(&p, c, &cfg).unwrap().suv).collect();
    let wf = fit_wf(&pop, &labels).unwrap().wf;
    let mf = mf_records(&pop, wf);
    let sid = sid_records(&pop, run.metrics.sid_step, &cfg).unwrap();
    // Fewer trials than the full run keep this test quick; reliability only
    // gets stricter with more trials.
    let repeat = noise_repeatability(&pop, 50, &run.noisy_config(&p)).unwrap();
    let sweep = temperature_sweep(&pop, &DEFAULT_SWEEP_CELSIUS, REFERENCE_CELSIUS, &cfg).unwrap();
    let records = classify_reliable(&mf, &sid, &repeat, &sweep.records, None).unwrap();

    for r in &repeat {
        assert_eq!(r.p0 + r.p1, 1.0, "cell {}", r.id);
    }

    let split = |reliable: bool, f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        records.iter().filter(|r| r.reliable == reliable).map(|r| f(r.id)).collect()
    };
    let abs_mf = |i: usize| mf[i].mf_weighted.abs();
    let abs_sid = |i: usize| sid[i].sid.abs();
    let (rel, unrel) = (split(true, &abs_mf), split(false, &abs_mf));
    assert!(!rel.is_empty() && !unrel.is_empty());
    assert!(mean(&rel) > mean(&unrel), "|MF| {} vs {}", mean(&rel), mean(&unrel));
    let (rel, unrel) = (split(true, &abs_sid), split(false, &abs_sid));
    assert!(mean(&rel) > mean(&unrel), "|SID| {} vs {}", mean(&rel), mean(&unrel));

    let all: Vec<f64> = sid.iter().filter(|s| !s.is_null()).map(|s| s.sid.abs()).collect();
    let flipped: Vec<f64> = sweep
        .records
        .iter()
        .filter(|t| !t.stable)
        .map(|t| sid[t.id].sid.abs())
        .collect();
    assert!(!flipped.is_empty());
    let (m_flip, m_all) = (median(&flipped).unwrap(), median(&all).unwrap());
    assert!(m_flip < m_all, "median |SID| of flipping cells {m_flip} vs population {m_all}");
}
