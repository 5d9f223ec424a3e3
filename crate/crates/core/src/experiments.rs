//! Experimental protocols over a population: noisy repeatability, the
//! temperature sweep, reliability classification and top-k selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::celsius_to_kelvin;
use crate::dynamics::{powerup_outcome, PowerUpConfig, StateVector, Suv, SuvOutcome};
use crate::error::{Error, Result};
use crate::metrics::{MfRecord, SidRecord};
use crate::rng::{Purpose, StreamKey};
use crate::variability::Population;

/// Undecided share above which a repeatability record carries a warning.
pub const UNDECIDED_WARNING_FRACTION: f64 = 0.10;

pub const DEFAULT_SWEEP_CELSIUS: [f64; 9] = [-40.0, -20.0, 0.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0];
pub const REFERENCE_CELSIUS: f64 = 27.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub cell_id: usize,
    pub trial: usize,
    pub outcome: Suv,
    pub flip_vdd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatabilityRecord {
    pub id: usize,
    pub trials: usize,
    pub zero_count: usize,
    pub undecided_count: usize,
    /// P('0') over decided trials; 0.5 when no trial decided.
    pub p0: f64,
    pub p1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl RepeatabilityRecord {
    pub fn decided(&self) -> usize {
        self.trials - self.undecided_count
    }

    /// Every decided trial gave the same value.
    pub fn always_repeats(&self) -> bool {
        self.decided() > 0 && (self.zero_count == 0 || self.zero_count == self.decided())
    }

    pub fn from_outcomes(id: usize, outcomes: &[Suv]) -> Self {
        let trials = outcomes.len();
        let zero_count = outcomes.iter().filter(|&&o| o == Suv::Zero).count();
        let undecided_count = outcomes.iter().filter(|o| !o.is_decided()).count();
        let decided = trials - undecided_count;
        let p0 = if decided == 0 {
            0.5
        } else {
            zero_count as f64 / decided as f64
        };
        let warning = (trials > 0 && undecided_count as f64 > UNDECIDED_WARNING_FRACTION * trials as f64)
            .then(|| format!("{undecided_count} of {trials} trials undecided"));
        RepeatabilityRecord {
            id,
            trials,
            zero_count,
            undecided_count,
            p0,
            p1: 1.0 - p0,
            warning,
        }
    }
}

/// Key of the noise stream driving trial `trial` of cell `cell`.
pub fn trial_key(master_seed: u64, cell: usize, trial: usize) -> StreamKey {
    StreamKey::new(master_seed, Purpose::Noise, cell as u64, trial as u64)
}

/// Runs `trials` noisy power-ups per cell from fully discharged nodes. The
/// noise stream of each trial is keyed by the population seed, cell id and
/// trial index. Outcomes are grouped by cell, in id and trial order.
pub fn noise_trials(
    population: &Population,
    trials: usize,
    cfg: &PowerUpConfig,
) -> Result<Vec<Vec<TrialOutcome>>> {
    let Some(noise) = cfg.noise else {
        return Err(Error::Domain("repeatability trials need a noise model".into()));
    };
    if trials == 0 {
        return Err(Error::Domain("trials must be >= 1".into()));
    }
    cfg.validate()?;
    let profile = &population.profile;
    population
        .cells
        .par_iter()
        .map(|cell| {
            let mut c = cfg.clone();
            c.initial = StateVector::default();
            c.record_stride = 0;
            (0..trials)
                .map(|trial| {
                    c.noise = Some(noise.with_key(trial_key(population.master_seed, cell.id, trial)));
                    let SuvOutcome { suv, flip_vdd, .. } = powerup_outcome(profile, cell, &c)?;
                    Ok(TrialOutcome {
                        cell_id: cell.id,
                        trial,
                        outcome: suv,
                        flip_vdd,
                    })
                })
                .collect()
        })
        .collect()
}

pub fn repeatability_from_trials(trials: &[Vec<TrialOutcome>]) -> Vec<RepeatabilityRecord> {
    trials
        .iter()
        .enumerate()
        .map(|(id, t)| {
            let outcomes: Vec<Suv> = t.iter().map(|o| o.outcome).collect();
            let r = RepeatabilityRecord::from_outcomes(id, &outcomes);
            if let Some(w) = &r.warning {
                log::warn!("cell {id}: {w}");
            }
            r
        })
        .collect()
}

pub fn noise_repeatability(
    population: &Population,
    trials: usize,
    cfg: &PowerUpConfig,
) -> Result<Vec<RepeatabilityRecord>> {
    Ok(repeatability_from_trials(&noise_trials(population, trials, cfg)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureStability {
    pub id: usize,
    pub reference_suv: Suv,
    /// Sweep temperatures (°C) at which the value differs from the reference.
    pub flips: Vec<f64>,
    pub stable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipFraction {
    pub temp_celsius: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSweep {
    pub reference_celsius: f64,
    pub records: Vec<TemperatureStability>,
    pub per_temperature: Vec<FlipFraction>,
    /// Share of cells with at least one flip.
    pub affected_fraction: f64,
}

/// Noise-free start-up value at each temperature against the reference.
pub fn temperature_sweep(
    population: &Population,
    temps_celsius: &[f64],
    reference_celsius: f64,
    cfg: &PowerUpConfig,
) -> Result<TemperatureSweep> {
    if cfg.noise.is_some() {
        return Err(Error::Domain("the temperature sweep runs noise-free".into()));
    }
    if temps_celsius.is_empty() {
        return Err(Error::Domain("temperature list is empty".into()));
    }
    let profile = &population.profile;
    let records: Vec<TemperatureStability> = population
        .cells
        .par_iter()
        .map(|cell| {
            let mut c = cfg.clone();
            c.initial = StateVector::default();
            c.record_stride = 0;
            c.temp = celsius_to_kelvin(reference_celsius);
            let reference_suv = powerup_outcome(profile, cell, &c)?.suv;
            let mut flips = Vec::new();
            for &t in temps_celsius {
                c.temp = celsius_to_kelvin(t);
                if powerup_outcome(profile, cell, &c)?.suv != reference_suv {
                    flips.push(t);
                }
            }
            Ok(TemperatureStability {
                id: cell.id,
                reference_suv,
                stable: flips.is_empty(),
                flips,
            })
        })
        .collect::<Result<_>>()?;
    let n = records.len() as f64;
    let per_temperature = temps_celsius
        .iter()
        .map(|&t| FlipFraction {
            temp_celsius: t,
            fraction: records.iter().filter(|r| r.flips.contains(&t)).count() as f64 / n,
        })
        .collect();
    let affected_fraction = records.iter().filter(|r| !r.stable).count() as f64 / n;
    Ok(TemperatureSweep {
        reference_celsius,
        records,
        per_temperature,
        affected_fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub id: usize,
    pub mf_weighted: f64,
    pub sid: f64,
    pub p0: f64,
    pub always_repeat: bool,
    pub temp_stable: bool,
    pub reliable: bool,
}

/// Joins per-cell results. A cell always repeats when every decided trial
/// agrees; with `soft_threshold = Some(q)` it suffices that max(p0, p1) >= q.
pub fn classify_reliable(
    mf: &[MfRecord],
    sid: &[SidRecord],
    repeat: &[RepeatabilityRecord],
    temp: &[TemperatureStability],
    soft_threshold: Option<f64>,
) -> Result<Vec<MetricRecord>> {
    let n = repeat.len();
    if mf.len() != n || sid.len() != n || temp.len() != n {
        return Err(Error::Input("per-cell result lists differ in length".into()));
    }
    if let Some(q) = soft_threshold {
        if !(0.5..=1.0).contains(&q) {
            return Err(Error::Domain("soft repeat threshold must lie in [0.5, 1]".into()));
        }
    }
    (0..n)
        .map(|i| {
            let id = repeat[i].id;
            if mf[i].id != id || sid[i].id != id || temp[i].id != id {
                return Err(Error::Input(format!("cell id mismatch at position {i}")));
            }
            let r = &repeat[i];
            let always_repeat = match soft_threshold {
                None => r.always_repeats(),
                Some(q) => r.decided() > 0 && r.p0.max(r.p1) >= q,
            };
            let temp_stable = temp[i].stable;
            Ok(MetricRecord {
                id,
                mf_weighted: mf[i].mf_weighted,
                sid: sid[i].sid,
                p0: r.p0,
                always_repeat,
                temp_stable,
                reliable: always_repeat && temp_stable,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    Mf,
    Sid,
    Random,
}

impl SelectionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMethod::Mf => "mf",
            SelectionMethod::Sid => "sid",
            SelectionMethod::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: SelectionMethod,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub selected: Vec<usize>,
    pub temp_stable_count: usize,
    pub temp_stable_fraction: f64,
    pub always_repeat_count: usize,
    pub always_repeat_fraction: f64,
    pub reliable_count: usize,
    pub reliable_fraction: f64,
}

/// Top-k cells by |metric| (ties to the lower id), or k distinct cells drawn
/// uniformly from the selection stream of `seed`.
pub fn select_cells(
    records: &[MetricRecord],
    method: SelectionMethod,
    k: usize,
    seed: u64,
) -> Result<SelectionResult> {
    if k == 0 || k > records.len() {
        return Err(Error::Domain(format!(
            "k = {k} must lie in [1, {}]",
            records.len()
        )));
    }
    let selected: Vec<usize> = match method {
        SelectionMethod::Random => {
            let mut rng = StreamKey::new(seed, Purpose::Selection, 0, 0).rng();
            rand::seq::index::sample(&mut rng, records.len(), k)
                .into_iter()
                .collect()
        }
        SelectionMethod::Mf | SelectionMethod::Sid => {
            let key = |r: &MetricRecord| match method {
                SelectionMethod::Mf => r.mf_weighted.abs(),
                _ => r.sid.abs(),
            };
            let mut order: Vec<usize> = (0..records.len()).collect();
            order.sort_by(|&a, &b| {
                key(&records[b])
                    .total_cmp(&key(&records[a]))
                    .then(records[a].id.cmp(&records[b].id))
            });
            order.truncate(k);
            order
        }
    };
    let count = |f: fn(&MetricRecord) -> bool| selected.iter().filter(|&&i| f(&records[i])).count();
    let temp_stable_count = count(|r| r.temp_stable);
    let always_repeat_count = count(|r| r.always_repeat);
    let reliable_count = count(|r| r.reliable);
    let kf = k as f64;
    Ok(SelectionResult {
        method,
        k,
        seed: (method == SelectionMethod::Random).then_some(seed),
        selected: selected.iter().map(|&i| records[i].id).collect(),
        temp_stable_count,
        temp_stable_fraction: temp_stable_count as f64 / kf,
        always_repeat_count,
        always_repeat_fraction: always_repeat_count as f64 / kf,
        reliable_count,
        reliable_fraction: reliable_count as f64 / kf,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseLengthPoint {
    pub k: usize,
    pub mf_reliable_fraction: f64,
    pub sid_reliable_fraction: f64,
}

pub fn response_length_study(records: &[MetricRecord], ks: &[usize]) -> Result<Vec<ResponseLengthPoint>> {
    ks.iter()
        .map(|&k| {
            Ok(ResponseLengthPoint {
                k,
                mf_reliable_fraction: select_cells(records, SelectionMethod::Mf, k, 0)?.reliable_fraction,
                sid_reliable_fraction: select_cells(records, SelectionMethod::Sid, k, 0)?.reliable_fraction,
            })
        })
        .collect()
}

/// Share of cells picked by both selections.
pub fn metric_overlap(a: &SelectionResult, b: &SelectionResult) -> Result<f64> {
    if a.k != b.k {
        return Err(Error::Input(format!("selection sizes differ: {} vs {}", a.k, b.k)));
    }
    let set: std::collections::HashSet<usize> = a.selected.iter().copied().collect();
    let shared = b.selected.iter().filter(|id| set.contains(id)).count();
    Ok(shared as f64 / a.k as f64)
}

/// p0 laid out row-major in id order.
pub fn suv_probability_map(repeat: &[RepeatabilityRecord], rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
    if rows * cols != repeat.len() || rows == 0 {
        return Err(Error::Input(format!(
            "{rows}x{cols} grid does not hold {} cells",
            repeat.len()
        )));
    }
    Ok(repeat.chunks(cols).map(|row| row.iter().map(|r| r.p0).collect()).collect())
}

/// Near-square grid shape whose area equals `n`.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let mut rows = (n as f64).sqrt().floor().max(1.0) as usize;
    while !n.is_multiple_of(rows) {
        rows -= 1;
    }
    (rows, n / rows)
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
