//! Reliability metrics: the mismatch factor (MF) with its fitted weight
//! factor, the MF overlap threshold, the separatrix intersection distance
//! (SID) and the two-step skew stability test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::TechnologyProfile;
use crate::dynamics::{powerup_outcome, PowerUpConfig, StateVector, Suv};
use crate::error::{Error, Result};
use crate::variability::{delta_n, delta_p, CellSample, Population};

/// MF = (|Vth,3| - |Vth,2|) - (Vth,1 - Vth,0) = ΔP - ΔN.
pub fn mf_raw(cell: &CellSample) -> f64 {
    delta_p(cell) - delta_n(cell)
}

/// MF = wf·ΔP - (1 - wf)·ΔN.
pub fn mf_weighted(cell: &CellSample, wf: f64) -> f64 {
    wf * delta_p(cell) - (1.0 - wf) * delta_n(cell)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Prediction {
    Zero,
    One,
    Indeterminate,
}

impl Prediction {
    pub fn from_mf(mf: f64) -> Self {
        if mf > 0.0 {
            Prediction::Zero
        } else if mf < 0.0 {
            Prediction::One
        } else {
            Prediction::Indeterminate
        }
    }

    pub fn matches(self, suv: Suv) -> bool {
        matches!(
            (self, suv),
            (Prediction::Zero, Suv::Zero) | (Prediction::One, Suv::One)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfRecord {
    pub id: usize,
    pub mf_raw: f64,
    pub mf_weighted: f64,
    pub predicted_suv: Prediction,
}

pub fn mf_record(cell: &CellSample, wf: f64) -> MfRecord {
    let w = mf_weighted(cell, wf);
    MfRecord {
        id: cell.id,
        mf_raw: mf_raw(cell),
        mf_weighted: w,
        predicted_suv: Prediction::from_mf(w),
    }
}

pub fn mf_records(population: &Population, wf: f64) -> Vec<MfRecord> {
    population.cells.iter().map(|c| mf_record(c, wf)).collect()
}

pub const WF_GRID_STEP: f64 = 0.005;
const WF_GRID_POINTS: usize = 200;
const MIN_LABELED_CELLS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFit {
    pub wf: f64,
    pub agreement_rate: f64,
    pub population_size: usize,
    pub grid_step: f64,
    /// Cells with a decided start-up value that entered the fit.
    pub labeled_cells: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Fraction of cells (decided label, nonzero MF) whose MF sign predicts the
/// label.
pub fn agreement_rate(cells: &[CellSample], labels: &[Suv], wf: f64) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (c, &l) in cells.iter().zip(labels) {
        if !l.is_decided() {
            continue;
        }
        let p = Prediction::from_mf(mf_weighted(c, wf));
        if p == Prediction::Indeterminate {
            continue;
        }
        total += 1;
        if p.matches(l) {
            hit += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Exhaustive search of wf over [0, 1] in steps of 0.005; ties resolve to the
/// smallest wf. Undecided labels are ignored.
pub fn fit_wf(population: &Population, labels: &[Suv]) -> Result<WeightFit> {
    if labels.len() != population.len() {
        return Err(Error::Input(format!(
            "{} labels for {} cells",
            labels.len(),
            population.len()
        )));
    }
    let labeled = labels.iter().filter(|l| l.is_decided()).count();
    if labeled == 0 {
        return Err(Error::Input("no decided start-up values to fit against".into()));
    }
    let mut best = (0.0, f64::NEG_INFINITY);
    for i in 0..=WF_GRID_POINTS {
        let wf = i as f64 / WF_GRID_POINTS as f64;
        let rate = agreement_rate(&population.cells, labels, wf);
        if rate > best.1 {
            best = (wf, rate);
        }
    }
    let warning = (labeled < MIN_LABELED_CELLS).then(|| {
        format!("only {labeled} labeled cells; fewer than {MIN_LABELED_CELLS} is statistically weak")
    });
    Ok(WeightFit {
        wf: best.0,
        agreement_rate: best.1,
        population_size: population.len(),
        grid_step: WF_GRID_STEP,
        labeled_cells: labeled,
        warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapThreshold {
    /// Half-width of the band [-t, t] outside which MF is trusted, volts.
    pub threshold: f64,
    /// Fraction of labeled cells with |MF| > threshold.
    pub surviving_fraction: f64,
    /// Sign-prediction accuracy among the surviving cells.
    pub accuracy: f64,
    pub target_accuracy: f64,
}

/// Smallest t >= 0 such that cells with |MF| > t are predicted with at least
/// `target_accuracy`. Candidates are 0 and every observed |MF|, so the sweep
/// is exact.
pub fn overlap_threshold(
    records: &[MfRecord],
    labels: &[Suv],
    target_accuracy: f64,
) -> Result<OverlapThreshold> {
    if !(target_accuracy > 0.5 && target_accuracy <= 1.0) {
        return Err(Error::Domain("target_accuracy must lie in (0.5, 1]".into()));
    }
    if records.len() != labels.len() {
        return Err(Error::Input("records and labels differ in length".into()));
    }
    // (|mf|, correct) for labeled cells, largest |mf| first.
    let mut cells: Vec<(f64, bool)> = records
        .iter()
        .zip(labels)
        .filter(|(_, l)| l.is_decided())
        .map(|(r, &l)| (r.mf_weighted.abs(), r.predicted_suv.matches(l)))
        .collect();
    let labeled = cells.len();
    if labeled == 0 {
        return Err(Error::Input("no decided labels".into()));
    }
    cells.sort_by(|a, b| b.0.total_cmp(&a.0));

    // correct[k] = correct predictions among the k largest |mf|.
    let mut correct = vec![0usize; labeled + 1];
    for (k, &(_, ok)) in cells.iter().enumerate() {
        correct[k + 1] = correct[k] + ok as usize;
    }

    // Ascending candidate thresholds; survivors(t) = #{|mf| > t}.
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(labeled + 1);
    candidates.push((0.0, cells.iter().take_while(|c| c.0 > 0.0).count()));
    for k in (0..labeled).rev() {
        let t = cells[k].0;
        if t > 0.0 && (k + 1 == labeled || cells[k + 1].0 != t) {
            let survivors = cells.iter().take_while(|c| c.0 > t).count();
            candidates.push((t, survivors));
        }
    }
    candidates.dedup_by(|a, b| a.0 == b.0);

    let mut best_acc = f64::NEG_INFINITY;
    for &(t, k) in &candidates {
        if k == 0 {
            continue;
        }
        let acc = correct[k] as f64 / k as f64;
        if acc >= target_accuracy {
            return Ok(OverlapThreshold {
                threshold: t,
                surviving_fraction: k as f64 / labeled as f64,
                accuracy: acc,
                target_accuracy,
            });
        }
        best_acc = best_acc.max(acc);
    }
    Err(Error::UnattainableAccuracy {
        target: target_accuracy,
        max_achievable: best_acc.max(0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    Q,
    QB,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Q => "Q",
            Axis::QB => "QB",
        }
    }

    /// Initial state with `v` on this axis and the other node discharged.
    pub fn point(self, v: f64) -> StateVector {
        match self {
            Axis::Q => StateVector::new(v, 0.0),
            Axis::QB => StateVector::new(0.0, v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidRecord {
    pub id: usize,
    /// Signed distance; positive on the Q axis (tendency to '0'), negative on
    /// the QB axis (tendency to '1'), zero for a metrically-null cell.
    pub sid: f64,
    /// `None` when the discharged start (test 1) does not decide.
    pub axis: Option<Axis>,
    /// No flip found up to vdd/2; `sid` is pinned at ±vdd/2.
    pub saturated: bool,
}

impl SidRecord {
    pub fn is_null(&self) -> bool {
        self.axis.is_none()
    }
}

fn outcome_from(
    profile: &TechnologyProfile,
    cell: &CellSample,
    cfg: &PowerUpConfig,
    initial: StateVector,
) -> Result<Suv> {
    let mut c = cfg.clone();
    c.initial = initial;
    c.record_stride = 0;
    Ok(powerup_outcome(profile, cell, &c)?.suv)
}

/// Tendency axis from the three power-up tests: discharged start, QB skewed
/// to vdd/2 and Q skewed to vdd/2. Returns `None` for a metrically-null cell.
pub fn sid_axis(
    profile: &TechnologyProfile,
    cell: &CellSample,
    cfg: &PowerUpConfig,
) -> Result<Option<(Axis, Suv)>> {
    let half = cfg.vdd_final / 2.0;
    let t1 = outcome_from(profile, cell, cfg, StateVector::new(0.0, 0.0))?;
    if !t1.is_decided() {
        return Ok(None);
    }
    let t2 = outcome_from(profile, cell, cfg, StateVector::new(0.0, half))?;
    let t3 = outcome_from(profile, cell, cfg, StateVector::new(half, 0.0))?;
    match (t1 == t2, t1 == t3) {
        (true, false) => Ok(Some((Axis::Q, t1))),
        (false, true) => Ok(Some((Axis::QB, t1))),
        (true, true) => Err(Error::ModelIntegrity(format!(
            "cell {}: both skewed starts agree with the discharged start",
            cell.id
        ))),
        (false, false) => Err(Error::ModelIntegrity(format!(
            "cell {}: skewed starts give {t2:?}/{t3:?} against {t1:?}",
            cell.id
        ))),
    }
}

/// Separatrix intersection distance by an ascending search in `step`
/// increments along the tendency axis.
pub fn sid(
    profile: &TechnologyProfile,
    cell: &CellSample,
    step: f64,
    cfg: &PowerUpConfig,
) -> Result<SidRecord> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Domain("SID step must be > 0".into()));
    }
    if cfg.noise.is_some() {
        return Err(Error::Domain("SID requires a noise-free configuration".into()));
    }
    let Some((axis, reference)) = sid_axis(profile, cell, cfg)? else {
        return Ok(SidRecord {
            id: cell.id,
            sid: 0.0,
            axis: None,
            saturated: false,
        });
    };
    let half = cfg.vdd_final / 2.0;
    let sign = match axis {
        Axis::Q => 1.0,
        Axis::QB => -1.0,
    };
    let mut k = 1u32;
    loop {
        let v = step * k as f64;
        if v > half * (1.0 + 1e-12) {
            break;
        }
        if outcome_from(profile, cell, cfg, axis.point(v))? != reference {
            return Ok(SidRecord {
                id: cell.id,
                sid: sign * v,
                axis: Some(axis),
                saturated: false,
            });
        }
        k += 1;
    }
    Ok(SidRecord {
        id: cell.id,
        sid: sign * half,
        axis: Some(axis),
        saturated: true,
    })
}

/// SID for every cell, in id order.
pub fn sid_records(population: &Population, step: f64, cfg: &PowerUpConfig) -> Result<Vec<SidRecord>> {
    population
        .cells
        .par_iter()
        .map(|c| sid(&population.profile, c, step, cfg))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityTestConfig {
    pub v_skew: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StabilityVerdict {
    /// Each skew wins: the cell has no strong preference.
    Matched,
    /// Both runs give the same value regardless of skew.
    Mismatched,
    /// A run did not decide, or both skews lost.
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityResult {
    pub verdict: StabilityVerdict,
    /// Start-up value with Q skewed to v_skew.
    pub q_skewed: Suv,
    /// Start-up value with QB skewed to v_skew.
    pub qb_skewed: Suv,
}

/// Two-step skew test: power up from (v_skew, 0), then from (0, v_skew).
pub fn stability_test(
    profile: &TechnologyProfile,
    cell: &CellSample,
    test: StabilityTestConfig,
    cfg: &PowerUpConfig,
) -> Result<StabilityResult> {
    if !(test.v_skew > 0.0 && test.v_skew <= cfg.vdd_final) {
        return Err(Error::Domain("v_skew must lie in (0, vdd]".into()));
    }
    if cfg.noise.is_some() {
        return Err(Error::Domain("stability test requires a noise-free configuration".into()));
    }
    let q_skewed = outcome_from(profile, cell, cfg, StateVector::new(test.v_skew, 0.0))?;
    let qb_skewed = outcome_from(profile, cell, cfg, StateVector::new(0.0, test.v_skew))?;
    let verdict = if !q_skewed.is_decided() || !qb_skewed.is_decided() {
        StabilityVerdict::Inconclusive
    } else if q_skewed == qb_skewed {
        StabilityVerdict::Mismatched
    } else if q_skewed == Suv::One {
        StabilityVerdict::Matched
    } else {
        StabilityVerdict::Inconclusive
    };
    Ok(StabilityResult {
        verdict,
        q_skewed,
        qb_skewed,
    })
}

/// Pearson product-moment correlation.
pub fn pearson_correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Input("correlation inputs differ in length".into()));
    }
    if xs.len() < 3 {
        return Err(Error::Input("correlation needs at least 3 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
