//! End-to-end run: configuration, the eight file-backed stages and the
//! artifact manifest.
//!
//! Every stage reads its inputs from the output directory and writes its
//! results there, so a stage run on its own and the same stage inside `all`
//! see identical inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::device::{find_equilibria, inverter_vtc, InverterSide, TechnologyProfile};
use crate::dynamics::{powerup_outcome, simulate_powerup, NoiseModel, PowerUpConfig};
use crate::error::{Error, Result};
use crate::experiments::{
    classify_reliable, grid_shape, median, metric_overlap, noise_trials, repeatability_from_trials,
    response_length_study, select_cells, suv_probability_map, temperature_sweep, trial_key, MetricRecord,
    ResponseLengthPoint, SelectionMethod, SelectionResult, DEFAULT_SWEEP_CELSIUS, REFERENCE_CELSIUS,
};
use crate::metrics::{fit_wf, mf_records, overlap_threshold, pearson_correlation, sid_records, WeightFit};
use crate::report::{self, PowerUpRow, Table};
use crate::svg::{emit_figure, FigureKind, FigureSpec};
use crate::variability::{delta_n, delta_p, sample_population, Population};

/// Half-width of the MF overlap band reported for the silicon technology,
/// volts. Carried into reports for comparison only.
pub const REFERENCE_OVERLAP_HALF_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerUpSettings {
    pub ramp_time: f64,
    pub hold_time: f64,
    pub dt: f64,
    /// Defaults to half the nominal supply.
    pub decision_threshold: Option<f64>,
}

impl Default for PowerUpSettings {
    fn default() -> Self {
        PowerUpSettings {
            ramp_time: 2e-9,
            hold_time: 2e-9,
            dt: 5e-12,
            decision_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSettings {
    pub trials: usize,
    /// Noise σ in volts; ignored when `kt_over_c` is set.
    pub sigma: f64,
    /// Use √(k_B·T/C) instead of `sigma`.
    pub kt_over_c: bool,
    pub update_interval: f64,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        NoiseSettings {
            trials: 200,
            sigma: 8.5e-3,
            kt_over_c: false,
            update_interval: 100e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureSettings {
    pub sweep_celsius: Vec<f64>,
    pub reference_celsius: f64,
}

impl Default for TemperatureSettings {
    fn default() -> Self {
        TemperatureSettings {
            sweep_celsius: DEFAULT_SWEEP_CELSIUS.to_vec(),
            reference_celsius: REFERENCE_CELSIUS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WfFit {
    Fit,
}

/// `wf = "fit"` or a fixed number in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WfSource {
    Fit(WfFit),
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub wf: WfSource,
    pub sid_step: f64,
    pub overlap_target: f64,
    /// Relaxed repeat criterion max(p0, p1) >= q; off by default.
    pub soft_repeat_threshold: Option<f64>,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            wf: WfSource::Fit(WfFit::Fit),
            sid_step: 5e-3,
            overlap_target: 1.0,
            soft_repeat_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSettings {
    pub k: usize,
    pub response_lengths: Vec<usize>,
    pub random_seeds: Vec<u64>,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        SelectionSettings {
            k: 256,
            response_lengths: vec![128, 256, 512],
            random_seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    /// Write one JSON line per noisy trial.
    pub trial_log: bool,
    pub figures: bool,
    /// Cell whose butterfly curves, equilibria and trajectory are exported.
    pub example_cell: usize,
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings {
            trial_log: true,
            figures: true,
            example_cell: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Technology profile file; the built-in default when absent. Relative
    /// paths are resolved against the configuration file's directory.
    #[serde(default)]
    pub profile: Option<PathBuf>,
    pub population_size: usize,
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub powerup: PowerUpSettings,
    #[serde(default)]
    pub noise: NoiseSettings,
    #[serde(default)]
    pub temperature: TemperatureSettings,
    #[serde(default)]
    pub metrics: MetricSettings,
    #[serde(default)]
    pub selection: SelectionSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: None,
            population_size: 2000,
            master_seed: 2024,
            output_dir: default_output_dir(),
            powerup: PowerUpSettings::default(),
            noise: NoiseSettings::default(),
            temperature: TemperatureSettings::default(),
            metrics: MetricSettings::default(),
            selection: SelectionSettings::default(),
            output: OutputSettings::default(),
        }
    }
}

fn config_err(e: impl ToString) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(config_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(p), Some(dir)) = (&cfg.profile, path.parent()) {
            if p.is_relative() {
                cfg.profile = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn load_profile(&self) -> Result<TechnologyProfile> {
        match &self.profile {
            None => Ok(TechnologyProfile::default()),
            Some(p) => TechnologyProfile::load(p).map_err(|e| match e {
                Error::Config(m) => Error::Config(m),
                other => config_err(format!("profile {}: {other}", p.display())),
            }),
        }
    }

    /// Noise-free power-up configuration for `profile`.
    pub fn powerup_config(&self, profile: &TechnologyProfile) -> PowerUpConfig {
        let mut c = PowerUpConfig::new(profile);
        c.ramp_time = self.powerup.ramp_time;
        c.hold_time = self.powerup.hold_time;
        c.dt = self.powerup.dt;
        if let Some(t) = self.powerup.decision_threshold {
            c.decision_threshold = t;
        }
        c
    }

    pub fn noisy_config(&self, profile: &TechnologyProfile) -> PowerUpConfig {
        let mut c = self.powerup_config(profile);
        c.noise = Some(NoiseModel {
            sigma_override: (!self.noise.kt_over_c).then_some(self.noise.sigma),
            update_interval: self.noise.update_interval,
            stream_key: trial_key(self.master_seed, 0, 0),
        });
        c
    }

    /// Checks every field against its owning module's domain.
    pub fn validate(&self) -> Result<()> {
        let ok = |c: bool, m: &str| if c { Ok(()) } else { Err(config_err(m)) };
        let n = self.population_size;
        ok(n >= 1, "population_size must be >= 1")?;
        ok(self.noise.trials >= 1, "noise.trials must be >= 1")?;
        ok(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite(), "noise.sigma must be >= 0")?;
        ok(!self.temperature.sweep_celsius.is_empty(), "temperature.sweep_celsius is empty")?;
        ok(
            self.temperature
                .sweep_celsius
                .iter()
                .chain([&self.temperature.reference_celsius])
                .all(|t| t.is_finite() && *t > -273.15),
            "temperatures must lie above absolute zero",
        )?;
        if let WfSource::Fixed(w) = self.metrics.wf {
            ok((0.0..=1.0).contains(&w), "metrics.wf must lie in [0, 1]")?;
        }
        ok(self.metrics.sid_step > 0.0 && self.metrics.sid_step.is_finite(), "metrics.sid_step must be > 0")?;
        ok(
            self.metrics.overlap_target > 0.5 && self.metrics.overlap_target <= 1.0,
            "metrics.overlap_target must lie in (0.5, 1]",
        )?;
        if let Some(q) = self.metrics.soft_repeat_threshold {
            ok((0.5..=1.0).contains(&q), "metrics.soft_repeat_threshold must lie in [0.5, 1]")?;
        }
        let sel = &self.selection;
        ok(sel.k >= 1 && sel.k <= n, "selection.k must lie in [1, population_size]")?;
        ok(
            sel.response_lengths.iter().all(|&k| k >= 1 && k <= n),
            "selection.response_lengths must lie in [1, population_size]",
        )?;
        ok(self.output.example_cell < n, "output.example_cell must be a valid cell id")?;
        if let Some(p) = &self.profile {
            ok(p.is_file(), &format!("profile {} does not exist", p.display()))?;
        }
        let profile = self.load_profile()?;
        self.noisy_config(&profile).validate().map_err(config_err)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Sample,
    PowerUp,
    Metrics,
    Noise,
    TempSweep,
    Classify,
    Select,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Sample,
        Stage::PowerUp,
        Stage::Metrics,
        Stage::Noise,
        Stage::TempSweep,
        Stage::Classify,
        Stage::Select,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::PowerUp => "powerup",
            Stage::Metrics => "metrics",
            Stage::Noise => "noise",
            Stage::TempSweep => "tempsweep",
            Stage::Classify => "classify",
            Stage::Select => "select",
            Stage::Report => "report",
        }
    }
}

pub mod files {
    pub const POPULATION: &str = "population.csv";
    pub const POPULATION_SIDECAR: &str = "population.json";
    pub const BUTTERFLY: &str = "butterfly.csv";
    pub const EQUILIBRIA: &str = "equilibria.json";
    pub const TRAJECTORY: &str = "trajectory.csv";
    pub const POWERUP: &str = "powerup.csv";
    pub const WEIGHT_FIT: &str = "weight_fit.json";
    pub const OVERLAP: &str = "overlap.json";
    pub const METRICS: &str = "metrics.csv";
    pub const TRIALS: &str = "trials.jsonl";
    pub const REPEATABILITY: &str = "repeatability.csv";
    pub const P0_MAP: &str = "p0_map.csv";
    pub const TEMPERATURE: &str = "temperature.csv";
    pub const TEMPERATURE_FLIPS: &str = "temperature_flips.csv";
    pub const CLASSIFICATION: &str = "classification.csv";
    pub const SELECTION: &str = "selection.json";
    pub const RESPONSE_LENGTH: &str = "response_length.csv";
    pub const SCATTER: &str = "scatter.csv";
    pub const SUMMARY: &str = "summary.json";
    pub const FIGURES: &str = "figures.json";
    pub const MANIFEST: &str = "manifest.json";
}

/// Overlap threshold outcome; `threshold` is absent when the target accuracy
/// cannot be reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub wf: f64,
    pub target_accuracy: f64,
    pub threshold: Option<f64>,
    pub surviving_fraction: Option<f64>,
    pub accuracy: Option<f64>,
    pub max_achievable: Option<f64>,
    pub reference_half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub k: usize,
    pub selections: Vec<SelectionResult>,
    /// Shared fraction of the MF and SID selections at `k`.
    pub metric_overlap: f64,
    pub response_length: Vec<ResponseLengthPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub population_size: usize,
    pub master_seed: u64,
    pub wf: f64,
    pub wf_agreement_rate: f64,
    pub overlap_threshold: Option<f64>,
    pub reference_overlap_half_width: f64,
    /// Over cells with a defined SID axis.
    pub mf_sid_correlation: Option<f64>,
    pub sid_null_cells: usize,
    pub sid_saturated_cells: usize,
    pub deterministic_fraction: f64,
    pub noisy_cells_with_warnings: usize,
    pub temperature_affected_fraction: f64,
    pub median_abs_sid_flipped: Option<f64>,
    pub median_abs_sid_all: Option<f64>,
    pub median_abs_mf_flipped: Option<f64>,
    pub median_abs_mf_all: Option<f64>,
    pub reliable_fraction: f64,
    pub mean_abs_mf_reliable: Option<f64>,
    pub mean_abs_mf_unreliable: Option<f64>,
    pub mean_abs_sid_reliable: Option<f64>,
    pub mean_abs_sid_unreliable: Option<f64>,
    pub metric_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: Stage,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub complete: bool,
    pub stages: Vec<StageStatus>,
    pub files: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    written: Vec<String>,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Path for a new artifact, recorded for the manifest.
    fn emit(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.out.join(name)
    }

    fn population(&self) -> Result<Population> {
        report::read_population(&self.path(files::POPULATION), &self.path(files::POPULATION_SIDECAR))
    }
}

fn stage_sample(ctx: &mut Ctx) -> Result<()> {
    let profile = ctx.cfg.load_profile()?;
    let pop = sample_population(&profile, ctx.cfg.population_size, ctx.cfg.master_seed)?;
    let (c, s) = (ctx.emit(files::POPULATION), ctx.emit(files::POPULATION_SIDECAR));
    report::write_population(&c, &s, &pop)
}

fn stage_powerup(ctx: &mut Ctx) -> Result<()> {
    let pop = ctx.population()?;
    let p = &pop.profile;
    let cfg = ctx.cfg.powerup_config(p);
    let rows: Vec<PowerUpRow> = pop
        .cells
        .par_iter()
        .map(|c| {
            let o = powerup_outcome(p, c, &cfg)?;
            Ok(PowerUpRow {
                id: c.id,
                delta_n: delta_n(c),
                delta_p: delta_p(c),
                suv: o.suv,
                flip_vdd: o.flip_vdd,
            })
        })
        .collect::<Result<_>>()?;
    report::write_powerup(&ctx.emit(files::POWERUP), &rows)?;

    let cell = pop
        .cells
        .get(ctx.cfg.output.example_cell)
        .ok_or_else(|| config_err("output.example_cell is out of range"))?;
    let (vdd, temp) = (p.vdd_nominal, p.temp_nominal);
    let left = inverter_vtc(p, cell, InverterSide::L, vdd, temp, 121)?;
    let right = inverter_vtc(p, cell, InverterSide::R, vdd, temp, 121)?;
    report::write_butterfly(&ctx.emit(files::BUTTERFLY), &left, &right)?;
    report::write_json(&ctx.emit(files::EQUILIBRIA), &find_equilibria(p, cell, vdd, temp)?)?;
    let mut tcfg = cfg.clone();
    tcfg.stop_on_decision = false;
    tcfg.record_stride = 10;
    let (traj, _) = simulate_powerup(p, cell, &tcfg)?;
    report::write_trajectory(&ctx.emit(files::TRAJECTORY), &traj)
}

fn stage_metrics(ctx: &mut Ctx) -> Result<()> {
    let pop = ctx.population()?;
    let rows = report::read_powerup(&ctx.path(files::POWERUP))?;
    if rows.len() != pop.len() {
        return Err(Error::Input("power-up table does not match the population".into()));
    }
    let labels: Vec<_> = rows.iter().map(|r| r.suv).collect();
    let fit = match ctx.cfg.metrics.wf {
        WfSource::Fit(_) => fit_wf(&pop, &labels)?,
        WfSource::Fixed(wf) => WeightFit {
            wf,
            agreement_rate: crate::metrics::agreement_rate(&pop.cells, &labels, wf),
            population_size: pop.len(),
            grid_step: 0.0,
            labeled_cells: labels.iter().filter(|l| l.is_decided()).count(),
            warning: None,
        },
    };
    if let Some(w) = &fit.warning {
        log::warn!("{w}");
    }
    report::write_json(&ctx.emit(files::WEIGHT_FIT), &fit)?;

    let mf = mf_records(&pop, fit.wf);
    let target = ctx.cfg.metrics.overlap_target;
    let mut overlap = OverlapReport {
        wf: fit.wf,
        target_accuracy: target,
        threshold: None,
        surviving_fraction: None,
        accuracy: None,
        max_achievable: None,
        reference_half_width: REFERENCE_OVERLAP_HALF_WIDTH,
    };
    match overlap_threshold(&mf, &labels, target) {
        Ok(t) => {
            overlap.threshold = Some(t.threshold);
            overlap.surviving_fraction = Some(t.surviving_fraction);
            overlap.accuracy = Some(t.accuracy);
        }
        Err(Error::UnattainableAccuracy { max_achievable, .. }) => {
            log::warn!("overlap target {target} unattainable; best {max_achievable}");
            overlap.max_achievable = Some(max_achievable);
        }
        Err(e) => return Err(e),
    }
    report::write_json(&ctx.emit(files::OVERLAP), &overlap)?;

    let sid = sid_records(&pop, ctx.cfg.metrics.sid_step, &ctx.cfg.powerup_config(&pop.profile))?;
    report::write_metrics(&ctx.emit(files::METRICS), &mf, &sid)
}

fn stage_noise(ctx: &mut Ctx) -> Result<()> {
    let pop = ctx.population()?;
    let trials = noise_trials(&pop, ctx.cfg.noise.trials, &ctx.cfg.noisy_config(&pop.profile))?;
    if ctx.cfg.output.trial_log {
        report::write_trial_log(&ctx.emit(files::TRIALS), &trials)?;
    }
    let rep = repeatability_from_trials(&trials);
    report::write_repeatability(&ctx.emit(files::REPEATABILITY), &rep)?;
    let (rows, cols) = grid_shape(rep.len());
    report::write_probability_map(&ctx.emit(files::P0_MAP), &suv_probability_map(&rep, rows, cols)?)
}

fn stage_tempsweep(ctx: &mut Ctx) -> Result<()> {
    let pop = ctx.population()?;
    let t = &ctx.cfg.temperature;
    let sweep = temperature_sweep(
        &pop,
        &t.sweep_celsius,
        t.reference_celsius,
        &ctx.cfg.powerup_config(&pop.profile),
    )?;
    report::write_temperature(&ctx.emit(files::TEMPERATURE), &sweep.records)?;
    report::write_flip_fractions(&ctx.emit(files::TEMPERATURE_FLIPS), &sweep.per_temperature)
}

fn stage_classify(ctx: &mut Ctx) -> Result<()> {
    let (mf, sid) = report::read_metrics(&ctx.path(files::METRICS))?;
    let rep = report::read_repeatability(&ctx.path(files::REPEATABILITY))?;
    let temp = report::read_temperature(&ctx.path(files::TEMPERATURE))?;
    let recs = classify_reliable(&mf, &sid, &rep, &temp, ctx.cfg.metrics.soft_repeat_threshold)?;
    report::write_classification(&ctx.emit(files::CLASSIFICATION), &recs)
}

fn stage_select(ctx: &mut Ctx) -> Result<()> {
    let recs = report::read_classification(&ctx.path(files::CLASSIFICATION))?;
    let sel = &ctx.cfg.selection;
    let mf = select_cells(&recs, SelectionMethod::Mf, sel.k, 0)?;
    let sid = select_cells(&recs, SelectionMethod::Sid, sel.k, 0)?;
    let overlap = metric_overlap(&mf, &sid)?;
    let mut selections = vec![mf, sid];
    for &seed in &sel.random_seeds {
        selections.push(select_cells(&recs, SelectionMethod::Random, sel.k, seed)?);
    }
    let response_length = response_length_study(&recs, &sel.response_lengths)?;
    report::write_response_length(&ctx.emit(files::RESPONSE_LENGTH), &response_length)?;
    report::write_json(
        &ctx.emit(files::SELECTION),
        &SelectionReport {
            k: sel.k,
            selections,
            metric_overlap: overlap,
            response_length,
        },
    )
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn abs_where(recs: &[MetricRecord], f: impl Fn(&MetricRecord) -> f64, keep: impl Fn(&MetricRecord) -> bool) -> Vec<f64> {
    recs.iter().filter(|r| keep(r)).map(|r| f(r).abs()).collect()
}

/// The figure set, each bound to a table in the output directory.
pub fn figure_specs(cfg: &RunConfig) -> Vec<FigureSpec> {
    let fig = |kind, title: &str, table: &str, x: &str, y: Option<&str>, color: Option<&str>, xl: &str, yl: &str, file: &str| FigureSpec {
        kind,
        title: title.into(),
        table: table.into(),
        x: x.into(),
        y: y.map(String::from),
        color: color.map(String::from),
        x_label: xl.into(),
        y_label: yl.into(),
        file: file.into(),
    };
    vec![
        fig(
            FigureKind::Histogram { bin_width: 5e-3 },
            "Weighted mismatch factor",
            files::METRICS,
            "mf_weighted",
            None,
            None,
            "MF (V)",
            "cells",
            "figures/mf_histogram.svg",
        ),
        fig(
            FigureKind::Histogram {
                bin_width: cfg.metrics.sid_step,
            },
            "Separatrix intersection distance",
            files::METRICS,
            "sid",
            None,
            None,
            "SID (V)",
            "cells",
            "figures/sid_histogram.svg",
        ),
        fig(
            FigureKind::Scatter,
            "Pair mismatch by start-up value",
            files::SCATTER,
            "delta_n",
            Some("delta_p"),
            Some("suv"),
            "ΔN (V)",
            "ΔP (V)",
            "figures/dn_dp_scatter.svg",
        ),
        fig(
            FigureKind::Scatter,
            "MF against SID",
            files::SCATTER,
            "mf_weighted",
            Some("sid"),
            Some("suv"),
            "MF (V)",
            "SID (V)",
            "figures/mf_sid_scatter.svg",
        ),
        fig(
            FigureKind::Heatmap,
            "Probability of start-up value 0",
            files::P0_MAP,
            "col",
            Some("row"),
            Some("p0"),
            "column",
            "row",
            "figures/p0_heatmap.svg",
        ),
        fig(
            FigureKind::Bars,
            "Cells changing value against the reference temperature",
            files::TEMPERATURE_FLIPS,
            "temp_celsius",
            Some("flip_fraction"),
            None,
            "temperature (°C)",
            "fraction of cells",
            "figures/temperature_flips.svg",
        ),
        fig(
            FigureKind::Bars,
            "Reliable cells by response length",
            files::RESPONSE_LENGTH,
            "k",
            Some("reliable_fraction"),
            Some("method"),
            "selected cells k",
            "reliable fraction",
            "figures/response_length.svg",
        ),
    ]
}

fn stage_report(ctx: &mut Ctx) -> Result<()> {
    let pu = report::read_powerup(&ctx.path(files::POWERUP))?;
    let (mf, sid) = report::read_metrics(&ctx.path(files::METRICS))?;
    let rep = report::read_repeatability(&ctx.path(files::REPEATABILITY))?;
    let temp = report::read_temperature(&ctx.path(files::TEMPERATURE))?;
    let recs = report::read_classification(&ctx.path(files::CLASSIFICATION))?;
    let fit: WeightFit = report::read_json(&ctx.path(files::WEIGHT_FIT))?;
    let overlap: OverlapReport = report::read_json(&ctx.path(files::OVERLAP))?;
    let selection: SelectionReport = report::read_json(&ctx.path(files::SELECTION))?;
    let n = pu.len();
    if [mf.len(), rep.len(), temp.len(), recs.len()].iter().any(|&l| l != n) {
        return Err(Error::Input("stage tables cover different cell sets".into()));
    }

    report::write_csv(
        &ctx.emit(files::SCATTER),
        &["id", "delta_n", "delta_p", "mf_weighted", "sid", "suv"],
        pu.iter().zip(&mf).zip(&sid).map(|((p, m), s)| {
            vec![
                p.id.to_string(),
                report::fmt_f64(p.delta_n),
                report::fmt_f64(p.delta_p),
                report::fmt_f64(m.mf_weighted),
                report::fmt_f64(s.sid),
                p.suv.as_str().into(),
            ]
        }),
    )?;

    let defined: Vec<usize> = (0..n).filter(|&i| !sid[i].is_null()).collect();
    let xs: Vec<f64> = defined.iter().map(|&i| mf[i].mf_weighted).collect();
    let ys: Vec<f64> = defined.iter().map(|&i| sid[i].sid).collect();
    let mf_sid_correlation = pearson_correlation(&xs, &ys).ok();
    let flipped = |r: &MetricRecord| !temp[r.id].stable;
    let summary = Summary {
        population_size: n,
        master_seed: ctx.population()?.master_seed,
        wf: fit.wf,
        wf_agreement_rate: fit.agreement_rate,
        overlap_threshold: overlap.threshold,
        reference_overlap_half_width: REFERENCE_OVERLAP_HALF_WIDTH,
        mf_sid_correlation,
        sid_null_cells: n - defined.len(),
        sid_saturated_cells: sid.iter().filter(|s| s.saturated).count(),
        deterministic_fraction: rep.iter().filter(|r| r.always_repeats()).count() as f64 / n as f64,
        noisy_cells_with_warnings: rep.iter().filter(|r| r.warning.is_some()).count(),
        temperature_affected_fraction: temp.iter().filter(|t| !t.stable).count() as f64 / n as f64,
        median_abs_sid_flipped: median(&abs_where(&recs, |r| r.sid, flipped)),
        median_abs_sid_all: median(&abs_where(&recs, |r| r.sid, |_| true)),
        median_abs_mf_flipped: median(&abs_where(&recs, |r| r.mf_weighted, flipped)),
        median_abs_mf_all: median(&abs_where(&recs, |r| r.mf_weighted, |_| true)),
        reliable_fraction: recs.iter().filter(|r| r.reliable).count() as f64 / n as f64,
        mean_abs_mf_reliable: mean(&abs_where(&recs, |r| r.mf_weighted, |r| r.reliable)),
        mean_abs_mf_unreliable: mean(&abs_where(&recs, |r| r.mf_weighted, |r| !r.reliable)),
        mean_abs_sid_reliable: mean(&abs_where(&recs, |r| r.sid, |r| r.reliable)),
        mean_abs_sid_unreliable: mean(&abs_where(&recs, |r| r.sid, |r| !r.reliable)),
        metric_overlap: selection.metric_overlap,
    };
    report::write_json(&ctx.emit(files::SUMMARY), &summary)?;

    if ctx.cfg.output.figures {
        let specs = figure_specs(ctx.cfg);
        report::write_json(&ctx.emit(files::FIGURES), &specs)?;
        for spec in &specs {
            let table = Table::read(&ctx.path(&spec.table))?;
            let svg = emit_figure(spec, &table)?;
            report::write_text(&ctx.emit(&spec.file), &svg)?;
        }
    }
    Ok(())
}

fn run_stage(stage: Stage, ctx: &mut Ctx) -> Result<()> {
    match stage {
        Stage::Sample => stage_sample(ctx),
        Stage::PowerUp => stage_powerup(ctx),
        Stage::Metrics => stage_metrics(ctx),
        Stage::Noise => stage_noise(ctx),
        Stage::TempSweep => stage_tempsweep(ctx),
        Stage::Classify => stage_classify(ctx),
        Stage::Select => stage_select(ctx),
        Stage::Report => stage_report(ctx),
    }
}

fn finish_manifest(ctx: &Ctx, stages: Vec<StageStatus>, error: Option<String>) -> Result<Manifest> {
    let mut names = ctx.written.clone();
    names.sort();
    names.dedup();
    let files = names
        .into_iter()
        .filter(|n| ctx.path(n).is_file())
        .map(|n| {
            let (sha256, bytes) = sha256_file(&ctx.path(&n))?;
            Ok(ManifestEntry { path: n, sha256, bytes })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        complete: error.is_none(),
        stages,
        files,
        error,
    };
    report::write_json(&ctx.path(files::MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Runs `stages` in order on a pool of `workers` threads and writes
/// `manifest.json`. On failure the manifest lists what was written, is
/// marked incomplete, and the error names the stage.
pub fn run_stages(cfg: &RunConfig, stages: &[Stage], workers: usize) -> Result<Manifest> {
    cfg.validate()?;
    let out = cfg.output_dir.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| config_err(format!("thread pool: {e}")))?;
    let mut ctx = Ctx {
        cfg,
        out,
        written: Vec::new(),
    };
    let mut status = Vec::new();
    for &stage in stages {
        let t0 = Instant::now();
        log::info!("stage {} started", stage.name());
        match pool.install(|| run_stage(stage, &mut ctx)) {
            Ok(()) => {
                log::info!("stage {} finished in {:.1?}", stage.name(), t0.elapsed());
                status.push(StageStatus { stage, ok: true });
            }
            Err(e) => {
                status.push(StageStatus { stage, ok: false });
                let err = Error::Stage {
                    stage: stage.name(),
                    source: Box::new(e),
                };
                finish_manifest(&ctx, status, Some(err.to_string()))?;
                return Err(err);
            }
        }
    }
    finish_manifest(&ctx, status, None)
}

/// All stages in order.
pub fn run_pipeline(cfg: &RunConfig, workers: usize) -> Result<Manifest> {
    run_stages(cfg, &Stage::ALL, workers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(out: &Path) -> RunConfig {
        let mut c = RunConfig {
            population_size: 12,
            master_seed: 3,
            output_dir: out.to_path_buf(),
            ..RunConfig::default()
        };
        c.noise.trials = 5;
        c.selection.k = 4;
        c.selection.response_lengths = vec![2, 4, 8];
        c.temperature.sweep_celsius = vec![-40.0, 120.0];
        c
    }

    #[test]
    fn minimal_run_produces_all_tables() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_pipeline(&tiny(dir.path()), 1).unwrap();
        assert!(m.complete);
        assert_eq!(m.stages.len(), 8);
        let names: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
        for f in [
            files::POPULATION,
            files::METRICS,
            files::REPEATABILITY,
            files::TRIALS,
            files::TEMPERATURE,
            files::CLASSIFICATION,
            files::SELECTION,
            files::SUMMARY,
            "figures/p0_heatmap.svg",
        ] {
            assert!(names.contains(&f), "{f} missing from {names:?}");
        }
        let on_disk: Manifest = report::read_json(&dir.path().join(files::MANIFEST)).unwrap();
        assert_eq!(on_disk, m);
        let trials = fs::read_to_string(dir.path().join(files::TRIALS)).unwrap();
        assert_eq!(trials.lines().count(), 12 * 5);
    }

    #[test]
    fn stage_by_stage_equals_all() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let all = run_pipeline(&tiny(a.path()), 2).unwrap();
        let cfg = tiny(b.path());
        let mut files = Vec::new();
        for s in Stage::ALL {
            files.extend(run_stages(&cfg, &[s], 1).unwrap().files);
        }
        files.sort_by(|x, y| x.path.cmp(&y.path));
        assert_eq!(files, all.files);
    }

    #[test]
    fn missing_input_names_stage() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_stages(&tiny(dir.path()), &[Stage::Classify], 1).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "classify", .. }));
        assert!(err.is_io());
        let m: Manifest = report::read_json(&dir.path().join(files::MANIFEST)).unwrap();
        assert!(!m.complete);
        assert!(m.error.unwrap().contains("classify"));
    }

    #[test]
    fn config_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(dir.path());
        c.selection.k = 13;
        assert!(c.validate().unwrap_err().is_config());
        let mut c = tiny(dir.path());
        c.profile = Some(dir.path().join("nope.toml"));
        assert!(c.validate().unwrap_err().is_config());
        let mut c = tiny(dir.path());
        c.powerup.dt = 1e-9;
        assert!(c.validate().unwrap_err().is_config());
        assert!(RunConfig::from_toml_str("population_size = 3\nmaster_seed = 1\nbogus = 2\n").is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
        let c = RunConfig::from_toml_str("population_size = 10\nmaster_seed = 4\n[metrics]\nwf = 0.7\n").unwrap();
        assert_eq!(c.metrics.wf, WfSource::Fixed(0.7));
        assert_eq!(c.noise, NoiseSettings::default());
        let c = RunConfig::from_toml_str("population_size = 10\nmaster_seed = 4\n[metrics]\nwf = \"fit\"\n").unwrap();
        assert_eq!(c.metrics.wf, WfSource::Fit(WfFit::Fit));
    }
}
