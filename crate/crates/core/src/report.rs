//! Table and JSON emission. Every float written to a text artifact goes
//! through [`fmt_f64`] (or [`to_json`]) so identical results hash identically
//! on every platform.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::device::TechnologyProfile;
use crate::dynamics::{Suv, Trajectory};
use crate::error::{Error, Result};
use crate::experiments::{
    FlipFraction, MetricRecord, RepeatabilityRecord, ResponseLengthPoint, TemperatureStability, TrialOutcome,
};
use crate::metrics::{Axis, MfRecord, Prediction, SidRecord};
use crate::variability::{CellSample, Population};

/// Nine significant digits in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.8e}")
}

/// `x` rounded to nine significant digits.
pub fn round_sig9(x: f64) -> f64 {
    if x.is_finite() {
        fmt_f64(x).parse().unwrap_or(x)
    } else {
        x
    }
}

fn round_json(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().and_then(|x| serde_json::Number::from_f64(round_sig9(x))) {
                *n = r;
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_json),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to nine significant digits and a
/// trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::Input(e.to_string()))?;
    round_json(&mut v);
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Input(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Table {
        path: path.into(),
        msg: e.to_string(),
    })
}

fn table_err(path: &Path, e: impl ToString) -> Error {
    Error::Table {
        path: path.into(),
        msg: e.to_string(),
    }
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).map_err(|e| table_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| table_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| table_err(path, e))?;
    write_text(path, &String::from_utf8(bytes).map_err(|e| table_err(path, e))?)
}

/// Reads a CSV whose header must equal `header` exactly.
pub fn read_csv<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        k => table_err(path, format!("{k:?}")),
    })?;
    let found = r.headers().map_err(|e| table_err(path, e))?;
    if found.iter().ne(header.iter().copied()) {
        return Err(table_err(
            path,
            format!("header {:?}, expected {:?}", found.iter().collect::<Vec<_>>(), header),
        ));
    }
    r.deserialize().map(|row| row.map_err(|e| table_err(path, e))).collect()
}

fn suv_from(path: &Path, s: &str) -> Result<Suv> {
    Suv::parse(s).ok_or_else(|| table_err(path, format!("bad start-up value {s:?}")))
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub const POPULATION_HEADER: [&str; 5] = ["id", "dvth0", "dvth1", "dvth2", "dvth3"];

/// Seed and profile stored beside a population table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSidecar {
    pub master_seed: u64,
    pub population_size: usize,
    pub profile: TechnologyProfile,
}

pub fn write_population(csv_path: &Path, sidecar_path: &Path, pop: &Population) -> Result<()> {
    write_csv(
        csv_path,
        &POPULATION_HEADER,
        pop.cells.iter().map(|c| {
            let mut row = vec![c.id.to_string()];
            row.extend(c.dvth.iter().map(|&d| fmt_f64(d)));
            row
        }),
    )?;
    write_json(
        sidecar_path,
        &PopulationSidecar {
            master_seed: pop.master_seed,
            population_size: pop.len(),
            profile: pop.profile.clone(),
        },
    )
}

pub fn read_population(csv_path: &Path, sidecar_path: &Path) -> Result<Population> {
    let side: PopulationSidecar = read_json(sidecar_path)?;
    let rows: Vec<(usize, f64, f64, f64, f64)> = read_csv(csv_path, &POPULATION_HEADER)?;
    let pop = Population {
        profile: side.profile,
        cells: rows
            .into_iter()
            .map(|(id, a, b, c, d)| CellSample::new(id, [a, b, c, d]))
            .collect(),
        master_seed: side.master_seed,
    };
    if pop.len() != side.population_size {
        return Err(table_err(csv_path, "row count disagrees with the sidecar"));
    }
    pop.profile.validate()?;
    pop.validate().map_err(|e| table_err(csv_path, e))?;
    Ok(pop)
}

/// Both transfer curves on a shared input grid.
pub fn write_butterfly(path: &Path, left: &[(f64, f64)], right: &[(f64, f64)]) -> Result<()> {
    if left.len() != right.len() {
        return Err(Error::Input("butterfly curves differ in length".into()));
    }
    write_csv(
        path,
        &["vin", "vout_L", "vout_R"],
        left.iter()
            .zip(right)
            .map(|(l, r)| vec![fmt_f64(l.0), fmt_f64(l.1), fmt_f64(r.1)]),
    )
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_csv(
        path,
        &["t", "vdd", "vq", "vqb"],
        traj.samples
            .iter()
            .map(|s| vec![fmt_f64(s.t), fmt_f64(s.vdd), fmt_f64(s.vq), fmt_f64(s.vqb)]),
    )
}

/// One JSON object per trial.
pub fn write_trial_log(path: &Path, trials: &[Vec<TrialOutcome>]) -> Result<()> {
    let mut out = String::new();
    for t in trials.iter().flatten() {
        let flip = t.flip_vdd.map(fmt_f64).unwrap_or_else(|| "null".into());
        out.push_str(&format!(
            "{{\"cell_id\":{},\"trial\":{},\"outcome\":\"{}\",\"flip_vdd\":{}}}\n",
            t.cell_id,
            t.trial,
            t.outcome.as_str(),
            flip
        ));
    }
    write_text(path, &out)
}

/// Noise-free start-up value of each cell with its mismatch components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerUpRow {
    pub id: usize,
    pub delta_n: f64,
    pub delta_p: f64,
    pub suv: Suv,
    pub flip_vdd: Option<f64>,
}

pub const POWERUP_HEADER: [&str; 5] = ["id", "delta_n", "delta_p", "suv", "flip_vdd"];

pub fn write_powerup(path: &Path, rows: &[PowerUpRow]) -> Result<()> {
    write_csv(
        path,
        &POWERUP_HEADER,
        rows.iter().map(|r| {
            vec![
                r.id.to_string(),
                fmt_f64(r.delta_n),
                fmt_f64(r.delta_p),
                r.suv.as_str().into(),
                opt(r.flip_vdd),
            ]
        }),
    )
}

pub fn read_powerup(path: &Path) -> Result<Vec<PowerUpRow>> {
    let rows: Vec<(usize, f64, f64, String, Option<f64>)> = read_csv(path, &POWERUP_HEADER)?;
    rows.into_iter()
        .map(|(id, delta_n, delta_p, suv, flip_vdd)| {
            Ok(PowerUpRow {
                id,
                delta_n,
                delta_p,
                suv: suv_from(path, &suv)?,
                flip_vdd,
            })
        })
        .collect()
}

pub const METRICS_HEADER: [&str; 6] = ["id", "mf_raw", "mf_weighted", "sid", "axis", "saturated"];

pub fn write_metrics(path: &Path, mf: &[MfRecord], sid: &[SidRecord]) -> Result<()> {
    if mf.len() != sid.len() {
        return Err(Error::Input("MF and SID tables differ in length".into()));
    }
    write_csv(
        path,
        &METRICS_HEADER,
        mf.iter().zip(sid).map(|(m, s)| {
            vec![
                m.id.to_string(),
                fmt_f64(m.mf_raw),
                fmt_f64(m.mf_weighted),
                fmt_f64(s.sid),
                s.axis.map(Axis::as_str).unwrap_or("").into(),
                s.saturated.to_string(),
            ]
        }),
    )
}

pub fn read_metrics(path: &Path) -> Result<(Vec<MfRecord>, Vec<SidRecord>)> {
    let rows: Vec<(usize, f64, f64, f64, String, bool)> = read_csv(path, &METRICS_HEADER)?;
    let mut mf = Vec::with_capacity(rows.len());
    let mut sid = Vec::with_capacity(rows.len());
    for (id, mf_raw, mf_weighted, s, axis, saturated) in rows {
        let axis = match axis.as_str() {
            "Q" => Some(Axis::Q),
            "QB" => Some(Axis::QB),
            "" => None,
            other => return Err(table_err(path, format!("bad axis {other:?}"))),
        };
        mf.push(MfRecord {
            id,
            mf_raw,
            mf_weighted,
            predicted_suv: Prediction::from_mf(mf_weighted),
        });
        sid.push(SidRecord {
            id,
            sid: s,
            axis,
            saturated,
        });
    }
    Ok((mf, sid))
}

pub const REPEATABILITY_HEADER: [&str; 6] = ["id", "trials", "zero_count", "undecided_count", "p0", "p1"];

pub fn write_repeatability(path: &Path, recs: &[RepeatabilityRecord]) -> Result<()> {
    write_csv(
        path,
        &REPEATABILITY_HEADER,
        recs.iter().map(|r| {
            vec![
                r.id.to_string(),
                r.trials.to_string(),
                r.zero_count.to_string(),
                r.undecided_count.to_string(),
                fmt_f64(r.p0),
                fmt_f64(r.p1),
            ]
        }),
    )
}

/// Rebuilds the records from their counts; p0 and p1 are recomputed.
pub fn read_repeatability(path: &Path) -> Result<Vec<RepeatabilityRecord>> {
    let rows: Vec<(usize, usize, usize, usize, f64, f64)> = read_csv(path, &REPEATABILITY_HEADER)?;
    rows.into_iter()
        .map(|(id, trials, zeros, undecided, _, _)| {
            if zeros + undecided > trials {
                return Err(table_err(path, format!("cell {id}: counts exceed trials")));
            }
            let decided = trials - undecided;
            let outcomes: Vec<Suv> = std::iter::repeat_n(Suv::Zero, zeros)
                .chain(std::iter::repeat_n(Suv::One, decided - zeros))
                .chain(std::iter::repeat_n(Suv::Undecided, undecided))
                .collect();
            Ok(RepeatabilityRecord::from_outcomes(id, &outcomes))
        })
        .collect()
}

pub const TEMPERATURE_HEADER: [&str; 4] = ["id", "reference_suv", "stable", "flips_celsius"];

pub fn write_temperature(path: &Path, recs: &[TemperatureStability]) -> Result<()> {
    write_csv(
        path,
        &TEMPERATURE_HEADER,
        recs.iter().map(|r| {
            vec![
                r.id.to_string(),
                r.reference_suv.as_str().into(),
                r.stable.to_string(),
                r.flips.iter().map(|&t| fmt_f64(t)).collect::<Vec<_>>().join(";"),
            ]
        }),
    )
}

pub fn read_temperature(path: &Path) -> Result<Vec<TemperatureStability>> {
    let rows: Vec<(usize, String, bool, String)> = read_csv(path, &TEMPERATURE_HEADER)?;
    rows.into_iter()
        .map(|(id, suv, stable, flips)| {
            let flips = flips
                .split(';')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|e| table_err(path, e)))
                .collect::<Result<Vec<_>>>()?;
            if stable != flips.is_empty() {
                return Err(table_err(path, format!("cell {id}: stable flag contradicts flips")));
            }
            Ok(TemperatureStability {
                id,
                reference_suv: suv_from(path, &suv)?,
                flips,
                stable,
            })
        })
        .collect()
}

pub fn write_flip_fractions(path: &Path, fractions: &[FlipFraction]) -> Result<()> {
    write_csv(
        path,
        &["temp_celsius", "flip_fraction"],
        fractions
            .iter()
            .map(|f| vec![fmt_f64(f.temp_celsius), fmt_f64(f.fraction)]),
    )
}

pub const CLASSIFICATION_HEADER: [&str; 7] =
    ["id", "mf_weighted", "sid", "p0", "always_repeat", "temp_stable", "reliable"];

pub fn write_classification(path: &Path, recs: &[MetricRecord]) -> Result<()> {
    write_csv(
        path,
        &CLASSIFICATION_HEADER,
        recs.iter().map(|r| {
            vec![
                r.id.to_string(),
                fmt_f64(r.mf_weighted),
                fmt_f64(r.sid),
                fmt_f64(r.p0),
                r.always_repeat.to_string(),
                r.temp_stable.to_string(),
                r.reliable.to_string(),
            ]
        }),
    )
}

pub fn read_classification(path: &Path) -> Result<Vec<MetricRecord>> {
    let rows: Vec<(usize, f64, f64, f64, bool, bool, bool)> = read_csv(path, &CLASSIFICATION_HEADER)?;
    Ok(rows
        .into_iter()
        .map(|(id, mf_weighted, sid, p0, always_repeat, temp_stable, reliable)| MetricRecord {
            id,
            mf_weighted,
            sid,
            p0,
            always_repeat,
            temp_stable,
            reliable,
        })
        .collect())
}

/// Long-form grid: one row per cell with its grid position.
pub fn write_probability_map(path: &Path, grid: &[Vec<f64>]) -> Result<()> {
    write_csv(
        path,
        &["row", "col", "p0"],
        grid.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(move |(j, &p)| vec![i.to_string(), j.to_string(), fmt_f64(p)])
        }),
    )
}

pub fn write_response_length(path: &Path, pts: &[ResponseLengthPoint]) -> Result<()> {
    write_csv(
        path,
        &["k", "method", "reliable_fraction"],
        pts.iter().flat_map(|p| {
            [
                vec![p.k.to_string(), "mf".into(), fmt_f64(p.mf_reliable_fraction)],
                vec![p.k.to_string(), "sid".into(), fmt_f64(p.sid_reliable_fraction)],
            ]
        }),
    )
}

/// A CSV held as strings, for figure bindings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| table_err(path, e))?;
        let headers = r.headers().map_err(|e| table_err(path, e))?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(|e| table_err(path, e)))
            .collect::<Result<_>>()?;
        Ok(Table { headers, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Figure(format!("table has no column {name:?}")))
    }

    pub fn strings(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        self.strings(name)?
            .into_iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Figure(format!("column {name:?} holds non-numeric {s:?}")))
            })
            .collect()
    }
}
