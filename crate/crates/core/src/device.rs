//! Behavioral transistor model, the cross-coupled inverter pair of a 6T cell,
//! inverter transfer curves and static equilibrium analysis.
//!
//! Wiring convention used throughout the crate:
//!
//! * inverter R = {T1 pull-down NMOS, T3 pull-up PMOS}, input QB, drives Q;
//! * inverter L = {T0 pull-down NMOS, T2 pull-up PMOS}, input Q, drives QB.
//!
//! The access transistors are held off during power-up (WL = 0) and carry no
//! current, so they do not appear in the model. Under this wiring a positive
//! mismatch factor (weaker T3 and/or stronger T1) favours a start-up of Q = 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::StateVector;
use crate::error::{Error, Result};
use crate::roots::bracketed_root;
use crate::variability::CellSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransistorKind {
    Nmos,
    Pmos,
}

/// Per-type device parameters. Threshold voltages are stored as magnitudes;
/// PMOS devices are evaluated with source-referenced voltages (vsg, vsd).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransistorParams {
    pub kind: TransistorKind,
    /// |Vth| at the profile's nominal temperature, volts.
    pub vth_nominal: f64,
    /// Transconductance factor, A/V².
    pub beta: f64,
    /// Channel-length modulation, 1/V.
    pub lambda: f64,
    /// Subthreshold smoothing scale, volts. Below threshold the current
    /// falls as exp((vgs - vth) / subthreshold_slope).
    pub subthreshold_slope: f64,
    /// Reduction of |Vth| per kelvin above nominal temperature.
    pub vth_temp_coeff: f64,
    /// beta(T) = beta(T0) * (T / T0)^(-mobility_temp_exponent).
    pub mobility_temp_exponent: f64,
}

impl TransistorParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.vth_nominal,
            self.beta,
            self.lambda,
            self.subthreshold_slope,
            self.vth_temp_coeff,
            self.mobility_temp_exponent,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain(format!("{:?} parameters must be finite", self.kind)));
        }
        if self.vth_nominal <= 0.0 {
            return Err(Error::Domain(format!("{:?} vth_nominal must be > 0", self.kind)));
        }
        if self.beta <= 0.0 {
            return Err(Error::Domain(format!("{:?} beta must be > 0", self.kind)));
        }
        if self.lambda < 0.0 {
            return Err(Error::Domain(format!("{:?} lambda must be >= 0", self.kind)));
        }
        if self.subthreshold_slope <= 0.0 {
            return Err(Error::Domain(format!(
                "{:?} subthreshold_slope must be > 0",
                self.kind
            )));
        }
        if self.mobility_temp_exponent < 0.0 {
            return Err(Error::Domain(format!(
                "{:?} mobility_temp_exponent must be >= 0",
                self.kind
            )));
        }
        Ok(())
    }

    /// Evaluates the temperature model and applies a threshold deviation.
    pub fn instance(&self, dvth: f64, temp: f64, temp_nominal: f64) -> Device {
        let vth = self.vth_nominal + dvth - self.vth_temp_coeff * (temp - temp_nominal);
        let beta = self.beta * (temp / temp_nominal).powf(-self.mobility_temp_exponent);
        Device {
            vth,
            beta,
            lambda: self.lambda,
            two_s: 2.0 * self.subthreshold_slope,
        }
    }
}

/// A transistor with every parameter resolved for one temperature and one
/// threshold deviation. This is what the integrator evaluates in its inner loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Device {
    pub vth: f64,
    pub beta: f64,
    pub lambda: f64,
    two_s: f64,
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Device {
    /// Drain current for source-referenced gate and drain voltages.
    ///
    /// Forward and reverse channel charges are interpolated with a softplus of
    /// the gate overdrive, which reduces to the square law above threshold
    /// (triode and saturation) and to an exponential below it. Swapping source
    /// and drain negates the current, so negative `vds` is handled without a
    /// separate branch.
    #[inline]
    pub fn current(&self, vgs: f64, vds: f64) -> f64 {
        let of = self.two_s * softplus((vgs - self.vth) / self.two_s);
        let or = self.two_s * softplus((vgs - vds - self.vth) / self.two_s);
        0.5 * self.beta * (of * of - or * or) * (1.0 + self.lambda * vds.abs())
    }
}

/// Drain current of a device with nominal threshold at temperature `temp`.
///
/// NMOS: `vgs`, `vds` as usual. PMOS: pass the source-referenced magnitudes
/// `vsg`, `vsd`; the returned value is the source-to-drain current.
pub fn drain_current(
    params: &TransistorParams,
    vgs: f64,
    vds: f64,
    temp: f64,
    temp_nominal: f64,
) -> Result<f64> {
    if !(vgs.is_finite() && vds.is_finite() && temp.is_finite() && temp_nominal.is_finite()) {
        return Err(Error::Domain("drain_current inputs must be finite".into()));
    }
    if temp <= 0.0 || temp_nominal <= 0.0 {
        return Err(Error::Domain("temperature must be > 0 K".into()));
    }
    params.validate()?;
    Ok(params.instance(0.0, temp, temp_nominal).current(vgs, vds))
}

/// Nominal technology description. Loadable from a TOML key-value file; all
/// quantities are SI (volts, A/V², farads, kelvin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechnologyProfile {
    pub name: String,
    pub vdd_nominal: f64,
    pub nmos: TransistorParams,
    pub pmos: TransistorParams,
    pub sigma_vth_nmos: f64,
    pub sigma_vth_pmos: f64,
    /// Capacitance of each storage node, farads.
    pub node_capacitance: f64,
    /// Temperature at which `vth_nominal` and `beta` are specified, kelvin.
    pub temp_nominal: f64,
    /// Fraction of the node capacitance tied to the supply rail (PMOS drain
    /// junction to n-well), in [0, 1). Couples the supply slew into both nodes.
    #[serde(default)]
    pub supply_coupling: f64,
}

impl Default for TechnologyProfile {
    /// Generic 65 nm-class behavioral profile.
    fn default() -> Self {
        TechnologyProfile {
            name: "generic-65nm-behavioral".into(),
            vdd_nominal: 1.2,
            nmos: TransistorParams {
                kind: TransistorKind::Nmos,
                vth_nominal: 0.45,
                beta: 300e-6,
                lambda: 0.05,
                subthreshold_slope: 0.03,
                vth_temp_coeff: 1.0e-3,
                mobility_temp_exponent: 1.5,
            },
            pmos: TransistorParams {
                kind: TransistorKind::Pmos,
                vth_nominal: 0.42,
                beta: 150e-6,
                lambda: 0.05,
                subthreshold_slope: 0.03,
                vth_temp_coeff: 1.0e-3,
                mobility_temp_exponent: 1.5,
            },
            sigma_vth_nmos: 0.03,
            sigma_vth_pmos: 0.03,
            node_capacitance: 1e-15,
            temp_nominal: 300.15,
            supply_coupling: 0.45,
        }
    }
}

impl TechnologyProfile {
    pub fn validate(&self) -> Result<()> {
        self.nmos.validate()?;
        self.pmos.validate()?;
        if self.nmos.kind != TransistorKind::Nmos || self.pmos.kind != TransistorKind::Pmos {
            return Err(Error::Domain("nmos/pmos entries have the wrong kind".into()));
        }
        if !(self.vdd_nominal > 0.0 && self.vdd_nominal.is_finite()) {
            return Err(Error::Domain("vdd_nominal must be > 0".into()));
        }
        if !(self.sigma_vth_nmos >= 0.0 && self.sigma_vth_pmos >= 0.0) {
            return Err(Error::Domain("vth sigmas must be >= 0".into()));
        }
        if !(self.node_capacitance > 0.0 && self.node_capacitance.is_finite()) {
            return Err(Error::Domain("node_capacitance must be > 0".into()));
        }
        if !(self.temp_nominal > 0.0 && self.temp_nominal.is_finite()) {
            return Err(Error::Domain("temp_nominal must be > 0 K".into()));
        }
        if !(0.0..1.0).contains(&self.supply_coupling) {
            return Err(Error::Domain("supply_coupling must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: TechnologyProfile =
            toml::from_str(s).map_err(|e| Error::Config(format!("profile: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    /// Same profile with every temperature coefficient zeroed.
    pub fn temperature_independent(&self) -> Self {
        let mut p = self.clone();
        for t in [&mut p.nmos, &mut p.pmos] {
            t.vth_temp_coeff = 0.0;
            t.mobility_temp_exponent = 0.0;
        }
        p
    }

    /// Drain current of a nominal device of either type; see [`drain_current`].
    pub fn drain_current(&self, kind: TransistorKind, vgs: f64, vds: f64, temp: f64) -> Result<f64> {
        let params = match kind {
            TransistorKind::Nmos => &self.nmos,
            TransistorKind::Pmos => &self.pmos,
        };
        drain_current(params, vgs, vds, temp, self.temp_nominal)
    }

    /// Scale of current residuals accepted at an equilibrium: 1 fA per µA of
    /// the NMOS full-scale current at `vdd`, never below 1 fA.
    pub fn current_tolerance(&self, vdd: f64) -> f64 {
        1e-15 * (self.nmos.beta * vdd * vdd / 1e-6).max(1.0)
    }
}

/// The four inverter transistors of one cell, resolved at one temperature.
#[derive(Debug, Clone, Copy)]
pub struct CellDevices {
    /// T0..T3 in netlist order (T0, T1 NMOS; T2, T3 PMOS).
    pub t: [Device; 4],
    pub capacitance: f64,
    pub supply_coupling: f64,
}

impl CellDevices {
    pub fn new(profile: &TechnologyProfile, cell: &CellSample, temp: f64) -> Self {
        let tn = profile.temp_nominal;
        CellDevices {
            t: [
                profile.nmos.instance(cell.dvth[0], temp, tn),
                profile.nmos.instance(cell.dvth[1], temp, tn),
                profile.pmos.instance(cell.dvth[2], temp, tn),
                profile.pmos.instance(cell.dvth[3], temp, tn),
            ],
            capacitance: profile.node_capacitance,
            supply_coupling: profile.supply_coupling,
        }
    }

    /// Net current into Q (T3 pull-up minus T1 pull-down) with the inverter R
    /// gate at `gate`.
    #[inline]
    pub fn net_q(&self, vq: f64, gate: f64, vdd: f64) -> f64 {
        self.t[3].current(vdd - gate, vdd - vq) - self.t[1].current(gate, vq)
    }

    /// Net current into QB (T2 pull-up minus T0 pull-down) with the inverter L
    /// gate at `gate`.
    #[inline]
    pub fn net_qb(&self, vqb: f64, gate: f64, vdd: f64) -> f64 {
        self.t[2].current(vdd - gate, vdd - vqb) - self.t[0].current(gate, vqb)
    }

    fn net(&self, side: InverterSide, vout: f64, vin: f64, vdd: f64) -> f64 {
        match side {
            InverterSide::R => self.net_q(vout, vin, vdd),
            InverterSide::L => self.net_qb(vout, vin, vdd),
        }
    }

    /// Static output of one inverter for input `vin`.
    pub fn solve_vtc(&self, side: InverterSide, vin: f64, vdd: f64) -> Result<f64> {
        if vdd == 0.0 {
            return Ok(0.0);
        }
        bracketed_root(|v| self.net(side, v, vin, vdd), 0.0, vdd, 1e-14)
            .ok_or(Error::NoConvergence { vin })
    }

    fn jacobian(&self, p: StateVector, vdd: f64) -> [[f64; 2]; 2] {
        let h = 1e-6;
        let f = |q: f64, qb: f64| (self.net_q(q, qb, vdd), self.net_qb(qb, q, vdd));
        let (a_p, b_p) = f(p.vq + h, p.vqb);
        let (a_m, b_m) = f(p.vq - h, p.vqb);
        let (c_p, d_p) = f(p.vq, p.vqb + h);
        let (c_m, d_m) = f(p.vq, p.vqb - h);
        let k = 1.0 / (2.0 * h * self.capacitance);
        [
            [(a_p - a_m) * k, (c_p - c_m) * k],
            [(b_p - b_m) * k, (d_p - d_m) * k],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InverterSide {
    /// T0/T2, input Q, output QB.
    L,
    /// T1/T3, input QB, output Q.
    R,
}

/// Static transfer curve of one inverter as `(vin, vout)` pairs on a uniform
/// grid over `[0, vdd]`.
pub fn inverter_vtc(
    profile: &TechnologyProfile,
    cell: &CellSample,
    side: InverterSide,
    vdd: f64,
    temp: f64,
    n_points: usize,
) -> Result<Vec<(f64, f64)>> {
    if !(vdd > 0.0 && vdd.is_finite()) {
        return Err(Error::Domain("vdd must be > 0".into()));
    }
    if n_points < 3 {
        return Err(Error::Domain("n_points must be >= 3".into()));
    }
    let dev = CellDevices::new(profile, cell, temp);
    (0..n_points)
        .map(|i| {
            let vin = vdd * i as f64 / (n_points - 1) as f64;
            Ok((vin, dev.solve_vtc(side, vin, vdd)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Stable,
    Saddle,
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSet {
    /// Stable point with vq < vqb (logic 0). Equals `s1` when monostable.
    pub s0: StateVector,
    /// Stable point with vq > vqb (logic 1).
    pub s1: StateVector,
    pub metastable: Option<StateVector>,
    pub bistable: bool,
}

const EQ_SCAN_POINTS: usize = 256;

/// Intersections of the two transfer curves, classified by the Jacobian of
/// the two-node dynamics.
pub fn find_equilibria(
    profile: &TechnologyProfile,
    cell: &CellSample,
    vdd: f64,
    temp: f64,
) -> Result<EquilibriumSet> {
    if !(vdd >= 0.0 && vdd.is_finite()) {
        return Err(Error::Domain("vdd must be >= 0".into()));
    }
    if vdd == 0.0 {
        let z = StateVector::new(0.0, 0.0);
        return Ok(EquilibriumSet {
            s0: z,
            s1: z,
            metastable: None,
            bistable: false,
        });
    }
    let dev = CellDevices::new(profile, cell, temp);

    // Fixed points of the composed map vq -> f_R(f_L(vq)).
    let g = |vq: f64| -> Result<f64> {
        let vqb = dev.solve_vtc(InverterSide::L, vq, vdd)?;
        Ok(dev.solve_vtc(InverterSide::R, vqb, vdd)? - vq)
    };
    let grid: Vec<f64> = (0..=EQ_SCAN_POINTS)
        .map(|i| vdd * i as f64 / EQ_SCAN_POINTS as f64)
        .collect();
    let values = grid.iter().map(|&x| g(x)).collect::<Result<Vec<_>>>()?;

    let mut roots = Vec::new();
    for i in 0..EQ_SCAN_POINTS {
        let (a, b) = (values[i], values[i + 1]);
        if a == 0.0 {
            roots.push(grid[i]);
        } else if a.signum() != b.signum() && b != 0.0 {
            let r = bracketed_root(
                |x| g(x).unwrap_or(f64::NAN),
                grid[i],
                grid[i + 1],
                1e-14,
            )
            .ok_or(Error::NoConvergence { vin: grid[i] })?;
            roots.push(r);
        }
    }
    if values[EQ_SCAN_POINTS] == 0.0 {
        roots.push(vdd);
    }
    if roots.len() > 3 {
        return Err(Error::ModelIntegrity(format!(
            "{} transfer-curve intersections found (at most 3 expected)",
            roots.len()
        )));
    }

    let tol = profile.current_tolerance(vdd);
    let mut points = Vec::with_capacity(roots.len());
    for vq in roots {
        let vqb = dev.solve_vtc(InverterSide::L, vq, vdd)?;
        let p = StateVector::new(vq, vqb);
        let rq = dev.net_q(vq, vqb, vdd).abs();
        let rqb = dev.net_qb(vqb, vq, vdd).abs();
        if rq > tol || rqb > tol {
            return Err(Error::ModelIntegrity(format!(
                "equilibrium residual {:.3e} A exceeds {:.3e} A",
                rq.max(rqb),
                tol
            )));
        }
        let j = dev.jacobian(p, vdd);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let trace = j[0][0] + j[1][1];
        let stability = if det < 0.0 {
            Stability::Saddle
        } else if trace < 0.0 {
            Stability::Stable
        } else {
            Stability::Unstable
        };
        points.push((p, stability));
    }

    match points.as_slice() {
        [(p, _)] => Ok(EquilibriumSet {
            s0: *p,
            s1: *p,
            metastable: None,
            bistable: false,
        }),
        [(a, sa), (m, sm), (b, sb)] => {
            if *sa != Stability::Stable || *sb != Stability::Stable || *sm != Stability::Saddle {
                return Err(Error::ModelIntegrity(format!(
                    "unexpected stability pattern {sa:?}/{sm:?}/{sb:?}"
                )));
            }
            Ok(EquilibriumSet {
                s0: *a,
                s1: *b,
                metastable: Some(*m),
                bistable: true,
            })
        }
        // Two roots only at an exact tangency; treat as the onset of
        // bistability and keep the stable one.
        [(a, sa), (b, _)] => {
            let p = if *sa == Stability::Stable { *a } else { *b };
            Ok(EquilibriumSet {
                s0: p,
                s1: p,
                metastable: None,
                bistable: false,
            })
        }
        _ => Err(Error::ModelIntegrity("no equilibrium found".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> TechnologyProfile {
        TechnologyProfile::default()
    }

    fn t0() -> f64 {
        profile().temp_nominal
    }

    #[test]
    fn zero_bias_zero_current() {
        let p = profile();
        let i = drain_current(&p.nmos, 0.0, 0.0, t0(), t0()).unwrap();
        assert_eq!(i, 0.0);
    }

    #[test]
    fn cutoff_floor() {
        let p = profile();
        let vdd = p.vdd_nominal;
        let i = drain_current(&p.nmos, 0.0, vdd, t0(), t0()).unwrap();
        assert!(i > 0.0);
        assert!(i < 1e-9 * p.nmos.beta * vdd * vdd, "i = {i:e}");
    }

    #[test]
    fn saturation_matches_square_law() {
        let p = profile();
        // Oracle values evaluated directly from beta/2 (vgs - vth)^2 (1 + lambda vds).
        for &(vgs, vds) in &[(1.2, 1.2), (1.0, 1.1), (1.1, 1.2)] {
            let i = drain_current(&p.nmos, vgs, vds, t0(), t0()).unwrap();
            let ov: f64 = vgs - 0.45;
            let oracle = 0.5 * 300e-6 * ov * ov * (1.0 + 0.05 * vds);
            assert!(((i - oracle) / oracle).abs() < 5e-5, "{vgs} {vds}: {i:e} vs {oracle:e}");
        }
        // Frozen value for (1.2, 1.2): 0.5 * 3e-4 * 0.75^2 * 1.06
        let i = drain_current(&p.nmos, 1.2, 1.2, t0(), t0()).unwrap();
        assert!((i - 8.94375e-5).abs() < 1e-9);
    }

    #[test]
    fn reverse_bias_is_antisymmetric() {
        let p = profile();
        let d = p.nmos.instance(0.0, t0(), t0());
        for &(vgs, vds) in &[(0.8, 0.3), (0.2, 0.5), (1.2, 1.2)] {
            let fwd = d.current(vgs, vds);
            let rev = d.current(vgs - vds, -vds);
            assert!((fwd + rev).abs() <= 1e-15 * fwd.abs().max(1e-30) + 1e-25);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let p = profile();
        assert!(drain_current(&p.nmos, f64::NAN, 0.1, t0(), t0()).is_err());
        assert!(drain_current(&p.nmos, 0.5, 0.1, 0.0, t0()).is_err());
    }

    #[test]
    fn temperature_lowers_vth_and_beta() {
        let p = profile();
        let hot = p.nmos.instance(0.0, 400.15, t0());
        assert!((hot.vth - 0.35).abs() < 1e-12);
        assert!(hot.beta < p.nmos.beta);
    }

    #[test]
    fn vtc_endpoints_symmetric_cell() {
        let p = profile();
        let cell = CellSample::symmetric(0);
        let vdd = p.vdd_nominal;
        let curve = inverter_vtc(&p, &cell, InverterSide::R, vdd, t0(), 61).unwrap();
        assert!((curve[0].1 - vdd).abs() < 1e-6);
        assert!(curve.last().unwrap().1 < 1e-6);
        for w in curve.windows(2) {
            assert!(w[1].1 <= w[0].1, "non-monotone at vin {}", w[1].0);
            assert!((0.0..=vdd).contains(&w[1].1));
        }
    }

    fn switching_threshold(curve: &[(f64, f64)]) -> f64 {
        // vin where vout crosses vin
        let i = curve.iter().position(|&(vin, vout)| vout < vin).unwrap();
        let (x0, y0) = curve[i - 1];
        let (x1, y1) = curve[i];
        let d0 = y0 - x0;
        let d1 = y1 - x1;
        x0 + (x1 - x0) * d0 / (d0 - d1)
    }

    #[test]
    fn weak_pullup_shifts_switching_threshold_left() {
        let p = profile();
        let vdd = p.vdd_nominal;
        let sym = CellSample::symmetric(0);
        let weak = CellSample::new(1, [0.0, 0.0, 0.0, 0.05]);
        let a = inverter_vtc(&p, &sym, InverterSide::R, vdd, t0(), 241).unwrap();
        let b = inverter_vtc(&p, &weak, InverterSide::R, vdd, t0(), 241).unwrap();
        assert!(switching_threshold(&b) < switching_threshold(&a) - 1e-3);
    }

    #[test]
    fn symmetric_metastable_on_diagonal() {
        let p = profile();
        let eq = find_equilibria(&p, &CellSample::symmetric(0), p.vdd_nominal, t0()).unwrap();
        assert!(eq.bistable);
        let m = eq.metastable.unwrap();
        assert!((m.vq - m.vqb).abs() < 1e-9, "{m:?}");
        assert!(eq.s0.vq < eq.s0.vqb && eq.s1.vq > eq.s1.vqb);
        assert!(eq.s0.vq < 1e-3 && eq.s0.vqb > p.vdd_nominal - 1e-3);
    }

    #[test]
    fn dead_supply_single_equilibrium() {
        let p = profile();
        let eq = find_equilibria(&p, &CellSample::new(0, [0.02, -0.01, 0.03, 0.0]), 0.0, t0()).unwrap();
        assert!(!eq.bistable);
        assert_eq!(eq.s0, StateVector::new(0.0, 0.0));
        assert!(eq.metastable.is_none());
    }

    #[test]
    fn mismatched_metastable_displaced() {
        // Strong T1 (pull-down of Q) favours Q = 0: the basin of S0 grows and
        // the saddle is pushed toward the disfavoured state S1 (vq > vqb).
        let p = profile();
        let cell = CellSample::new(0, [0.0, -0.05, 0.0, 0.0]);
        let eq = find_equilibria(&p, &cell, p.vdd_nominal, t0()).unwrap();
        assert!(eq.bistable);
        let m = eq.metastable.unwrap();
        assert!(m.vq > m.vqb + 1e-3, "{m:?}");

        // Grid-scan oracle: the saddle sits where both node currents change
        // sign; locate the grid cell minimising the combined residual.
        let dev = CellDevices::new(&p, &cell, t0());
        let vdd = p.vdd_nominal;
        let n = 600;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=n {
            for j in 0..=n {
                let q = 0.3 + 0.6 * i as f64 / n as f64;
                let qb = 0.3 + 0.6 * j as f64 / n as f64;
                let r = dev.net_q(q, qb, vdd).abs() + dev.net_qb(qb, q, vdd).abs();
                if r < best.0 {
                    best = (r, q, qb);
                }
            }
        }
        assert!((best.1 - m.vq).abs() < 2e-3 && (best.2 - m.vqb).abs() < 2e-3);
    }

    #[test]
    fn bistability_lost_at_low_supply() {
        let p = profile();
        let cell = CellSample::new(0, [0.03, -0.02, 0.01, -0.04]);
        let eq = find_equilibria(&p, &cell, 0.02, t0()).unwrap();
        assert!(!eq.bistable);
        let eq = find_equilibria(&p, &cell, p.vdd_nominal, t0()).unwrap();
        assert!(eq.bistable);
    }

    #[test]
    fn profile_toml_round_trip() {
        let p = profile();
        let back = TechnologyProfile::from_toml_str(&p.to_toml_string()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn profile_rejects_bad_values() {
        let mut p = profile();
        p.node_capacitance = 0.0;
        assert!(TechnologyProfile::from_toml_str(&p.to_toml_string()).is_err());
    }
}
