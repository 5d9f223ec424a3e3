//! Two-node power-up dynamics of the cross-coupled latch.
//!
//! ```text
//! C dVq/dt  = I(T3; gate = QB) - I(T1; gate = QB) + k C dVdd/dt
//! C dVqb/dt = I(T2; gate = Q)  - I(T0; gate = Q)  + k C dVdd/dt
//! ```
//!
//! `k` is the profile's `supply_coupling`, the share of each node capacitance
//! that sits between the node and the supply rail. The supply ramps linearly from 0 to `vdd_final` over `ramp_time` and is
//! then held. Thermal noise is modelled as two zero-order-hold voltage
//! sources in series between each storage node and the gate input it drives.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::device::{CellDevices, TechnologyProfile};
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::variability::CellSample;
use crate::BOLTZMANN;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateVector {
    pub vq: f64,
    pub vqb: f64,
}

impl StateVector {
    pub const fn new(vq: f64, vqb: f64) -> Self {
        StateVector { vq, vqb }
    }

    pub fn swapped(self) -> Self {
        StateVector::new(self.vqb, self.vq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Fixed noise σ in volts; when `None` the kT/C value is used.
    pub sigma_override: Option<f64>,
    /// How long each random source value is held, seconds.
    pub update_interval: f64,
    pub stream_key: StreamKey,
}

impl NoiseModel {
    /// √(k_B·T/C), or the override.
    pub fn sigma(&self, temp: f64, capacitance: f64) -> f64 {
        match self.sigma_override {
            Some(s) => s,
            None => kt_over_c_sigma(temp, capacitance),
        }
    }

    pub fn with_key(mut self, key: StreamKey) -> Self {
        self.stream_key = key;
        self
    }
}

/// Thermal noise σ of a capacitive node.
pub fn kt_over_c_sigma(temp: f64, capacitance: f64) -> f64 {
    (BOLTZMANN * temp.max(0.0) / capacitance).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerUpConfig {
    pub vdd_final: f64,
    /// Linear ramp duration; 0 applies the full supply at t = 0.
    pub ramp_time: f64,
    /// Settling window after the ramp, seconds.
    pub hold_time: f64,
    pub dt: f64,
    /// Device temperature, kelvin.
    pub temp: f64,
    pub noise: Option<NoiseModel>,
    /// |vq - vqb| at which the start-up value counts as decided.
    pub decision_threshold: f64,
    pub initial: StateVector,
    /// End the run at the decision instant instead of integrating to the end
    /// of the hold window.
    pub stop_on_decision: bool,
    /// Record every n-th step in the trajectory; 0 records only the endpoints.
    pub record_stride: usize,
}

impl PowerUpConfig {
    /// Defaults: 1 ps step, 10 ns linear ramp, 10 ns hold, threshold vdd/2,
    /// nominal temperature, discharged nodes, noise off.
    pub fn new(profile: &TechnologyProfile) -> Self {
        let vdd = profile.vdd_nominal;
        PowerUpConfig {
            vdd_final: vdd,
            ramp_time: 10e-9,
            hold_time: 10e-9,
            dt: 1e-12,
            temp: profile.temp_nominal,
            noise: None,
            decision_threshold: vdd / 2.0,
            initial: StateVector::default(),
            stop_on_decision: true,
            record_stride: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |c: bool, m: &str| if c { Ok(()) } else { Err(Error::Domain(m.to_string())) };
        ok(self.vdd_final > 0.0 && self.vdd_final.is_finite(), "vdd_final must be > 0")?;
        ok(self.dt > 0.0 && self.dt.is_finite(), "dt must be > 0")?;
        ok(self.ramp_time >= 0.0 && self.ramp_time.is_finite(), "ramp_time must be >= 0")?;
        ok(self.hold_time >= 0.0 && self.hold_time.is_finite(), "hold_time must be >= 0")?;
        ok(self.ramp_time + self.hold_time > 0.0, "ramp_time + hold_time must be > 0")?;
        ok(self.temp > 0.0 && self.temp.is_finite(), "temp must be > 0 K")?;
        ok(
            self.decision_threshold > 0.0 && self.decision_threshold < self.vdd_final,
            "decision_threshold must lie in (0, vdd_final)",
        )?;
        ok(
            self.initial.vq.is_finite() && self.initial.vqb.is_finite(),
            "initial state must be finite",
        )?;
        if let Some(n) = &self.noise {
            ok(
                n.update_interval >= self.dt,
                "noise update_interval must be >= dt",
            )?;
            if let Some(s) = n.sigma_override {
                ok(s >= 0.0 && s.is_finite(), "noise sigma_override must be >= 0")?;
            }
        }
        Ok(())
    }

    #[inline]
    pub fn vdd_at(&self, t: f64) -> f64 {
        if self.ramp_time <= 0.0 || t >= self.ramp_time {
            self.vdd_final
        } else {
            self.vdd_final * t / self.ramp_time
        }
    }

    /// dVdd/dt at `t`.
    #[inline]
    pub fn slew_at(&self, t: f64) -> f64 {
        if self.ramp_time <= 0.0 || t >= self.ramp_time {
            0.0
        } else {
            self.vdd_final / self.ramp_time
        }
    }

    pub fn with_initial(mut self, initial: StateVector) -> Self {
        self.initial = initial;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Suv {
    Zero,
    One,
    Undecided,
}

impl Suv {
    pub fn is_decided(self) -> bool {
        self != Suv::Undecided
    }

    pub fn flipped(self) -> Suv {
        match self {
            Suv::Zero => Suv::One,
            Suv::One => Suv::Zero,
            Suv::Undecided => Suv::Undecided,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Suv::Zero => "0",
            Suv::One => "1",
            Suv::Undecided => "U",
        }
    }

    pub fn parse(s: &str) -> Option<Suv> {
        match s {
            "0" => Some(Suv::Zero),
            "1" => Some(Suv::One),
            "U" => Some(Suv::Undecided),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuvOutcome {
    pub suv: Suv,
    /// Supply level when |vq - vqb| first reached the decision threshold.
    pub flip_vdd: Option<f64>,
    pub flip_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub vdd: f64,
    pub vq: f64,
    pub vqb: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
}

/// Node time derivatives (V/s) for a cell at supply `vdd`.
pub fn derivative(
    profile: &TechnologyProfile,
    cell: &CellSample,
    state: StateVector,
    vdd: f64,
    temp: f64,
) -> Result<(f64, f64)> {
    if !(state.vq.is_finite() && state.vqb.is_finite()) {
        return Err(Error::NonFinite("state"));
    }
    if !(vdd >= 0.0 && vdd.is_finite()) {
        return Err(Error::Domain("vdd must be >= 0".into()));
    }
    let dev = CellDevices::new(profile, cell, temp);
    Ok(rates(&dev, state, vdd, 0.0, 0.0, 0.0))
}

#[inline]
fn rates(
    dev: &CellDevices,
    s: StateVector,
    vdd: f64,
    slew: f64,
    noise_q: f64,
    noise_qb: f64,
) -> (f64, f64) {
    let inv_c = 1.0 / dev.capacitance;
    let coupled = dev.supply_coupling * slew;
    (
        dev.net_q(s.vq, s.vqb + noise_qb, vdd) * inv_c + coupled,
        dev.net_qb(s.vqb, s.vq + noise_q, vdd) * inv_c + coupled,
    )
}

/// Integrates one power-up and records the trajectory at `cfg.record_stride`.
pub fn simulate_powerup(
    profile: &TechnologyProfile,
    cell: &CellSample,
    cfg: &PowerUpConfig,
) -> Result<(Trajectory, SuvOutcome)> {
    let mut traj = Trajectory::default();
    let stride = cfg.record_stride;
    let outcome = integrate(profile, cell, cfg, |step, t, vdd, s, last| {
        if step == 0 || last || (stride > 0 && step % stride == 0) {
            traj.samples.push(TrajectorySample {
                t,
                vdd,
                vq: s.vq,
                vqb: s.vqb,
            });
        }
    })?;
    Ok((traj, outcome))
}

/// Start-up value only; no trajectory is kept.
pub fn powerup_outcome(
    profile: &TechnologyProfile,
    cell: &CellSample,
    cfg: &PowerUpConfig,
) -> Result<SuvOutcome> {
    integrate(profile, cell, cfg, |_, _, _, _, _| {})
}

/// Free evolution at constant supply from an arbitrary initial state.
pub fn simulate_from_initial(
    profile: &TechnologyProfile,
    cell: &CellSample,
    initial: StateVector,
    cfg: &PowerUpConfig,
) -> Result<SuvOutcome> {
    let vdd = cfg.vdd_final;
    let inside = |v: f64| (0.0..=vdd).contains(&v);
    if !(inside(initial.vq) && inside(initial.vqb)) {
        return Err(Error::Domain("initial state must lie within [0, vdd]^2".into()));
    }
    let mut c = cfg.clone();
    c.ramp_time = 0.0;
    c.initial = initial;
    powerup_outcome(profile, cell, &c)
}

fn integrate<F>(
    profile: &TechnologyProfile,
    cell: &CellSample,
    cfg: &PowerUpConfig,
    mut observe: F,
) -> Result<SuvOutcome>
where
    F: FnMut(usize, f64, f64, StateVector, bool),
{
    cfg.validate()?;
    let dev = CellDevices::new(profile, cell, cfg.temp);
    let dt = cfg.dt;
    let n_steps = ((cfg.ramp_time + cfg.hold_time) / dt).ceil() as usize;
    let lo = -0.1 * cfg.vdd_final;
    let hi = 1.1 * cfg.vdd_final;

    let mut noise = cfg.noise.as_ref().map(|n| {
        let sigma = n.sigma(cfg.temp, profile.node_capacitance);
        let hold = ((n.update_interval / dt).round() as usize).max(1);
        (n.stream_key.rng(), sigma, hold)
    });
    let (mut nq, mut nqb) = (0.0, 0.0);

    let mut s = cfg.initial;
    observe(0, 0.0, cfg.vdd_at(0.0), s, n_steps == 0);

    let mut flip: Option<(f64, f64)> = None;
    let mut sep_before = (s.vq - s.vqb).abs();
    let mut step = 0;
    while step < n_steps {
        if let Some((rng, sigma, hold)) = noise.as_mut() {
            if step % *hold == 0 && *sigma > 0.0 {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                nq = *sigma * a;
                nqb = *sigma * b;
            }
        }

        let t = step as f64 * dt;
        let v0 = cfg.vdd_at(t);
        let vh = cfg.vdd_at(t + 0.5 * dt);
        let v1 = cfg.vdd_at(t + dt);
        let slew = cfg.slew_at(t + 0.5 * dt);
        let k1 = rates(&dev, s, v0, slew, nq, nqb);
        let s2 = StateVector::new(s.vq + 0.5 * dt * k1.0, s.vqb + 0.5 * dt * k1.1);
        let k2 = rates(&dev, s2, vh, slew, nq, nqb);
        let s3 = StateVector::new(s.vq + 0.5 * dt * k2.0, s.vqb + 0.5 * dt * k2.1);
        let k3 = rates(&dev, s3, vh, slew, nq, nqb);
        let s4 = StateVector::new(s.vq + dt * k3.0, s.vqb + dt * k3.1);
        let k4 = rates(&dev, s4, v1, slew, nq, nqb);
        s.vq += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        s.vqb += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);

        let prev_sep = sep_before;
        step += 1;
        let t = step as f64 * dt;
        if !(s.vq.is_finite() && s.vqb.is_finite())
            || s.vq < lo
            || s.vq > hi
            || s.vqb < lo
            || s.vqb > hi
        {
            return Err(Error::Unstable { t, dt });
        }
        if noise.is_some() {
            s.vq = s.vq.clamp(0.0, v1);
            s.vqb = s.vqb.clamp(0.0, v1);
        }

        let sep_now = (s.vq - s.vqb).abs();
        let decided_now = flip.is_none() && sep_now >= cfg.decision_threshold;
        if decided_now {
            // Crossing instant by linear interpolation within the step.
            let frac = ((cfg.decision_threshold - prev_sep) / (sep_now - prev_sep)).clamp(0.0, 1.0);
            let tc = t - dt + frac * dt;
            flip = Some((tc, cfg.vdd_at(tc)));
        }
        sep_before = sep_now;
        let last = step == n_steps || (decided_now && cfg.stop_on_decision);
        observe(step, t, v1, s, last);
        if last {
            break;
        }
    }

    let sep = s.vq - s.vqb;
    let suv = if flip.is_some() && sep.abs() >= cfg.decision_threshold {
        if sep < 0.0 {
            Suv::Zero
        } else {
            Suv::One
        }
    } else {
        Suv::Undecided
    };
    Ok(SuvOutcome {
        suv,
        flip_vdd: flip.map(|f| f.1),
        flip_time: flip.map(|f| f.0),
    })
}

/// `n` i.i.d. draws from the node noise distribution at `temp`.
pub fn sample_noise(model: &NoiseModel, temp: f64, profile: &TechnologyProfile, n: usize) -> Vec<f64> {
    let sigma = model.sigma(temp, profile.node_capacitance);
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    let mut rng = model.stream_key.rng();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;

    fn setup() -> (TechnologyProfile, PowerUpConfig) {
        let p = TechnologyProfile::default();
        let mut cfg = PowerUpConfig::new(&p);
        cfg.ramp_time = 2e-9;
        cfg.hold_time = 2e-9;
        cfg.dt = 2e-12;
        (p, cfg)
    }

    #[test]
    fn dead_circuit_has_zero_derivative() {
        let p = TechnologyProfile::default();
        let c = CellSample::new(0, [0.01, -0.02, 0.03, 0.0]);
        let d = derivative(&p, &c, StateVector::new(0.0, 0.0), 0.0, p.temp_nominal).unwrap();
        assert_eq!(d, (0.0, 0.0));
    }

    #[test]
    fn diagonal_symmetry() {
        let p = TechnologyProfile::default();
        let c = CellSample::symmetric(0);
        for v in [0.0, 0.2, 0.55, 1.0] {
            let d = derivative(&p, &c, StateVector::new(v, v), 1.2, p.temp_nominal).unwrap();
            assert_eq!(d.0, d.1);
        }
    }

    #[test]
    fn non_finite_state_rejected() {
        let p = TechnologyProfile::default();
        let r = derivative(&p, &CellSample::symmetric(0), StateVector::new(f64::NAN, 0.0), 1.2, 300.0);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn symmetric_cell_stays_undecided() {
        let (p, mut cfg) = setup();
        cfg.record_stride = 10;
        let (traj, out) = simulate_powerup(&p, &CellSample::symmetric(0), &cfg).unwrap();
        assert_eq!(out.suv, Suv::Undecided);
        assert!(out.flip_vdd.is_none());
        assert_eq!(traj.samples[0].t, 0.0);
        assert_eq!(traj.samples[0].vq, 0.0);
        for w in traj.samples.windows(2) {
            assert!(w[1].t > w[0].t);
        }
        for s in &traj.samples {
            assert!(s.vq >= -1e-9 && s.vq <= s.vdd + 1e-6, "{s:?}");
        }
    }

    #[test]
    fn tiny_q_skew_decides_one() {
        let (p, cfg) = setup();
        let cfg = cfg.with_initial(StateVector::new(1e-3, 0.0));
        let out = powerup_outcome(&p, &CellSample::symmetric(0), &cfg).unwrap();
        assert_eq!(out.suv, Suv::One);
        assert!(out.flip_vdd.unwrap() >= cfg.decision_threshold);
    }

    #[test]
    fn strong_t1_decides_zero() {
        let (p, cfg) = setup();
        let out = powerup_outcome(&p, &CellSample::new(0, [0.0, -0.05, 0.0, 0.0]), &cfg).unwrap();
        assert_eq!(out.suv, Suv::Zero);
    }

    #[test]
    fn from_stable_point_stays() {
        let (p, cfg) = setup();
        let cell = CellSample::new(0, [0.01, 0.0, -0.01, 0.02]);
        let eq = crate::device::find_equilibria(&p, &cell, cfg.vdd_final, cfg.temp).unwrap();
        // At S0 the separation already exceeds the threshold.
        let out = simulate_from_initial(&p, &cell, eq.s0, &cfg).unwrap();
        assert_eq!(out.suv, Suv::Zero);
        let out = simulate_from_initial(&p, &cell, eq.s1, &cfg).unwrap();
        assert_eq!(out.suv, Suv::One);
    }

    #[test]
    fn q_skewed_start_decides_one() {
        let (p, cfg) = setup();
        let out =
            simulate_from_initial(&p, &CellSample::symmetric(0), StateVector::new(0.6, 0.0), &cfg)
                .unwrap();
        assert_eq!(out.suv, Suv::One);
    }

    #[test]
    fn initial_outside_box_rejected() {
        let (p, cfg) = setup();
        let r = simulate_from_initial(&p, &CellSample::symmetric(0), StateVector::new(1.5, 0.0), &cfg);
        assert!(r.is_err());
    }

    #[test]
    fn unstable_step_reported() {
        let (p, mut cfg) = setup();
        cfg.dt = 2e-10;
        cfg.ramp_time = 0.0;
        cfg.hold_time = 1e-8;
        let r = powerup_outcome(&p, &CellSample::new(0, [0.0, -0.05, 0.0, 0.0]), &cfg);
        assert!(matches!(r, Err(Error::Unstable { .. })), "{r:?}");
    }

    #[test]
    fn noise_is_reproducible_per_key() {
        let (p, mut cfg) = setup();
        cfg.record_stride = 1;
        cfg.noise = Some(NoiseModel {
            sigma_override: Some(8.5e-3),
            update_interval: 10.0 * cfg.dt,
            stream_key: StreamKey::new(1, Purpose::Noise, 0, 0),
        });
        let cell = CellSample::symmetric(0);
        let (a, oa) = simulate_powerup(&p, &cell, &cfg).unwrap();
        let (b, ob) = simulate_powerup(&p, &cell, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        assert!(oa.suv.is_decided());
    }

    #[test]
    fn noise_sigma_limits() {
        let p = TechnologyProfile::default();
        let m = NoiseModel {
            sigma_override: None,
            update_interval: 1e-11,
            stream_key: StreamKey::new(0, Purpose::Noise, 0, 0),
        };
        assert!(sample_noise(&m, 0.0, &p, 100).iter().all(|&x| x == 0.0));
        // √(1.380649e-23 · 300 / 1e-15) = 2.0352e-3 V
        assert!((m.sigma(300.0, 1e-15) - 2.035_177e-3).abs() < 1e-8);
    }

    #[test]
    fn config_validation() {
        let (_, cfg) = setup();
        let mut bad = cfg.clone();
        bad.dt = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.decision_threshold = cfg.vdd_final;
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.noise = Some(NoiseModel {
            sigma_override: None,
            update_interval: bad.dt / 2.0,
            stream_key: StreamKey::new(0, Purpose::Noise, 0, 0),
        });
        assert!(bad.validate().is_err());
    }
}
