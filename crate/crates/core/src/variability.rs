//! Monte Carlo populations of cells with independent Gaussian threshold
//! deviations on the four inverter transistors.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::TechnologyProfile;
use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamKey};

/// One Monte Carlo instance. `dvth[i]` is added to the threshold magnitude of
/// transistor Ti (T0, T1 NMOS pull-downs; T2, T3 PMOS pull-ups).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSample {
    pub id: usize,
    pub dvth: [f64; 4],
}

impl CellSample {
    pub fn new(id: usize, dvth: [f64; 4]) -> Self {
        CellSample { id, dvth }
    }

    pub fn symmetric(id: usize) -> Self {
        CellSample { id, dvth: [0.0; 4] }
    }

    /// Left/right mirror image: T0 <-> T1 and T2 <-> T3.
    pub fn mirrored(&self) -> Self {
        let [d0, d1, d2, d3] = self.dvth;
        CellSample {
            id: self.id,
            dvth: [d1, d0, d3, d2],
        }
    }

    /// True when both inverters are identical.
    pub fn is_symmetric(&self) -> bool {
        self.dvth[0] == self.dvth[1] && self.dvth[2] == self.dvth[3]
    }
}

/// NMOS-pair threshold difference Vth,1 - Vth,0.
pub fn delta_n(cell: &CellSample) -> f64 {
    cell.dvth[1] - cell.dvth[0]
}

/// PMOS-pair threshold difference |Vth,3| - |Vth,2|.
pub fn delta_p(cell: &CellSample) -> f64 {
    cell.dvth[3] - cell.dvth[2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub profile: TechnologyProfile,
    pub cells: Vec<CellSample>,
    pub master_seed: u64,
}

impl Population {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Checks that ids are exactly `0..n` in order and every device keeps a
    /// positive threshold.
    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.cells.iter().enumerate() {
            if c.id != i {
                return Err(Error::Input(format!("cell at position {i} has id {}", c.id)));
            }
            let vth = [
                self.profile.nmos.vth_nominal,
                self.profile.nmos.vth_nominal,
                self.profile.pmos.vth_nominal,
                self.profile.pmos.vth_nominal,
            ];
            if c.dvth.iter().zip(vth).any(|(d, v)| !d.is_finite() || v + d <= 0.0) {
                return Err(Error::Input(format!("cell {i} has a non-positive threshold")));
            }
        }
        Ok(())
    }
}

fn sample_cell(profile: &TechnologyProfile, id: usize, master_seed: u64) -> CellSample {
    let mut rng = StreamKey::new(master_seed, Purpose::Sampling, id as u64, 0).rng();
    let mut draw = |vth: f64, sigma: f64| -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        let normal = Normal::new(0.0, sigma).expect("sigma validated");
        loop {
            let d = normal.sample(&mut rng);
            if vth + d > 0.0 {
                return d;
            }
        }
    };
    let n = (profile.nmos.vth_nominal, profile.sigma_vth_nmos);
    let p = (profile.pmos.vth_nominal, profile.sigma_vth_pmos);
    let dvth = [draw(n.0, n.1), draw(n.0, n.1), draw(p.0, p.1), draw(p.0, p.1)];
    CellSample { id, dvth }
}

/// Draws `n` cells. Cell `i` depends only on `(master_seed, i)`, so the result
/// is independent of scheduling and a prefix of a larger population equals
/// the smaller population.
pub fn sample_population(profile: &TechnologyProfile, n: usize, master_seed: u64) -> Result<Population> {
    if n == 0 {
        return Err(Error::Domain("population size must be >= 1".into()));
    }
    profile.validate()?;
    let cells = (0..n)
        .into_par_iter()
        .map(|id| sample_cell(profile, id, master_seed))
        .collect();
    Ok(Population {
        profile: profile.clone(),
        cells,
        master_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_sigma_gives_symmetric_cell() {
        let p = TechnologyProfile {
            sigma_vth_nmos: 0.0,
            sigma_vth_pmos: 0.0,
            ..TechnologyProfile::default()
        };
        let pop = sample_population(&p, 1, 9).unwrap();
        assert!(pop.cells[0].is_symmetric());
        assert_eq!(pop.cells[0].dvth, [0.0; 4]);
    }

    #[test]
    fn deterministic() {
        let p = TechnologyProfile::default();
        let a = sample_population(&p, 64, 1234).unwrap();
        let b = sample_population(&p, 64, 1234).unwrap();
        assert_eq!(a, b);
        let c = sample_population(&p, 64, 1235).unwrap();
        assert_ne!(a.cells, c.cells);
    }

    #[test]
    fn prefix_stable() {
        let p = TechnologyProfile::default();
        let a = sample_population(&p, 10, 5).unwrap();
        let b = sample_population(&p, 30, 5).unwrap();
        assert_eq!(a.cells[..], b.cells[..10]);
    }

    #[test]
    fn rejects_empty() {
        assert!(sample_population(&TechnologyProfile::default(), 0, 1).is_err());
    }

    #[test]
    fn large_sample_statistics() {
        let p = TechnologyProfile::default();
        let n = 100_000;
        let pop = sample_population(&p, n, 42).unwrap();
        let col = |k: usize| pop.cells.iter().map(|c| c.dvth[k]).collect::<Vec<_>>();
        let cols: Vec<Vec<f64>> = (0..4).map(col).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let sd = |v: &[f64]| {
            let m = mean(v);
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        for c in &cols {
            assert!(mean(c).abs() < 3.0 * 0.03 / (n as f64).sqrt());
            assert!((sd(c) - 0.03).abs() / 0.03 < 0.01, "sd {}", sd(c));
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                let (mi, mj) = (mean(&cols[i]), mean(&cols[j]));
                let cov: f64 = cols[i]
                    .iter()
                    .zip(&cols[j])
                    .map(|(a, b)| (a - mi) * (b - mj))
                    .sum::<f64>()
                    / (n - 1) as f64;
                let r = cov / (sd(&cols[i]) * sd(&cols[j]));
                assert!(r.abs() < 0.02, "corr({i},{j}) = {r}");
            }
        }
    }

    #[test]
    fn delta_examples() {
        let c = CellSample::new(0, [-0.010, 0.020, 0.0, 0.050]);
        assert!((delta_n(&c) - 0.030).abs() < 1e-15);
        assert!((delta_p(&c) - 0.050).abs() < 1e-15);
        assert_eq!(delta_n(&CellSample::symmetric(0)), 0.0);
        assert_eq!(delta_p(&CellSample::symmetric(0)), 0.0);
    }

    proptest! {
        #[test]
        fn mirror_negates_deltas(d in proptest::array::uniform4(-0.1f64..0.1)) {
            let c = CellSample::new(3, d);
            prop_assert_eq!(delta_n(&c.mirrored()), -delta_n(&c));
            prop_assert_eq!(delta_p(&c.mirrored()), -delta_p(&c));
            prop_assert_eq!(c.mirrored().mirrored(), c);
        }
    }
}
