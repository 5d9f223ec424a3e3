//! Independent oracles shared by the integration suites. They drive the
//! dynamics directly and never call the metric implementations they check.

#![allow(dead_code)]

use std::collections::VecDeque;

use srampuf_core::dynamics::powerup_outcome;
use srampuf_core::{CellSample, PowerUpConfig, StateVector, Suv, TechnologyProfile};

/// Search and grid configuration used throughout the suites.
pub fn fast_cfg(p: &TechnologyProfile) -> PowerUpConfig {
    let mut cfg = PowerUpConfig::new(p);
    cfg.ramp_time = 2e-9;
    cfg.hold_time = 2e-9;
    cfg.dt = 5e-12;
    cfg
}

pub fn outcome_at(p: &TechnologyProfile, cell: &CellSample, cfg: &PowerUpConfig, vq: f64, vqb: f64) -> Suv {
    let mut c = cfg.clone();
    c.initial = StateVector::new(vq, vqb);
    powerup_outcome(p, cell, &c).expect("power-up").suv
}

/// Result of bisecting the separatrix crossing on one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crossing {
    /// Signed crossing voltage: positive on the Q axis, negative on QB.
    At(f64),
    /// The discharged start's value survives a skew of vdd/2.
    Beyond { on_q_axis: bool },
    /// The discharged start does not decide.
    Null,
}

/// Bisection to `tol` of the first skew on the disfavoured axis that flips
/// the discharged start's outcome. A '0' tendency is probed along Q, a '1'
/// tendency along QB.
pub fn bisect_crossing(p: &TechnologyProfile, cell: &CellSample, cfg: &PowerUpConfig, tol: f64) -> Crossing {
    let reference = outcome_at(p, cell, cfg, 0.0, 0.0);
    let on_q_axis = match reference {
        Suv::Zero => true,
        Suv::One => false,
        Suv::Undecided => return Crossing::Null,
    };
    let probe = |v: f64| {
        if on_q_axis {
            outcome_at(p, cell, cfg, v, 0.0)
        } else {
            outcome_at(p, cell, cfg, 0.0, v)
        }
    };
    let half = cfg.vdd_final / 2.0;
    if probe(half) == reference {
        return Crossing::Beyond { on_q_axis };
    }
    let (mut lo, mut hi) = (0.0, half);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if probe(mid) == reference {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Crossing::At(if on_q_axis { hi } else { -hi })
}

/// Outcomes on an n×n grid over [0, vdd]²; `grid[j][i]` starts from
/// (vq, vqb) = (i·h, j·h) with h = vdd/(n-1).
pub fn basin_grid(p: &TechnologyProfile, cell: &CellSample, cfg: &PowerUpConfig, n: usize) -> Vec<Vec<Suv>> {
    let h = cfg.vdd_final / (n - 1) as f64;
    (0..n)
        .map(|j| (0..n).map(|i| outcome_at(p, cell, cfg, i as f64 * h, j as f64 * h)).collect())
        .collect()
}

/// Number of 4-connected regions of equal outcome.
pub fn region_count(grid: &[Vec<Suv>]) -> usize {
    let (rows, cols) = (grid.len(), grid[0].len());
    let mut seen = vec![vec![false; cols]; rows];
    let mut regions = 0;
    for r in 0..rows {
        for c in 0..cols {
            if seen[r][c] {
                continue;
            }
            regions += 1;
            let label = grid[r][c];
            let mut queue = VecDeque::from([(r, c)]);
            seen[r][c] = true;
            while let Some((y, x)) = queue.pop_front() {
                let mut visit = |yy: usize, xx: usize| {
                    if !seen[yy][xx] && grid[yy][xx] == label {
                        seen[yy][xx] = true;
                        queue.push_back((yy, xx));
                    }
                };
                if y > 0 {
                    visit(y - 1, x);
                }
                if y + 1 < rows {
                    visit(y + 1, x);
                }
                if x > 0 {
                    visit(y, x - 1);
                }
                if x + 1 < cols {
                    visit(y, x + 1);
                }
            }
        }
    }
    regions
}

/// Interval `[a, b]` of axis voltage within which the grid's outcome first
/// changes when walking out along the Q axis (`on_q_axis`) or the QB axis.
pub fn grid_axis_boundary(grid: &[Vec<Suv>], h: f64, on_q_axis: bool) -> Option<(f64, f64)> {
    let along: Vec<Suv> = if on_q_axis {
        grid[0].clone()
    } else {
        grid.iter().map(|row| row[0]).collect()
    };
    (1..along.len())
        .find(|&k| along[k] != along[0])
        .map(|k| ((k - 1) as f64 * h, k as f64 * h))
}

/// Binomial interval half-width at 99% for p = 0.5.
pub fn binomial_99_half_width(n: usize) -> f64 {
    2.5758 * (0.25 / n as f64).sqrt()
}
