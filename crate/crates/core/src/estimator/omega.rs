//! Per-receiver spatial-frequency estimation from the delay-compensated,
//! subcarrier-collapsed observation `y^r = c · Γ b(ω) + noise`.
//!
//! The concentrated cost `‖y‖² − |cᴴy|² / ‖c‖²`, `c = Γ b(ω)`, is evaluated
//! on a uniform grid and the best cell is polished with bounded BFGS.
//! `‖Γ b‖² = bᴴ G b` with `G = ΓᴴΓ` only depends on element index
//! differences, so it is reduced once per phase profile to a
//! `(2K_r − 1) × (2K_c − 1)` difference array and tabulated on the grid.

use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::{Scenario, SpatialFreqs};
use crate::optim::{minimize, QuasiNewtonOptions};
use crate::signal::PhaseProfile;

/// Admissible spatial frequencies: `|ω_i| ≤ 2`.
pub const OMEGA_LIMIT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OmegaEstimate {
    pub omega: SpatialFreqs,
    /// `ĝ = cᴴ y / (‖c‖² N_c √P_t)`.
    pub gain: Complex64,
    /// Concentrated cost at `ω̂`, normalized by `‖y‖²`.
    pub cost: f64,
    pub converged: bool,
}

/// Profile-dependent tables for the spatial search.
#[derive(Debug, Clone)]
pub struct SpatialSearch {
    rows: usize,
    cols: usize,
    ratio: f64,
    grid: Vec<f64>,
    /// `D[(dr + K_r − 1)·(2K_c − 1) + dc + K_c − 1] = Σ_{k−l = (dr,dc)} G_kl`.
    diff: Vec<Complex64>,
    /// `‖Γ b(ω)‖²` on the grid, row-major over `(ω0, ω1)`.
    denom: Vec<f64>,
    /// Conjugated 1-D steering tables on the grid, `[i·K + n]`.
    conj_a0: Vec<Complex64>,
    conj_a1: Vec<Complex64>,
}

impl SpatialSearch {
    pub fn new(scenario: &Scenario, profile: &PhaseProfile, grid_step: f64) -> Result<Self> {
        if !(grid_step > 0.0 && grid_step <= OMEGA_LIMIT) {
            return Err(Error::InvalidArgument(format!("omega grid step {grid_step} must lie in (0, 2]")));
        }
        let (rows, cols) = (scenario.ris_rows, scenario.ris_cols);
        if profile.num_elements() != rows * cols {
            return Err(Error::InvalidArgument("phase profile does not match the RIS size".into()));
        }
        let ratio = scenario.element_spacing / scenario.wavelength;
        let n = (2.0 * OMEGA_LIMIT / grid_step).round() as usize;
        let grid: Vec<f64> = (0..=n).map(|i| -OMEGA_LIMIT + 2.0 * OMEGA_LIMIT * i as f64 / n as f64).collect();

        let gamma = &profile.gamma;
        let gram = gamma.adjoint() * gamma;
        let (dw, dh) = (2 * cols - 1, 2 * rows - 1);
        let mut diff = vec![Complex64::new(0.0, 0.0); dw * dh];
        for k in 0..rows * cols {
            let (rk, ck) = (k / cols, k % cols);
            for l in 0..rows * cols {
                let (rl, cl) = (l / cols, l % cols);
                let idx = (rk + rows - 1 - rl) * dw + (ck + cols - 1 - cl);
                diff[idx] += gram[(k, l)];
            }
        }

        let table = |len: usize| -> Vec<Complex64> {
            grid.iter()
                .flat_map(|w| (0..len).map(move |i| Complex64::from_polar(1.0, TAU * i as f64 * ratio * w)))
                .collect()
        };
        let conj_a0 = table(rows);
        let conj_a1 = table(cols);

        // bᴴGb = Σ D(dr, dc) exp(j2π(Δ/λ)(dr ω0 + dc ω1)).
        let g = grid.len();
        let mut denom = vec![0.0; g * g];
        let mut e = vec![Complex64::new(0.0, 0.0); dw];
        for (i, w0) in grid.iter().enumerate() {
            e.fill(Complex64::new(0.0, 0.0));
            for dr in 0..dh {
                let ph = Complex64::from_polar(1.0, TAU * ratio * (dr as f64 - (rows as f64 - 1.0)) * w0);
                for dc in 0..dw {
                    e[dc] += diff[dr * dw + dc] * ph;
                }
            }
            for (j, w1) in grid.iter().enumerate() {
                let mut acc = 0.0;
                for (dc, ev) in e.iter().enumerate() {
                    let ph = Complex64::from_polar(1.0, TAU * ratio * (dc as f64 - (cols as f64 - 1.0)) * w1);
                    acc += (ev * ph).re;
                }
                denom[i * g + j] = acc;
            }
        }
        Ok(SpatialSearch { rows, cols, ratio, grid, diff, denom, conj_a0, conj_a1 })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// `‖Γ b(ω)‖²` at an arbitrary `ω` via the difference array.
    pub fn response_energy(&self, w: SpatialFreqs) -> f64 {
        let (dw, dh) = (2 * self.cols - 1, 2 * self.rows - 1);
        let mut acc = 0.0;
        for dr in 0..dh {
            let a = (dr as f64 - (self.rows as f64 - 1.0)) * w.w0;
            for dc in 0..dw {
                let ph = Complex64::from_polar(1.0, TAU * self.ratio * (a + (dc as f64 - (self.cols as f64 - 1.0)) * w.w1));
                acc += (self.diff[dr * dw + dc] * ph).re;
            }
        }
        acc
    }

    /// `b(ω)ᴴ z` for `z = Γᴴ y`.
    fn correlate(&self, z: &[Complex64], w: SpatialFreqs) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        let s0 = Complex64::from_polar(1.0, TAU * self.ratio * w.w0);
        let s1 = Complex64::from_polar(1.0, TAU * self.ratio * w.w1);
        let mut p0 = Complex64::new(1.0, 0.0);
        for r in 0..self.rows {
            let mut row = Complex64::new(0.0, 0.0);
            let mut p1 = Complex64::new(1.0, 0.0);
            for c in 0..self.cols {
                row += p1 * z[r * self.cols + c];
                p1 *= s1;
            }
            acc += p0 * row;
            p0 *= s0;
        }
        acc
    }

    /// Concentrated cost on the full grid, row-major over `(ω0, ω1)`.
    pub fn grid_cost(&self, z: &[Complex64], energy: f64) -> Vec<f64> {
        let g = self.grid.len();
        let (rows, cols) = (self.rows, self.cols);
        // U[i][c] = Σ_r conj(a0_r(ω0_i)) z[r, c]
        let mut u = vec![Complex64::new(0.0, 0.0); g * cols];
        for i in 0..g {
            let a0 = &self.conj_a0[i * rows..(i + 1) * rows];
            for (r, av) in a0.iter().enumerate() {
                for c in 0..cols {
                    u[i * cols + c] += av * z[r * cols + c];
                }
            }
        }
        let mut out = vec![0.0; g * g];
        for i in 0..g {
            let ui = &u[i * cols..(i + 1) * cols];
            for j in 0..g {
                let a1 = &self.conj_a1[j * cols..(j + 1) * cols];
                let num: Complex64 = ui.iter().zip(a1).map(|(x, y)| x * y).sum();
                let den = self.denom[i * g + j];
                out[i * g + j] = if den > 0.0 { energy - num.norm_sqr() / den } else { energy };
            }
        }
        out
    }

    fn cost_at(&self, z: &[Complex64], energy: f64, w: SpatialFreqs) -> (f64, Complex64, f64) {
        let num = self.correlate(z, w);
        let den = self.response_energy(w);
        if den > 0.0 {
            (energy - num.norm_sqr() / den, num, den)
        } else {
            (energy, num, den)
        }
    }
}

/// Estimates `ω̂` and `ĝ` for one receiver from `y^r` (length `T`).
pub fn estimate_omega(
    y: &[Complex64],
    profile: &PhaseProfile,
    search: &SpatialSearch,
    scenario: &Scenario,
    opts: &QuasiNewtonOptions,
) -> Result<OmegaEstimate> {
    let energy: f64 = y.iter().map(|v| v.norm_sqr()).sum();
    if energy == 0.0 {
        return Err(Error::ZeroObservation);
    }
    let z = profile.adjoint_apply(y);
    let cost = search.grid_cost(&z, energy);
    let (lo, hi) = cost.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
    if hi - lo <= 1e-12 * energy {
        return Err(Error::FlatSpatialCost);
    }
    let g = search.grid.len();
    let best = cost.iter().enumerate().fold(0, |b, (i, v)| if *v < cost[b] { i } else { b });
    let start = [search.grid[best / g], search.grid[best % g]];

    let opts = opts.clone().with_bounds(vec![-OMEGA_LIMIT; 2], vec![OMEGA_LIMIT; 2]);
    let res = minimize(
        |x| search.cost_at(&z, energy, SpatialFreqs::new(x[0], x[1])).0 / energy,
        &start,
        &opts,
    );
    let omega = SpatialFreqs::new(res.x[0], res.x[1]);
    let (c, num, den) = search.cost_at(&z, energy, omega);
    let scale = scenario.num_subcarriers as f64 * scenario.transmit_power.sqrt();
    // cᴴy with c = Γb equals bᴴ(Γᴴy) = num.
    let gain = if den > 0.0 { num / (den * scale) } else { Complex64::new(0.0, 0.0) };
    Ok(OmegaEstimate { omega, gain, cost: c / energy, converged: res.converged() })
}
