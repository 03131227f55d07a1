//! Monte Carlo sweeps and bound grids.
//!
//! Seeds: every trial draws its gain phases and noise from streams keyed by
//! `(sweep value, trial index)`, and the phase profile from a stream keyed
//! by nothing (per experiment) or by the same pair (per trial). Trials run on
//! the current rayon pool; results are reduced in trial order, so outputs do
//! not depend on the thread count.

use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::estimator::{toa_only_position, Estimator, EstimatorConfig};
use crate::fisher::{state_bounds, toa_only_peb, CrbReport};
use crate::geometry::{angle_diff, RisState, Scenario, Vec3};
use crate::harness::config::{Config, ContourConfig, ExperimentConfig, ProfilePolicy};
use crate::rng::{stream_rng, Stream};
use crate::signal::{random_phase_profile, simulate_observations, ChannelParams, PhaseProfile};
use crate::units::dbm_to_watts;

/// Progress sink: `(points done, points total)`.
pub type Progress<'a> = &'a (dyn Fn(usize, usize) + Sync);

pub fn no_progress(_: usize, _: usize) {}

/// Aggregated errors and matching bounds at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub trials: usize,
    pub failures: usize,
    /// More than the configured fraction of trials failed.
    pub flagged: bool,
    pub failure_reasons: BTreeMap<String, usize>,
    pub rmse_position_m: Option<f64>,
    pub rmse_position_coarse_m: Option<f64>,
    pub rmse_orientation_rad: Option<f64>,
    pub rmse_delay_s: Vec<Option<f64>>,
    pub rmse_omega0: Vec<Option<f64>>,
    pub rmse_omega1: Vec<Option<f64>>,
    pub peb_m: Option<f64>,
    pub oeb_rad: Option<f64>,
    pub teb_s: Vec<Option<f64>>,
    pub web0: Vec<Option<f64>>,
    pub web1: Vec<Option<f64>>,
    /// TOA-only multilateration from the pipeline's delay estimates.
    pub rmse_toa_only_m: Option<f64>,
    pub toa_only_failures: usize,
}

impl SweepPoint {
    pub fn position_ratio(&self) -> Option<f64> {
        Some(self.rmse_position_m? / self.peb_m?)
    }

    pub fn orientation_ratio(&self) -> Option<f64> {
        Some(self.rmse_orientation_rad? / self.oeb_rad?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TransmitPowerDbm,
    NumSubcarriers,
    NumReceivers,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmseReport {
    pub axis: SweepAxis,
    pub master_seed: u64,
    pub trials: usize,
    pub num_receivers: usize,
    pub points: Vec<SweepPoint>,
}

struct TrialErrors {
    pos: f64,
    pos_coarse: f64,
    alpha: f64,
    delay: Vec<f64>,
    w0: Vec<f64>,
    w1: Vec<f64>,
    toa_only: Option<std::result::Result<f64, String>>,
}

/// Bounds squared, so per-trial profiles can be averaged in the RMS sense.
struct BoundsSq {
    peb: f64,
    oeb: f64,
    teb: Vec<f64>,
    web0: Vec<f64>,
    web1: Vec<f64>,
}

impl BoundsSq {
    fn from_report(r: &CrbReport) -> Self {
        BoundsSq {
            peb: r.peb * r.peb,
            oeb: r.oeb * r.oeb,
            teb: r.rx.iter().map(|b| b.teb * b.teb).collect(),
            web0: r.rx.iter().map(|b| b.web0 * b.web0).collect(),
            web1: r.rx.iter().map(|b| b.web1 * b.web1).collect(),
        }
    }
}

fn error_kind(e: &Error) -> String {
    let s = format!("{e:?}");
    s.split(['(', ' ', '{']).next().unwrap_or("Error").to_string()
}

fn profile_for(sc: &Scenario, exp: &ExperimentConfig, keys: &[u64]) -> PhaseProfile {
    let keys: &[u64] = match exp.profile_policy {
        ProfilePolicy::PerExperiment => &[],
        ProfilePolicy::PerTrial => keys,
    };
    random_phase_profile(sc.num_elements(), sc.num_symbols, &mut stream_rng(exp.master_seed, Stream::Profile, keys))
}

fn run_trial(
    est: &Estimator,
    state: &RisState,
    exp: &ExperimentConfig,
    keys: &[u64],
    toa_only: bool,
) -> Result<TrialErrors> {
    let sc = &est.scenario;
    let ch = ChannelParams::draw(sc, state, &mut stream_rng(exp.master_seed, Stream::GainPhase, keys))?;
    let sigma2 = if exp.noise_free { 0.0 } else { sc.noise_variance() };
    let obs = simulate_observations(sc, &ch, &est.profile, sigma2, &mut stream_rng(exp.master_seed, Stream::Noise, keys))?;
    let out = est.run(&obs)?;
    let toa_only = toa_only.then(|| {
        toa_only_position(&out.delays(), sc)
            .map(|f| (f.position - state.position).norm_squared())
            .map_err(|e| error_kind(&e))
    });
    Ok(TrialErrors {
        pos: (out.refined.position - state.position).norm_squared(),
        pos_coarse: (out.coarse.position - state.position).norm_squared(),
        alpha: angle_diff(out.refined.alpha, state.alpha).powi(2),
        delay: out.toa.iter().zip(&ch.rx).map(|(t, r)| (t.delay - r.delay).powi(2)).collect(),
        w0: out.omega.iter().zip(&ch.rx).map(|(o, r)| (o.omega.w0 - r.omega.w0).powi(2)).collect(),
        w1: out.omega.iter().zip(&ch.rx).map(|(o, r)| (o.omega.w1 - r.omega.w1).powi(2)).collect(),
        toa_only,
    })
}

fn rms(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Runs `exp.trials` trials of the full pipeline at one configuration.
/// `key` identifies the sweep point in the seed derivation.
pub fn run_point(
    scenario: &Scenario,
    state: &RisState,
    est_cfg: &EstimatorConfig,
    exp: &ExperimentConfig,
    value: f64,
    key: u64,
    toa_only: bool,
) -> Result<SweepPoint> {
    let m = scenario.num_receivers();
    let shared = match exp.profile_policy {
        ProfilePolicy::PerExperiment => Some(Estimator::new(scenario.clone(), profile_for(scenario, exp, &[]), est_cfg.clone())?),
        ProfilePolicy::PerTrial => None,
    };
    let outcomes: Vec<(Result<TrialErrors>, Option<BoundsSq>)> = (0..exp.trials as u64)
        .into_par_iter()
        .map(|i| {
            let keys = [key, i];
            match &shared {
                Some(est) => (run_trial(est, state, exp, &keys, toa_only), None),
                None => {
                    let prof = profile_for(scenario, exp, &keys);
                    let bounds = state_bounds(scenario, state, &prof).ok().map(|r| BoundsSq::from_report(&r));
                    let res = Estimator::new(scenario.clone(), prof, est_cfg.clone())
                        .and_then(|est| run_trial(&est, state, exp, &keys, toa_only));
                    (res, bounds)
                }
            }
        })
        .collect();

    let mut failures = 0;
    let mut reasons = BTreeMap::new();
    let (mut pos, mut pos_c, mut alpha) = (0.0, 0.0, 0.0);
    let (mut delay, mut w0, mut w1) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let (mut toa_sum, mut toa_ok, mut toa_fail) = (0.0, 0, 0);
    for (res, _) in &outcomes {
        match res {
            Ok(t) => {
                pos += t.pos;
                pos_c += t.pos_coarse;
                alpha += t.alpha;
                for k in 0..m {
                    delay[k] += t.delay[k];
                    w0[k] += t.w0[k];
                    w1[k] += t.w1[k];
                }
                match &t.toa_only {
                    Some(Ok(e)) => {
                        toa_sum += e;
                        toa_ok += 1;
                    }
                    Some(Err(_)) => toa_fail += 1,
                    None => {}
                }
            }
            Err(e) => {
                failures += 1;
                *reasons.entry(error_kind(e)).or_insert(0) += 1;
            }
        }
    }
    let ok = exp.trials - failures;

    // Bound columns: exact for a shared profile, RMS over trials otherwise.
    let bounds: Option<BoundsSq> = match &shared {
        Some(est) => state_bounds(scenario, state, &est.profile).ok().map(|r| BoundsSq::from_report(&r)),
        None => {
            let all: Vec<&BoundsSq> = outcomes.iter().filter_map(|(_, b)| b.as_ref()).collect();
            (!all.is_empty()).then(|| {
                let n = all.len() as f64;
                let avg = |f: &dyn Fn(&BoundsSq) -> f64| all.iter().map(|b| f(b)).sum::<f64>() / n;
                BoundsSq {
                    peb: avg(&|b| b.peb),
                    oeb: avg(&|b| b.oeb),
                    teb: (0..m).map(|k| avg(&|b| b.teb[k])).collect(),
                    web0: (0..m).map(|k| avg(&|b| b.web0[k])).collect(),
                    web1: (0..m).map(|k| avg(&|b| b.web1[k])).collect(),
                }
            })
        }
    };
    let root = |v: f64| Some(v.sqrt());
    let per_rx = |v: Option<&Vec<f64>>| -> Vec<Option<f64>> {
        (0..m).map(|k| v.map(|v| v[k].sqrt())).collect()
    };
    Ok(SweepPoint {
        value,
        trials: exp.trials,
        failures,
        flagged: failures as f64 > exp.failure_flag_fraction * exp.trials as f64,
        failure_reasons: reasons,
        rmse_position_m: rms(pos, ok),
        rmse_position_coarse_m: rms(pos_c, ok),
        rmse_orientation_rad: rms(alpha, ok),
        rmse_delay_s: delay.iter().map(|s| rms(*s, ok)).collect(),
        rmse_omega0: w0.iter().map(|s| rms(*s, ok)).collect(),
        rmse_omega1: w1.iter().map(|s| rms(*s, ok)).collect(),
        peb_m: bounds.as_ref().and_then(|b| root(b.peb)),
        oeb_rad: bounds.as_ref().and_then(|b| root(b.oeb)),
        teb_s: per_rx(bounds.as_ref().map(|b| &b.teb)),
        web0: per_rx(bounds.as_ref().map(|b| &b.web0)),
        web1: per_rx(bounds.as_ref().map(|b| &b.web1)),
        rmse_toa_only_m: rms(toa_sum, toa_ok),
        toa_only_failures: toa_fail,
    })
}

/// RMSE and bounds versus per-subcarrier transmit power.
pub fn run_monte_carlo(cfg: &Config, progress: Progress) -> Result<RmseReport> {
    let (sc, st) = cfg.scenario.to_model()?;
    let exp = &cfg.experiment;
    let mut points = Vec::with_capacity(exp.powers_dbm.len());
    for (i, p) in exp.powers_dbm.iter().enumerate() {
        let s = sc.clone().with_transmit_power_dbm(*p);
        points.push(run_point(&s, &st, &cfg.estimator, exp, *p, p.to_bits(), false)?);
        progress(i + 1, exp.powers_dbm.len());
    }
    Ok(RmseReport { axis: SweepAxis::TransmitPowerDbm, master_seed: exp.master_seed, trials: exp.trials, num_receivers: sc.num_receivers(), points })
}

/// RMSE and bounds versus bandwidth `N_c Δf` at fixed `Δf`.
pub fn sweep_bandwidth(cfg: &Config, progress: Progress) -> Result<RmseReport> {
    let (sc, st) = cfg.scenario.to_model()?;
    let exp = &cfg.experiment;
    let base = sc.clone().with_transmit_power_dbm(exp.bandwidth_power_dbm);
    let mut points = Vec::with_capacity(exp.num_subcarriers.len());
    for (i, n) in exp.num_subcarriers.iter().enumerate() {
        let mut s = base.clone();
        s.num_subcarriers = *n;
        s.validate().map_err(|e| Error::Config(e.to_string()))?;
        // Keyed like the power sweep so N_c = 128 at the same power reproduces
        // that sweep's trials.
        let key = if *n == sc.num_subcarriers { exp.bandwidth_power_dbm.to_bits() } else { (*n as f64).to_bits() ^ 0x4e43 };
        points.push(run_point(&s, &st, &cfg.estimator, exp, *n as f64, key, false)?);
        progress(i + 1, exp.num_subcarriers.len());
    }
    Ok(RmseReport { axis: SweepAxis::NumSubcarriers, master_seed: exp.master_seed, trials: exp.trials, num_receivers: sc.num_receivers(), points })
}

/// `m` receivers equally spaced on a horizontal circle around the TX.
pub fn circle_layout(tx: &Vec3, m: usize, radius: f64) -> Vec<Vec3> {
    (0..m)
        .map(|i| {
            let a = TAU * i as f64 / m as f64;
            tx + Vec3::new(radius * a.cos(), radius * a.sin(), 0.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToaComparisonRow {
    pub num_receivers: usize,
    /// Full-model PEB; `None` when the state FIM is singular.
    pub peb_m: Option<f64>,
    /// TOA-only PEB; `None` when unidentifiable.
    pub peb_toa_only_m: Option<f64>,
    pub toa_only_identifiable: bool,
    pub monte_carlo: Option<SweepPoint>,
}

/// Full-model versus TOA-only bounds (and estimator RMSE when `trials > 0`)
/// over the receiver count on the circle layout.
pub fn compare_toa_only(cfg: &Config, with_monte_carlo: bool, progress: Progress) -> Result<Vec<ToaComparisonRow>> {
    let (sc, st) = cfg.scenario.to_model()?;
    let exp = &cfg.experiment;
    let prof = profile_for(&sc, exp, &[]);
    let mut rows = Vec::new();
    for (i, m) in exp.anchor_counts.iter().enumerate() {
        let mut s = sc.clone();
        s.anchors = circle_layout(&sc.tx, *m, exp.circle_radius_m);
        s.validate().map_err(|e| Error::Config(e.to_string()))?;
        let peb = state_bounds(&s, &st, &prof).ok().map(|r| r.peb);
        let toa = toa_only_peb(&s, &st, &prof).ok();
        let mc = if with_monte_carlo {
            Some(run_point(&s, &st, &cfg.estimator, exp, *m as f64, (*m as u64) ^ 0x4d52_5853, true)?)
        } else {
            None
        };
        rows.push(ToaComparisonRow {
            num_receivers: *m,
            peb_m: peb,
            peb_toa_only_m: toa,
            toa_only_identifiable: toa.is_some(),
            monte_carlo: mc,
        });
        progress(i + 1, exp.anchor_counts.len());
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContourCell {
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
    pub orientation_deg: f64,
    /// `None` marks a singular cell.
    pub peb_m: Option<f64>,
    pub oeb_rad: Option<f64>,
    pub singular: bool,
    pub reason: Option<String>,
}

impl ContourCell {
    pub fn peb_db(&self) -> Option<f64> {
        self.peb_m.map(|v| 10.0 * v.log10())
    }

    pub fn oeb_db(&self) -> Option<f64> {
        self.oeb_rad.map(|v| 10.0 * v.log10())
    }
}

fn linspace(r: [f64; 2], n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![r[0]];
    }
    (0..n).map(|i| r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64).collect()
}

/// PEB and OEB over an xy grid at fixed height, for one random profile.
/// Rows are ordered by orientation, then y, then x.
pub fn crb_contour(cfg: &Config) -> Result<Vec<ContourCell>> {
    let (sc, _) = cfg.scenario.to_model()?;
    let c: &ContourConfig = &cfg.experiment.contour;
    let mut s = sc.clone();
    s.anchors = c.rx_positions_m.iter().map(|a| Vec3::new(a[0], a[1], a[2])).collect();
    s.transmit_power = dbm_to_watts(c.transmit_power_dbm);
    s.validate().map_err(|e| Error::Config(e.to_string()))?;
    let prof = profile_for(&s, &cfg.experiment, &[]);
    let xs = linspace(c.x_range_m, c.nx);
    let ys = linspace(c.y_range_m, c.ny);
    let mut cells = Vec::with_capacity(c.orientations_deg.len() * ys.len() * xs.len());
    for a in &c.orientations_deg {
        for y in &ys {
            for x in &xs {
                cells.push((*a, *y, *x));
            }
        }
    }
    Ok(cells
        .par_iter()
        .map(|(a, y, x)| {
            let st = RisState::new(Vec3::new(*x, *y, c.z_m), a.to_radians());
            let r = st.check_nondegenerate(&s).and_then(|_| state_bounds(&s, &st, &prof));
            let (peb, oeb, reason) = match r {
                Ok(r) => (Some(r.peb), Some(r.oeb), None),
                Err(e) => (None, None, Some(e.to_string())),
            };
            ContourCell {
                x_m: *x,
                y_m: *y,
                z_m: c.z_m,
                orientation_deg: *a,
                peb_m: peb,
                oeb_rad: oeb,
                singular: peb.is_none(),
                reason,
            }
        })
        .collect())
}

/// One simulated trial with every intermediate estimate, for debugging.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationDump {
    pub truth: crate::harness::output::StateDump,
    pub true_delays_s: Vec<f64>,
    pub true_omegas: Vec<crate::geometry::SpatialFreqs>,
    pub noise_variance: f64,
    pub pipeline: crate::estimator::PipelineOutput,
    pub bounds: CrbReport,
}

pub fn simulate_once(cfg: &Config, trial: u64) -> Result<SimulationDump> {
    let (sc, st) = cfg.scenario.to_model()?;
    let exp = &cfg.experiment;
    let keys = [cfg.scenario.transmit_power_dbm.to_bits(), trial];
    let prof = profile_for(&sc, exp, &keys);
    let bounds = state_bounds(&sc, &st, &prof)?;
    let est = Estimator::new(sc.clone(), prof, cfg.estimator.clone())?;
    let ch = ChannelParams::draw(&sc, &st, &mut stream_rng(exp.master_seed, Stream::GainPhase, &keys))?;
    let sigma2 = if exp.noise_free { 0.0 } else { sc.noise_variance() };
    let obs = simulate_observations(&sc, &ch, &est.profile, sigma2, &mut stream_rng(exp.master_seed, Stream::Noise, &keys))?;
    let pipeline = est.run(&obs)?;
    Ok(SimulationDump {
        truth: crate::harness::output::StateDump::from(&st),
        true_delays_s: ch.rx.iter().map(|r| r.delay).collect(),
        true_omegas: ch.rx.iter().map(|r| r.omega).collect(),
        noise_variance: sigma2,
        pipeline,
        bounds,
    })
}
